//! Global adaptive Gauss–Kronrod (7/15) integration.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("quadrature did not converge: error estimate {error:e} above tolerance {tol:e}")]
pub struct QuadratureError {
    pub error: f64,
    pub tol: f64,
}

/// Result of an integration with its absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

const MAX_INTERVALS: usize = 4000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    Estimate {
        value: k * h,
        error: ((k - g) * h).abs(),
    }
}

/// `∫_a^b f` to absolute tolerance `tol`. Reversed bounds give the exact negation.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<Estimate, QuadratureError> {
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    if b < a {
        return integrate(f, b, a, tol).map(|e| Estimate {
            value: -e.value,
            error: e.error,
        });
    }

    let mut parts = vec![(a, b, kronrod(&mut f, a, b))];
    loop {
        let value: f64 = parts.iter().map(|p| p.2.value).sum();
        let error: f64 = parts.iter().map(|p| p.2.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(QuadratureError { error, tol });
        }
        // the relative floor keeps large integrals from chasing round-off
        if error <= tol.max(4.0 * f64::EPSILON * value.abs()) {
            return Ok(Estimate { value, error });
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(QuadratureError { error, tol });
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(QuadratureError { error, tol });
        }
        parts.push((lo, mid, kronrod(&mut f, lo, mid)));
        parts.push((mid, hi, kronrod(&mut f, mid, hi)));
    }
}

/// Integrates over consecutive sub-intervals split at `breaks`, sharing the tolerance.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    tol: f64,
) -> Result<Estimate, QuadratureError> {
    let pieces = breaks.len().saturating_sub(1).max(1) as f64;
    let mut total = Estimate {
        value: 0.0,
        error: 0.0,
    };
    for w in breaks.windows(2) {
        let e = integrate(&mut f, w[0], w[1], tol / pieces)?;
        total.value += e.value;
        total.error += e.error;
    }
    Ok(total)
}
