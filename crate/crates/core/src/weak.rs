//! Weak-form verification of trajectories.
//!
//! For a segment with affine endpoints `a(t)`, `b(t)` and constant velocity
//! `u`, the moving-slab functional
//!
//! ```text
//! J(s, σ, a, b, u) = ∫_s^σ ∫_{a(t)}^{b(t)} (∂_t φ + u ∂_x φ) dx dt
//! ```
//!
//! has a closed form made of two space integrals at the end times and two
//! flux integrals along the endpoints. Summing `n·J` (mass) and
//! `n·(u+p)·I_α·J` (momentum) over every space-time cell of a trajectory,
//! plus the initial and terminal pairings, gives the distributional
//! residual of the conservation laws. An exact solution makes both vanish.

use serde::Serialize;

use crate::engine::Trajectory;
use crate::quadrature::{integrate, Estimate, QuadratureError};
use crate::state::ClusterState;

/// Tolerance for each one-dimensional term of the closed form.
pub const TERM_TOL: f64 = 1e-10;

/// Tolerance of the two-dimensional oracle.
pub const SLAB_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Support {
    pub t0: f64,
    pub t1: f64,
    pub x0: f64,
    pub x1: f64,
}

/// Smooth compactly supported `φ(t, x)` with its first derivatives.
pub trait TestFunction: Sync {
    fn value(&self, t: f64, x: f64) -> f64;
    fn dt(&self, t: f64, x: f64) -> f64;
    fn dx(&self, t: f64, x: f64) -> f64;
    fn support(&self) -> Support;
}

fn eta(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

fn eta_prime(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let d = 1.0 - s * s;
        eta(s) * (-2.0 * s / (d * d))
    }
}

/// Product mollifier `η((t - t_c)/r_t) · η((x - x_c)/r_x)` with `η(s) = exp(-1/(1 - s²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bump {
    pub center: (f64, f64),
    pub radii: (f64, f64),
}

pub fn bump(center: (f64, f64), radii: (f64, f64)) -> Bump {
    Bump { center, radii }
}

impl Bump {
    fn scaled(&self, t: f64, x: f64) -> (f64, f64) {
        (
            (t - self.center.0) / self.radii.0,
            (x - self.center.1) / self.radii.1,
        )
    }
}

impl TestFunction for Bump {
    fn value(&self, t: f64, x: f64) -> f64 {
        let (st, sx) = self.scaled(t, x);
        eta(st) * eta(sx)
    }

    fn dt(&self, t: f64, x: f64) -> f64 {
        let (st, sx) = self.scaled(t, x);
        eta_prime(st) / self.radii.0 * eta(sx)
    }

    fn dx(&self, t: f64, x: f64) -> f64 {
        let (st, sx) = self.scaled(t, x);
        eta(st) * eta_prime(sx) / self.radii.1
    }

    fn support(&self) -> Support {
        Support {
            t0: self.center.0 - self.radii.0,
            t1: self.center.0 + self.radii.0,
            x0: self.center.1 - self.radii.1,
            x1: self.center.1 + self.radii.1,
        }
    }
}

/// `x(t) = x0 + v (t - t0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub t0: f64,
    pub x0: f64,
    pub v: f64,
}

impl Affine {
    pub fn new(t0: f64, x0: f64, v: f64) -> Self {
        Self { t0, x0, v }
    }

    pub fn constant(x: f64) -> Self {
        Self::new(0.0, x, 0.0)
    }

    pub fn at(&self, t: f64) -> f64 {
        self.x0 + self.v * (t - self.t0)
    }
}

fn add(x: Estimate, y: Estimate) -> Estimate {
    Estimate {
        value: x.value + y.value,
        error: x.error + y.error,
    }
}

fn scale(x: Estimate, k: f64) -> Estimate {
    Estimate {
        value: k * x.value,
        error: k.abs() * x.error,
    }
}

const ZERO: Estimate = Estimate {
    value: 0.0,
    error: 0.0,
};

/// `∫_lo^hi φ(t, x) dx`, signed.
fn slice(phi: &dyn TestFunction, t: f64, lo: f64, hi: f64) -> Result<Estimate, QuadratureError> {
    if hi < lo {
        return slice(phi, t, hi, lo).map(|e| scale(e, -1.0));
    }
    let sup = phi.support();
    if t <= sup.t0 || t >= sup.t1 {
        return Ok(ZERO);
    }
    let (l, h) = (lo.max(sup.x0), hi.min(sup.x1));
    if h <= l {
        return Ok(ZERO);
    }
    integrate(|x| phi.value(t, x), l, h, TERM_TOL)
}

/// `∫_s^σ φ(t, path(t)) dt`, restricted to where the path crosses the support.
fn trace(
    phi: &dyn TestFunction,
    s: f64,
    sigma: f64,
    path: Affine,
) -> Result<Estimate, QuadratureError> {
    if sigma < s {
        return trace(phi, sigma, s, path).map(|e| scale(e, -1.0));
    }
    let sup = phi.support();
    let (mut lo, mut hi) = (s.max(sup.t0), sigma.min(sup.t1));
    if path.v == 0.0 {
        if path.x0 <= sup.x0 || path.x0 >= sup.x1 {
            return Ok(ZERO);
        }
    } else {
        let ta = path.t0 + (sup.x0 - path.x0) / path.v;
        let tb = path.t0 + (sup.x1 - path.x0) / path.v;
        lo = lo.max(ta.min(tb));
        hi = hi.min(ta.max(tb));
    }
    if hi <= lo {
        return Ok(ZERO);
    }
    integrate(|t| phi.value(t, path.at(t)), lo, hi, TERM_TOL)
}

fn j_estimate(
    s: f64,
    sigma: f64,
    a: Affine,
    b: Affine,
    u: f64,
    phi: &dyn TestFunction,
) -> Result<Estimate, QuadratureError> {
    let end = slice(phi, sigma, a.at(sigma), b.at(sigma))?;
    let start = slice(phi, s, a.at(s), b.at(s))?;
    let head = scale(trace(phi, s, sigma, b)?, u - b.v);
    let tail = scale(trace(phi, s, sigma, a)?, a.v - u);
    Ok(add(add(end, scale(start, -1.0)), add(head, tail)))
}

/// `J(s, σ, a, b, u)` through its boundary-term closed form.
pub fn j_closed_form(
    s: f64,
    sigma: f64,
    a: Affine,
    b: Affine,
    u: f64,
    phi: &dyn TestFunction,
) -> Result<f64, QuadratureError> {
    j_estimate(s, sigma, a, b, u, phi).map(|e| e.value)
}

/// `J(s, σ, a, b, u)` by direct nested integration over the moving slab.
pub fn j_quadrature(
    s: f64,
    sigma: f64,
    a: Affine,
    b: Affine,
    u: f64,
    phi: &dyn TestFunction,
) -> Result<f64, QuadratureError> {
    if sigma < s {
        return j_quadrature(sigma, s, a, b, u, phi).map(|v| -v);
    }
    let sup = phi.support();
    let (lo, hi) = (s.max(sup.t0), sigma.min(sup.t1));
    if hi <= lo {
        return Ok(0.0);
    }
    let mut failure = None;
    let inner_tol = SLAB_TOL * 1e-3 / (hi - lo).max(1.0);
    let outer = integrate(
        |t| {
            let (xa, xb) = (a.at(t), b.at(t));
            let sign = if xb < xa { -1.0 } else { 1.0 };
            let (l, h) = (xa.min(xb).max(sup.x0), xa.max(xb).min(sup.x1));
            if h <= l {
                return 0.0;
            }
            match integrate(|x| phi.dt(t, x) + u * phi.dx(t, x), l, h, inner_tol) {
                Ok(e) => sign * e.value,
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        lo,
        hi,
        SLAB_TOL * 0.1,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(outer.value),
    }
}

/// Which conservation law to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equation {
    /// `∂_t n + ∂_x(n u) = 0`.
    Mass,
    /// `∂_t(n (u+p) I_α) + ∂_x(n u (u+p) I_α) = 0`.
    Momentum,
}

fn weight(traj: &Trajectory, seg: &crate::state::Segment, which: Equation) -> f64 {
    match which {
        Equation::Mass => seg.density(),
        Equation::Momentum => {
            seg.density() * seg.desired() * traj.road.i_alpha_for_level(seg.level)
        }
    }
}

/// `Σ weight · ∫_a^b φ(t, ·)` over the segments of `state`, with `t = state.time`.
fn pairing(
    traj: &Trajectory,
    state: &ClusterState,
    phi: &dyn TestFunction,
    which: Equation,
) -> Result<Estimate, QuadratureError> {
    let mut acc = ZERO;
    for seg in &state.segments {
        let w = weight(traj, seg, which);
        if w != 0.0 {
            acc = add(acc, scale(slice(phi, state.time, seg.a, seg.b)?, w));
        }
    }
    Ok(acc)
}

/// Residual of one equation against `phi`, with its quadrature error estimate.
///
/// The slab sum runs up to the horizon `T`; the pairing at `T` is subtracted
/// so test functions may extend past it.
pub fn weak_residual_estimate(
    traj: &Trajectory,
    phi: &dyn TestFunction,
    which: Equation,
) -> Result<Estimate, QuadratureError> {
    let sup = phi.support();
    let mut acc = ZERO;
    for (state, end) in traj.pieces() {
        let (s, sigma) = (state.time.max(sup.t0), end.min(sup.t1));
        if sigma <= s {
            continue;
        }
        for seg in &state.segments {
            let w = weight(traj, seg, which);
            if w == 0.0 {
                continue;
            }
            let a = Affine::new(state.time, seg.a, seg.tail_rate());
            let b = Affine::new(state.time, seg.b, seg.head_rate());
            let (lo, hi) = (
                a.at(s).min(a.at(sigma)),
                b.at(s).max(b.at(sigma)),
            );
            if hi <= sup.x0 || lo >= sup.x1 {
                continue;
            }
            acc = add(acc, scale(j_estimate(s, sigma, a, b, seg.u, phi)?, w));
        }
    }
    let initial = pairing(traj, &traj.initial, phi, which)?;
    let terminal = pairing(traj, traj.final_state(), phi, which)?;
    Ok(add(add(acc, initial), scale(terminal, -1.0)))
}

pub fn weak_residual(
    traj: &Trajectory,
    phi: &dyn TestFunction,
    which: Equation,
) -> Result<f64, QuadratureError> {
    weak_residual_estimate(traj, phi, which).map(|e| e.value)
}

/// Residuals of a trajectory against a family of bumps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub mass: Vec<f64>,
    pub momentum: Vec<f64>,
    pub max_abs: f64,
    pub bumps: Vec<Bump>,
    /// Largest quadrature error estimate over all reported residuals.
    pub quadrature_error: f64,
}

impl ResidualReport {
    /// Index of the bump with the largest residual in either equation.
    pub fn worst(&self) -> Option<usize> {
        (0..self.bumps.len()).max_by(|&i, &j| {
            let ri = self.mass[i].abs().max(self.momentum[i].abs());
            let rj = self.mass[j].abs().max(self.momentum[j].abs());
            ri.total_cmp(&rj)
        })
    }

    /// Assembles a report from per-bump `(mass, momentum)` estimates, in order.
    pub fn from_estimates(bumps: Vec<Bump>, results: &[(Estimate, Estimate)]) -> Self {
        let mass: Vec<f64> = results.iter().map(|r| r.0.value).collect();
        let momentum: Vec<f64> = results.iter().map(|r| r.1.value).collect();
        let max_abs = mass
            .iter()
            .chain(&momentum)
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        let quadrature_error = results
            .iter()
            .map(|r| r.0.error.max(r.1.error))
            .fold(0.0, f64::max);
        Self {
            mass,
            momentum,
            max_abs,
            bumps,
            quadrature_error,
        }
    }
}

/// Evaluates both residuals for each bump, sequentially.
pub fn residual_report(traj: &Trajectory, bumps: Vec<Bump>) -> Result<ResidualReport, QuadratureError> {
    let results = bumps
        .iter()
        .map(|b| {
            Ok((
                weak_residual_estimate(traj, b, Equation::Mass)?,
                weak_residual_estimate(traj, b, Equation::Momentum)?,
            ))
        })
        .collect::<Result<Vec<_>, QuadratureError>>()?;
    Ok(ResidualReport::from_estimates(bumps, &results))
}

/// A space-only test profile.
pub trait SpaceProfile: Sync {
    fn value(&self, x: f64) -> f64;
    /// Interval outside which the profile vanishes.
    fn support(&self) -> (f64, f64);
    /// `∫ |φ'|`.
    fn total_slope(&self) -> f64;

    /// `∫_lo^hi φ`.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let (x0, x1) = self.support();
        let (l, h) = (lo.max(x0), hi.min(x1));
        if h <= l {
            return 0.0;
        }
        integrate(|x| self.value(x), l, h, TERM_TOL)
            .map(|e| e.value)
            .unwrap_or(f64::NAN)
    }
}

/// `η((x - center)/radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bump1d {
    pub center: f64,
    pub radius: f64,
}

impl SpaceProfile for Bump1d {
    fn value(&self, x: f64) -> f64 {
        eta((x - self.center) / self.radius)
    }

    fn support(&self) -> (f64, f64) {
        (self.center - self.radius, self.center + self.radius)
    }

    fn total_slope(&self) -> f64 {
        // rises from 0 to e^-1 and falls back
        2.0 * (-1.0f64).exp()
    }
}

/// `offset + slope · x` on `[x0, x1]`, zero outside. Only meaningful for
/// states whose mass stays inside the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Linear {
    pub x0: f64,
    pub x1: f64,
    pub slope: f64,
    pub offset: f64,
}

impl SpaceProfile for Linear {
    fn value(&self, x: f64) -> f64 {
        if x < self.x0 || x > self.x1 {
            0.0
        } else {
            self.offset + self.slope * x
        }
    }

    fn support(&self) -> (f64, f64) {
        (self.x0, self.x1)
    }

    fn total_slope(&self) -> f64 {
        self.slope.abs() * (self.x1 - self.x0)
    }

    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let (l, h) = (lo.max(self.x0), hi.min(self.x1));
        if h <= l {
            return 0.0;
        }
        self.offset * (h - l) + 0.5 * self.slope * (h * h - l * l)
    }
}

/// `∫ n(t, x) φ(x) dx` for a block state.
pub fn density_pairing(state: &ClusterState, phi: &dyn SpaceProfile) -> f64 {
    state
        .segments
        .iter()
        .map(|s| s.density() * phi.integral(s.a, s.b))
        .sum()
}

/// Both sides of `|∫(n(t) - n(s)) φ| ≤ n* · 2α(sup u⁰ + sup p⁰) · ∫|φ'| · |t - s|`.
pub fn lipschitz_time_check(
    traj: &Trajectory,
    phi: &dyn SpaceProfile,
    s: f64,
    t: f64,
) -> (f64, f64) {
    let lhs = (density_pairing(&traj.state_at(t), phi) - density_pairing(&traj.state_at(s), phi)).abs();
    let speed = 2.0 * traj.road.alpha * (traj.initial.sup_u() + traj.initial.sup_p());
    let rhs = f64::from(traj.road.max_level()) * speed * phi.total_slope() * (t - s).abs();
    (lhs, rhs)
}
