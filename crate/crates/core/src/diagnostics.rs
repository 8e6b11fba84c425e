//! Bound checks, test-function families, sampled outputs, and convergence fits.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{EventKind, Trajectory};
use crate::initial::{approximate_blocks, weak_error, GeneralData, Grid, InitialError};
use crate::road::RoadProfile;
use crate::state::{ClusterState, ViolationKind};
use crate::weak::{bump, Bump, SpaceProfile};

/// Relative slack on every bound comparison.
pub const BOUND_SLACK: f64 = 1e-9;

/// Maximum principle and total-variation bounds along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub times: Vec<f64>,
    pub max_u: Vec<f64>,
    pub max_p: Vec<f64>,
    /// `2α(sup u⁰ + sup p⁰)`.
    pub max_bound: f64,
    /// Window `K` on which variations are measured.
    pub window: (f64, f64),
    pub tv_u: Vec<f64>,
    pub tv_p: Vec<f64>,
    /// `4α·max(M, 1)·(TV_K̃ u⁰ + TV_K̃ p⁰ + sup u⁰)` per time.
    pub tv_bound: Vec<f64>,
    pub max_ok: bool,
    pub tv_ok: bool,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.max_ok && self.tv_ok
    }
}

fn within(measured: f64, bound: f64) -> bool {
    measured <= bound * (1.0 + BOUND_SLACK)
}

/// Checks every logged state and every time in `extra` against the bounds,
/// measuring variation on `window`.
pub fn bounds_report(traj: &Trajectory, window: (f64, f64), extra: &[f64]) -> BoundsReport {
    let init = &traj.initial;
    let alpha = traj.road.alpha;
    let (sup_u, inf_u, sup_p) = (init.sup_u(), init.inf_u(), init.sup_p());
    let max_bound = 2.0 * alpha * (sup_u + sup_p);
    let transitions = traj.road.num_transitions().max(1) as f64;

    let mut states: Vec<ClusterState> = traj.states().cloned().collect();
    states.extend(extra.iter().map(|&t| traj.state_at(t)));
    states.sort_by(|x, y| x.time.total_cmp(&y.time));

    let mut r = BoundsReport {
        times: Vec::new(),
        max_u: Vec::new(),
        max_p: Vec::new(),
        max_bound,
        window,
        tv_u: Vec::new(),
        tv_p: Vec::new(),
        tv_bound: Vec::new(),
        max_ok: true,
        tv_ok: true,
    };
    for s in &states {
        let t = s.time;
        let shifted = (window.0 - t * sup_u, window.1 - t * inf_u);
        let tv0 = init.total_variation_u(shifted).unwrap_or(0.0)
            + init.total_variation_p(shifted).unwrap_or(0.0);
        let bound = 4.0 * alpha * transitions * (tv0 + sup_u);
        let mu = s.segments.iter().map(|g| g.u).fold(0.0, f64::max);
        let mp = s.segments.iter().map(|g| g.p).fold(0.0, f64::max);
        let tu = s.total_variation_u(window).unwrap_or(0.0);
        let tp = s.total_variation_p(window).unwrap_or(0.0);
        let neg = s.segments.iter().any(|g| g.u < 0.0 || g.p < 0.0);
        r.max_ok &= within(mu, max_bound) && within(mp, max_bound) && !neg;
        r.tv_ok &= within(tu, bound) && within(tp, bound);
        r.times.push(t);
        r.max_u.push(mu);
        r.max_p.push(mp);
        r.tv_u.push(tu);
        r.tv_p.push(tp);
        r.tv_bound.push(bound);
    }
    r
}

/// Deterministic family of space-time bumps for residual checks.
///
/// Bumps are centred on logged events, on transitions, on the initial
/// block endpoints (touching `t = 0`), and at random points of the
/// space-time window; radii are drawn from the same generator.
pub fn bump_family(traj: &Trajectory, window: (f64, f64), count: usize, seed: u64) -> Vec<Bump> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = traj.horizon;
    let span = (window.1 - window.0).max(1e-6);

    let mut anchors: Vec<(f64, f64)> = Vec::new();
    for (e, _) in &traj.events {
        if let (Some(x), false) = (e.x, e.kind == EventKind::HorizonReached) {
            anchors.push((e.time, x));
        }
    }
    for s in &traj.initial.segments {
        anchors.push((0.0, s.a));
        anchors.push((0.0, s.b));
    }
    for &r in &traj.road.transitions {
        anchors.push((f64::NAN, r));
    }

    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let rt = horizon * rng.random_range(0.05..0.3);
        let rx = span * rng.random_range(0.03..0.2);
        // every third bump is purely random; the rest cycle through anchors
        let anchor = if anchors.is_empty() || k % 3 == 2 {
            None
        } else {
            Some(anchors[(k - k / 3) % anchors.len()])
        };
        let (t, x) = match anchor {
            Some((t, x)) if t.is_nan() => (rng.random_range(0.0..horizon), x),
            Some((t, x)) => {
                let jitter_t = rt * rng.random_range(-0.5..0.5);
                let jitter_x = rx * rng.random_range(-0.5..0.5);
                ((t + jitter_t).max(0.0), x + jitter_x)
            }
            None => (
                rng.random_range(0.0..horizon),
                window.0 + span * rng.random_range(0.0..1.0),
            ),
        };
        out.push(bump((t, x), (rt, rx)));
    }
    out
}

/// Least-squares slope of `log e` against `log k`. `None` when every error
/// is negligible or fewer than two points are usable.
pub fn loglog_slope(ks: &[usize], errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ks
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 1e-12)
        .map(|(&k, &e)| ((k as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 2 || pts.len() < ks.len() {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Guarantees of the block approximation at one refinement level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxRow {
    pub k: usize,
    pub blocks: usize,
    /// Total block mass does not exceed `∫ n0`.
    pub mass_ok: bool,
    /// Block velocities and offsets lie within the range of the data.
    pub bracket_ok: bool,
    /// Block variations do not exceed those of the data.
    pub tv_ok: bool,
    /// `n_k ∈ {0, n*}` and `(n* - n_k) p_k = 0`.
    pub constraint_ok: bool,
    pub e_n: f64,
    pub e_nu: f64,
    pub e_np: f64,
}

impl ApproxRow {
    pub fn passed(&self) -> bool {
        self.mass_ok && self.bracket_ok && self.tv_ok && self.constraint_ok
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApproxError {
    #[error(transparent)]
    Initial(#[from] InitialError),
    #[error(transparent)]
    Quadrature(#[from] crate::quadrature::QuadratureError),
}

pub fn approximation_row(
    data: &GeneralData,
    road: &RoadProfile,
    k: usize,
    phi: &dyn SpaceProfile,
) -> Result<ApproxRow, ApproxError> {
    let blocks = approximate_blocks(data, road, k)?;
    let (lo, hi) = data.support();
    let mass_ok = blocks.total_mass() <= data.mass(lo, hi) * (1.0 + 1e-12) + 1e-12;
    let (umin, umax) = (data.u0.min_value(), data.u0.max_value());
    let (pmin, pmax) = (data.p0.min_value(), data.p0.max_value());
    let bracket_ok = blocks.segments.iter().all(|s| {
        umin <= s.u && s.u <= umax && (s.p == 0.0 || (pmin <= s.p && s.p <= pmax))
    });
    let line = (f64::NEG_INFINITY, f64::INFINITY);
    let tv_ok = blocks.total_variation_u(line).unwrap_or(f64::INFINITY)
        <= data.u0.total_variation() + 1e-12
        && blocks.total_variation_p(line).unwrap_or(f64::INFINITY)
            <= data.p0.total_variation() + 1e-12;
    let constraint_ok = !blocks.check_constraints(road).iter().any(|v| {
        matches!(
            v.kind,
            ViolationKind::DensityAboveCap
                | ViolationKind::BelowCap
                | ViolationKind::Complementarity
                | ViolationKind::Ordering
                | ViolationKind::NegativeOffset
                | ViolationKind::NegativeVelocity
        )
    });
    let (e_n, e_nu, e_np) = weak_error(data, &blocks, phi)?;
    Ok(ApproxRow {
        k,
        blocks: blocks.len(),
        mass_ok,
        bracket_ok,
        tv_ok,
        constraint_ok,
        e_n,
        e_nu,
        e_np,
    })
}

/// Space-time samples as CSV with header `t,x,n,nu,np`.
pub fn fields_csv(traj: &Trajectory, grid: &Grid) -> String {
    let xs = grid.xs();
    let mut out = String::from("t,x,n,nu,np\n");
    for t in grid.ts(traj.horizon) {
        let s = traj.state_at(t);
        if let Ok(rows) = s.sample_fields(&xs) {
            for r in rows {
                let _ = writeln!(out, "{},{},{},{},{}", t, r.x, r.n, r.nu, r.np);
            }
        }
    }
    out
}

/// States at the grid times.
pub fn snapshots(traj: &Trajectory, grid: &Grid) -> Vec<ClusterState> {
    grid.ts(traj.horizon)
        .into_iter()
        .map(|t| traj.state_at(t))
        .collect()
}
