//! General initial data, its approximation by blocks, and scenario files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineOptions;
use crate::quadrature::{integrate_pieces, QuadratureError};
use crate::road::{RoadError, RoadProfile};
use crate::state::{ClusterState, Coupling, Segment};
use crate::weak::SpaceProfile;
use crate::EPS_X;

const VALUE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitialError {
    #[error("{field} tabulation is empty or has decreasing abscissae")]
    BadTabulation { field: &'static str },
    #[error("{field} has a non-finite or negative value near x = {x}")]
    NegativeValue { field: &'static str, x: f64 },
    #[error("n0 exceeds the lane count near x = {x}")]
    DensityAboveCap { x: f64 },
    #[error("(n* - n0) p0 != 0 near x = {x}")]
    IncompatibleData { x: f64 },
    #[error("refinement k must be at least 1")]
    ZeroRefinement,
}

/// Piecewise-linear profile through `(x, v)` nodes. A repeated abscissa
/// encodes a jump; the later node gives the right limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tabulation(pub Vec<[f64; 2]>);

// clamped so rounding never leaves the bracket of the two nodes
fn lerp(l: [f64; 2], r: [f64; 2], x: f64) -> f64 {
    let v = l[1] + (r[1] - l[1]) * (x - l[0]) / (r[0] - l[0]);
    v.clamp(l[1].min(r[1]), l[1].max(r[1]))
}

impl Tabulation {
    pub fn new(nodes: Vec<[f64; 2]>) -> Self {
        Self(nodes)
    }

    pub fn constant(x0: f64, x1: f64, v: f64) -> Self {
        Self(vec![[x0, v], [x1, v]])
    }

    fn check(&self, field: &'static str) -> Result<(), InitialError> {
        let ok = !self.0.is_empty()
            && self.0.iter().all(|n| n[0].is_finite())
            && self.0.windows(2).all(|w| w[1][0] >= w[0][0]);
        if !ok {
            return Err(InitialError::BadTabulation { field });
        }
        if let Some(n) = self.0.iter().find(|n| !(n[1] >= 0.0 && n[1].is_finite())) {
            return Err(InitialError::NegativeValue { field, x: n[0] });
        }
        Ok(())
    }

    pub fn first_x(&self) -> f64 {
        self.0[0][0]
    }

    pub fn last_x(&self) -> f64 {
        self.0[self.0.len() - 1][0]
    }

    /// Right limit at `x`, constant beyond the end nodes.
    pub fn value(&self, x: f64) -> f64 {
        let n = &self.0;
        let k = n.partition_point(|p| p[0] <= x);
        if k == 0 {
            return n[0][1];
        }
        if k == n.len() {
            return n[k - 1][1];
        }
        lerp(n[k - 1], n[k], x)
    }

    /// Left limit at `x`.
    pub fn left_value(&self, x: f64) -> f64 {
        let n = &self.0;
        let k = n.partition_point(|p| p[0] < x);
        if k == 0 {
            return n[0][1];
        }
        if k == n.len() {
            return n[k - 1][1];
        }
        lerp(n[k - 1], n[k], x)
    }

    /// Values the profile approaches on `(lo, hi)`: one-sided limits at the
    /// ends and every node strictly inside.
    fn extreme_candidates(&self, lo: f64, hi: f64) -> impl Iterator<Item = f64> + '_ {
        [self.value(lo), self.left_value(hi)].into_iter().chain(
            self.0
                .iter()
                .filter(move |p| lo < p[0] && p[0] < hi)
                .map(|p| p[1]),
        )
    }

    /// Exact essential infimum over `(lo, hi)`.
    pub fn essinf(&self, lo: f64, hi: f64) -> f64 {
        self.extreme_candidates(lo, hi).fold(f64::INFINITY, f64::min)
    }

    pub fn esssup(&self, lo: f64, hi: f64) -> f64 {
        self.extreme_candidates(lo, hi)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.0.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.0.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total variation over the whole line.
    pub fn total_variation(&self) -> f64 {
        self.0.windows(2).map(|w| (w[1][1] - w[0][1]).abs()).sum()
    }

    /// Exact `∫_lo^hi`, with constant extension beyond the nodes.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mut xs = vec![lo];
        xs.extend(self.0.iter().map(|p| p[0]).filter(|&x| lo < x && x < hi));
        xs.push(hi);
        xs.dedup();
        xs.windows(2)
            .map(|w| 0.5 * (self.value(w[0]) + self.left_value(w[1])) * (w[1] - w[0]))
            .sum()
    }

    fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|p| p[0])
    }
}

/// Initial density, velocity and offset profiles. The density vanishes
/// outside its tabulated range; velocity and offset extend constantly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralData {
    pub n0: Tabulation,
    pub u0: Tabulation,
    pub p0: Tabulation,
}

impl GeneralData {
    pub fn support(&self) -> (f64, f64) {
        (self.n0.first_x(), self.n0.last_x())
    }

    /// Density with the zero extension outside the support.
    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x < lo || x >= hi {
            0.0
        } else {
            self.n0.value(x)
        }
    }

    fn left_density(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo || x > hi {
            0.0
        } else {
            self.n0.left_value(x)
        }
    }

    /// `∫_lo^hi n0`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = self.support();
        self.n0.integral(lo.max(a), hi.min(b))
    }

    /// Breakpoints of all three profiles and the road, sorted and deduplicated.
    fn breakpoints(&self, road: &RoadProfile) -> Vec<f64> {
        let mut xs: Vec<f64> = self
            .n0
            .nodes()
            .chain(self.u0.nodes())
            .chain(self.p0.nodes())
            .chain(road.transitions.iter().copied())
            .collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }

    pub fn validate(&self, road: &RoadProfile) -> Result<(), InitialError> {
        self.n0.check("n0")?;
        self.u0.check("u0")?;
        self.p0.check("p0")?;
        let (lo, hi) = self.support();
        let xs = self.breakpoints(road);
        for w in xs.windows(2) {
            let (l, r) = (w[0], w[1]);
            let cap = f64::from(road.level_at(0.5 * (l + r)));
            let (nl, nr) = (self.density(l), self.left_density(r));
            if nl > cap + VALUE_TOL || nr > cap + VALUE_TOL {
                return Err(InitialError::DensityAboveCap { x: l });
            }
            let p_active = self.p0.value(l) > 0.0 || self.p0.left_value(r) > 0.0;
            let full = (cap - nl).abs() <= VALUE_TOL && (cap - nr).abs() <= VALUE_TOL;
            if p_active && !full {
                return Err(InitialError::IncompatibleData { x: l });
            }
        }
        // outside the support the density is zero, so the offset must be too
        if self.p0.value(lo - 1.0) > 0.0 {
            return Err(InitialError::IncompatibleData { x: lo });
        }
        if self.p0.value(hi + 1.0) > 0.0 {
            return Err(InitialError::IncompatibleData { x: hi });
        }
        Ok(())
    }
}

/// Replaces general data by blocks: each road region meeting the support
/// is cut into `k` equal cells, and each cell becomes one left-anchored
/// block holding the cell's mass at full density.
pub fn approximate_blocks(
    data: &GeneralData,
    road: &RoadProfile,
    k: usize,
) -> Result<ClusterState, InitialError> {
    if k == 0 {
        return Err(InitialError::ZeroRefinement);
    }
    data.validate(road)?;
    let (lo, hi) = data.support();
    let mut segs = Vec::new();
    for region in 0..road.num_regions() {
        let (rl, rh) = road.region_bounds(region);
        let (l, h) = (rl.max(lo), rh.min(hi));
        if h <= l {
            continue;
        }
        let level = road.region_level(region);
        let cap = f64::from(level);
        let width = (h - l) / k as f64;
        for i in 0..k {
            let a = l + i as f64 * width;
            let b = if i + 1 == k { h } else { l + (i + 1) as f64 * width };
            let m = data.mass(a, b) / cap;
            if m <= EPS_X {
                continue;
            }
            let u = data.u0.essinf(a, b);
            let thin = data.n0.essinf(a, b) < cap - VALUE_TOL;
            let p = if thin { 0.0 } else { data.p0.essinf(a, b) };
            segs.push(Segment {
                a,
                b: (a + m).min(b),
                u,
                p,
                level,
                coupling: Coupling::None,
            });
        }
    }
    Ok(ClusterState::new(0.0, segs))
}

/// Absolute pairing errors `|⟨n0 - n_k, φ⟩|`, `|⟨n0 u0 - n_k u_k, φ⟩|`,
/// `|⟨n0 p0 - n_k p_k, φ⟩|`.
pub fn weak_error(
    data: &GeneralData,
    blocks: &ClusterState,
    phi: &dyn SpaceProfile,
) -> Result<(f64, f64, f64), QuadratureError> {
    let (lo, hi) = data.support();
    let (p0, p1) = phi.support();
    let (l, h) = (lo.max(p0), hi.min(p1));
    let mut exact = (0.0, 0.0, 0.0);
    if h > l {
        let mut xs: Vec<f64> = data
            .n0
            .nodes()
            .chain(data.u0.nodes())
            .chain(data.p0.nodes())
            .filter(|&x| l < x && x < h)
            .collect();
        xs.push(l);
        xs.push(h);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let tol = 1e-10;
        exact.0 = integrate_pieces(|x| data.n0.value(x) * phi.value(x), &xs, tol)?.value;
        exact.1 = integrate_pieces(
            |x| data.n0.value(x) * data.u0.value(x) * phi.value(x),
            &xs,
            tol,
        )?
        .value;
        exact.2 = integrate_pieces(
            |x| data.n0.value(x) * data.p0.value(x) * phi.value(x),
            &xs,
            tol,
        )?
        .value;
    }
    let mut approx = (0.0, 0.0, 0.0);
    for s in &blocks.segments {
        let m = s.density() * phi.integral(s.a, s.b);
        approx.0 += m;
        approx.1 += m * s.u;
        approx.2 += m * s.p;
    }
    Ok((
        (exact.0 - approx.0).abs(),
        (exact.1 - approx.1).abs(),
        (exact.2 - approx.2).abs(),
    ))
}

/// Output sampling grid: `nx` positions on `[x0, x1]` and `nt` times on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x0: f64,
    pub x1: f64,
    pub nx: usize,
    pub nt: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl Grid {
    pub fn xs(&self) -> Vec<f64> {
        linspace(self.x0, self.x1, self.nx)
    }

    pub fn ts(&self, horizon: f64) -> Vec<f64> {
        linspace(0.0, horizon, self.nt)
    }
}

/// A block as written in a scenario file; the level defaults to the road's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub a: f64,
    pub b: f64,
    pub u: f64,
    pub p: f64,
    #[serde(default)]
    pub level: Option<u8>,
    #[serde(default)]
    pub coupling: Option<Coupling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralSpec {
    pub n0: Tabulation,
    pub u0: Tabulation,
    pub p0: Tabulation,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    road: RoadProfile,
    #[serde(default)]
    blocks: Option<Vec<BlockSpec>>,
    #[serde(default)]
    general: Option<GeneralSpec>,
    horizon: f64,
    grid: Grid,
    #[serde(default)]
    engine: EngineOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Blocks(ClusterState),
    General { data: GeneralData, k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub road: RoadProfile,
    pub initial: InitialSpec,
    pub horizon: f64,
    pub grid: Grid,
    pub engine: EngineOptions,
}

impl Scenario {
    /// The block state the simulation starts from.
    pub fn initial_state(&self) -> Result<ClusterState, InitialError> {
        match &self.initial {
            InitialSpec::Blocks(s) => Ok(s.clone()),
            InitialSpec::General { data, k } => approximate_blocks(data, &self.road, *k),
        }
    }

    pub fn general(&self) -> Option<&GeneralData> {
        match &self.initial {
            InitialSpec::General { data, .. } => Some(data),
            InitialSpec::Blocks(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Road(#[from] RoadError),
    #[error(transparent)]
    Initial(#[from] InitialError),
    #[error("block {0}")]
    Constraint(crate::state::Violation),
    #[error("exactly one of `blocks` and `general` must be given")]
    InitialChoice,
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("grid needs x1 > x0 and at least one sample in each direction")]
    Grid,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(#[from] ValidationError),
}

/// Parses and validates a scenario file.
pub fn load_scenario(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_slice(bytes).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    file.road.validate().map_err(ValidationError::from)?;
    let road = file.road;
    if !(file.horizon.is_finite() && file.horizon > 0.0) {
        return Err(ValidationError::Horizon(file.horizon).into());
    }
    let g = file.grid;
    if !(g.x0.is_finite() && g.x1.is_finite() && g.x1 > g.x0 && g.nx >= 1 && g.nt >= 1) {
        return Err(ValidationError::Grid.into());
    }
    let initial = match (file.blocks, file.general) {
        (Some(blocks), None) => {
            let segs: Vec<Segment> = blocks
                .iter()
                .map(|b| Segment {
                    a: b.a,
                    b: b.b,
                    u: b.u,
                    p: b.p,
                    level: b.level.unwrap_or_else(|| road.level_at(0.5 * (b.a + b.b))),
                    coupling: b.coupling.unwrap_or_default(),
                })
                .collect();
            let state = ClusterState::new(0.0, segs);
            if let Some(v) = state.check_constraints(&road).into_iter().next() {
                return Err(ValidationError::Constraint(v).into());
            }
            InitialSpec::Blocks(state)
        }
        (None, Some(spec)) => {
            if spec.k == 0 {
                return Err(ValidationError::from(InitialError::ZeroRefinement).into());
            }
            let data = GeneralData {
                n0: spec.n0,
                u0: spec.u0,
                p0: spec.p0,
            };
            data.validate(&road).map_err(ValidationError::from)?;
            InitialSpec::General { data, k: spec.k }
        }
        _ => return Err(ValidationError::InitialChoice.into()),
    };
    Ok(Scenario {
        road,
        initial,
        horizon: file.horizon,
        grid: g,
        engine: file.engine,
    })
}
