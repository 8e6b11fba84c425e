//! Piecewise-constant block state.
//!
//! A [`ClusterState`] is an ordered list of [`Segment`]s. Each segment is an
//! interval `[a, b]` at maximal density `level = n*(x)` carrying constant
//! velocity `u` and offset `p`. Everything between segments is vacuum.
//!
//! Two adjacent segments with `b_i = a_{i+1}` (up to [`EPS_X`]) are in
//! contact. A coupling pins a segment endpoint to a lane transition: the
//! upstream member of a transition crossing has its head pinned, the
//! downstream member its tail. Pinned endpoints do not move.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road::RoadProfile;
use crate::EPS_X;

/// Offsets and velocities below this magnitude count as zero in admissibility checks.
const SIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("degenerate interval [{0}, {1}]")]
    EmptyInterval(f64, f64),
    #[error("sample grid is not sorted (at index {0})")]
    UnsortedGrid(usize),
}

/// Which endpoints of a segment are pinned to lane transitions.
///
/// Transition indices are 1-based, as in [`RoadProfile::transition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    #[default]
    None,
    /// Head pinned at transition `j`; cars leave through it.
    Upstream(usize),
    /// Tail pinned at transition `j`; cars enter through it.
    Downstream(usize),
    /// Tail pinned at `j` and head pinned at `j + 1`: the segment fills the
    /// whole section between two transitions and cars flow through it.
    Through(usize),
}

impl Coupling {
    pub fn tail_pin(self) -> Option<usize> {
        match self {
            Coupling::Downstream(j) | Coupling::Through(j) => Some(j),
            _ => None,
        }
    }

    pub fn head_pin(self) -> Option<usize> {
        match self {
            Coupling::Upstream(j) => Some(j),
            Coupling::Through(j) => Some(j + 1),
            _ => None,
        }
    }

    /// Builds a coupling from its pinned endpoints. Returns `None` for a
    /// pair of pins that are not consecutive transitions.
    pub fn from_pins(tail: Option<usize>, head: Option<usize>) -> Option<Self> {
        match (tail, head) {
            (None, None) => Some(Coupling::None),
            (None, Some(j)) => Some(Coupling::Upstream(j)),
            (Some(j), None) => Some(Coupling::Downstream(j)),
            (Some(t), Some(h)) if h == t + 1 => Some(Coupling::Through(t)),
            _ => None,
        }
    }
}

/// One constant-state block piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: f64,
    pub b: f64,
    pub u: f64,
    pub p: f64,
    pub level: u8,
    #[serde(default)]
    pub coupling: Coupling,
}

impl Segment {
    pub fn free(a: f64, b: f64, u: f64, p: f64, level: u8) -> Self {
        Self {
            a,
            b,
            u,
            p,
            level,
            coupling: Coupling::None,
        }
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn density(&self) -> f64 {
        f64::from(self.level)
    }

    pub fn mass(&self) -> f64 {
        self.density() * self.length()
    }

    /// Desired speed `u + p` of the cars in this segment.
    pub fn desired(&self) -> f64 {
        self.u + self.p
    }

    pub fn tail_rate(&self) -> f64 {
        if self.coupling.tail_pin().is_some() {
            0.0
        } else {
            self.u
        }
    }

    pub fn head_rate(&self) -> f64 {
        if self.coupling.head_pin().is_some() {
            0.0
        } else {
            self.u
        }
    }

    /// Road region this segment lives in. Pins decide for degenerate segments.
    pub fn region(&self, road: &RoadProfile) -> usize {
        if let Some(j) = self.coupling.tail_pin() {
            j
        } else if let Some(j) = self.coupling.head_pin() {
            j - 1
        } else {
            road.region_at(0.5 * (self.a + self.b))
        }
    }
}

/// One row of a field sample: position, density, flux `n·u`, and `n·p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSample {
    pub x: f64,
    pub n: f64,
    pub nu: f64,
    pub np: f64,
}

/// Time-stamped ordered block state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    #[serde(rename = "t")]
    pub time: f64,
    pub segments: Vec<Segment>,
}

impl ClusterState {
    pub fn new(time: f64, segments: Vec<Segment>) -> Self {
        Self { time, segments }
    }

    pub fn empty(time: f64) -> Self {
        Self::new(time, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Whether segment `i` touches segment `i + 1`.
    pub fn in_contact(&self, i: usize) -> bool {
        match (self.segments.get(i), self.segments.get(i + 1)) {
            (Some(l), Some(r)) => r.a - l.b <= EPS_X,
            _ => false,
        }
    }

    /// `∫ n dx`.
    pub fn total_mass(&self) -> f64 {
        self.segments.iter().map(Segment::mass).sum()
    }

    /// Index of the segment whose half-open interval `[a, b)` contains `x`.
    fn segment_containing(&self, x: f64) -> Option<usize> {
        let k = self.segments.partition_point(|s| s.a <= x);
        (0..k).rev().take(2).find(|&i| {
            let s = &self.segments[i];
            s.a <= x && x < s.b
        })
    }

    /// `n(x)` with right limits at segment endpoints.
    pub fn density_at(&self, x: f64) -> f64 {
        self.segment_containing(x)
            .map_or(0.0, |i| self.segments[i].density())
    }

    /// Evaluates `(n, n·u, n·p)` on a sorted grid.
    pub fn sample_fields(&self, grid: &[f64]) -> Result<Vec<FieldSample>, StateError> {
        if let Some(k) = grid.windows(2).position(|w| w[1] < w[0]) {
            return Err(StateError::UnsortedGrid(k + 1));
        }
        Ok(grid
            .iter()
            .map(|&x| match self.segment_containing(x) {
                Some(i) => {
                    let s = &self.segments[i];
                    let n = s.density();
                    FieldSample {
                        x,
                        n,
                        nu: n * s.u,
                        np: n * s.p,
                    }
                }
                None => FieldSample {
                    x,
                    n: 0.0,
                    nu: 0.0,
                    np: 0.0,
                },
            })
            .collect())
    }

    /// Segments that carry measure, i.e. all but the transient zero-length ones.
    fn solid(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.length() > EPS_X)
    }

    /// Total variation over `window` of `u` extended linearly across vacuum
    /// gaps and constantly beyond the outermost blocks.
    pub fn total_variation_u(&self, window: (f64, f64)) -> Result<f64, StateError> {
        let (lo, hi) = check_window(window)?;
        let solid: Vec<&Segment> = self.solid().collect();
        let mut tv = 0.0;
        for pair in solid.windows(2) {
            let (l, r) = (pair[0], pair[1]);
            if r.a - l.b <= EPS_X {
                if lo < l.b && l.b < hi {
                    tv += (r.u - l.u).abs();
                }
            } else {
                let span = r.a - l.b;
                let clip = (r.a.min(hi) - l.b.max(lo)).max(0.0);
                tv += (r.u - l.u).abs() * (clip / span);
            }
        }
        Ok(tv)
    }

    /// Total variation over `window` of `p`, which vanishes in vacuum and at infinity.
    pub fn total_variation_p(&self, window: (f64, f64)) -> Result<f64, StateError> {
        let (lo, hi) = check_window(window)?;
        let inside = |x: f64| lo < x && x < hi;
        let solid: Vec<&Segment> = self.solid().collect();
        let mut tv = 0.0;
        let mut prev: Option<&Segment> = None;
        for s in &solid {
            match prev {
                Some(l) if s.a - l.b <= EPS_X => {
                    if inside(l.b) {
                        tv += (s.p - l.p).abs();
                    }
                }
                Some(l) => {
                    if inside(l.b) {
                        tv += l.p.abs();
                    }
                    if inside(s.a) {
                        tv += s.p.abs();
                    }
                }
                None => {
                    if inside(s.a) {
                        tv += s.p.abs();
                    }
                }
            }
            prev = Some(s);
        }
        if let Some(l) = prev {
            if inside(l.b) {
                tv += l.p.abs();
            }
        }
        Ok(tv)
    }

    /// Largest velocity over all non-degenerate segments.
    pub fn sup_u(&self) -> f64 {
        self.solid().map(|s| s.u).fold(0.0, f64::max)
    }

    pub fn inf_u(&self) -> f64 {
        let m = self.solid().map(|s| s.u).fold(f64::INFINITY, f64::min);
        if m.is_finite() {
            m
        } else {
            0.0
        }
    }

    pub fn sup_p(&self) -> f64 {
        self.solid().map(|s| s.p).fold(0.0, f64::max)
    }

    /// Moves every endpoint at its rate for `dt`, ignoring events.
    pub fn drift(&mut self, dt: f64) {
        for s in &mut self.segments {
            s.a += s.tail_rate() * dt;
            s.b += s.head_rate() * dt;
        }
        self.time += dt;
    }

    /// Lists every admissibility violation; an empty list means the state is admissible.
    pub fn check_constraints(&self, road: &RoadProfile) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |index, kind| out.push(Violation { index, kind });
        let segs = &self.segments;
        for (i, s) in segs.iter().enumerate() {
            let finite = [s.a, s.b, s.u, s.p].iter().all(|v| v.is_finite());
            if !finite {
                push(i, ViolationKind::NonFinite);
                continue;
            }
            if s.length() < -EPS_X
                || (s.length() <= 0.0 && s.coupling == Coupling::None)
            {
                push(i, ViolationKind::Degenerate);
            }
            if let Some(next) = segs.get(i + 1) {
                if s.b > next.a + EPS_X {
                    push(i, ViolationKind::Ordering);
                }
            }
            if s.u < -SIGN_TOL {
                push(i, ViolationKind::NegativeVelocity);
            }
            if s.p < -SIGN_TOL {
                push(i, ViolationKind::NegativeOffset);
            }
            if !(1..=2).contains(&s.level) {
                push(i, ViolationKind::DensityAboveCap);
                continue;
            }

            let region = s.region(road);
            if region >= road.num_regions() {
                push(i, ViolationKind::PinMismatch);
                continue;
            }
            let (lo, hi) = road.region_bounds(region);
            if s.a < lo - EPS_X || s.b > hi + EPS_X {
                push(i, ViolationKind::StraddlesTransition);
            }
            let cap = road.region_level(region);
            if s.level > cap {
                push(i, ViolationKind::DensityAboveCap);
            } else if s.level < cap {
                push(i, ViolationKind::BelowCap);
                if s.p > SIGN_TOL {
                    push(i, ViolationKind::Complementarity);
                }
            }

            if let Some(j) = s.coupling.head_pin() {
                let matched = segs
                    .get(i + 1)
                    .is_some_and(|n| n.coupling.tail_pin() == Some(j));
                if j > road.num_transitions() || (s.b - road.transition(j)).abs() > EPS_X || !matched
                {
                    push(i, ViolationKind::PinMismatch);
                }
            }
            if let Some(j) = s.coupling.tail_pin() {
                let matched = i > 0 && segs[i - 1].coupling.head_pin() == Some(j);
                if j == 0
                    || j > road.num_transitions()
                    || (s.a - road.transition(j)).abs() > EPS_X
                    || !matched
                {
                    push(i, ViolationKind::PinMismatch);
                }
            }

            // Head constraint: a free head strictly inside its region with
            // free road ahead carries no offset. Tail-pinned segments are the
            // downstream half of a crossing and are exempt.
            let head_free = s.coupling == Coupling::None;
            let at_boundary = (hi - s.b).abs() <= EPS_X;
            let blocked = self.in_contact(i);
            if head_free && !at_boundary && !blocked && s.p > SIGN_TOL {
                push(i, ViolationKind::HeadConstraint);
            }
        }
        out
    }
}

fn check_window((lo, hi): (f64, f64)) -> Result<(f64, f64), StateError> {
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err(StateError::EmptyInterval(lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonFinite,
    Degenerate,
    Ordering,
    NegativeVelocity,
    NegativeOffset,
    DensityAboveCap,
    BelowCap,
    Complementarity,
    StraddlesTransition,
    PinMismatch,
    HeadConstraint,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::NonFinite => "non-finite value",
            ViolationKind::Degenerate => "non-positive length",
            ViolationKind::Ordering => "ordering",
            ViolationKind::NegativeVelocity => "u < 0",
            ViolationKind::NegativeOffset => "p < 0",
            ViolationKind::DensityAboveCap => "n > n*",
            ViolationKind::BelowCap => "0 < n < n*",
            ViolationKind::Complementarity => "(n* - n) p != 0",
            ViolationKind::StraddlesTransition => "segment straddles a transition",
            ViolationKind::PinMismatch => "coupling pin misplaced",
            ViolationKind::HeadConstraint => "(cont+) head constraint",
        };
        f.write_str(s)
    }
}

/// One failed admissibility condition on segment `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "segment {}: {}", self.index, self.kind)
    }
}
