//! Piecewise-constant lane profile.
//!
//! The road is split by `M` transition points `r_1 < … < r_M` into `M + 1`
//! regions. Region `k` is the open interval `(r_k, r_{k+1})` with
//! `r_0 = -∞` and `r_{M+1} = +∞`; its maximal density is `levels[k]`.
//! Transitions are indexed from 1, so transition `j` separates region
//! `j - 1` (upstream) from region `j` (downstream).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::EPS_X;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoadError {
    #[error("transitions must be strictly increasing (violated at index {0})")]
    NonMonotoneTransitions(usize),
    #[error("transitions {0} and {1} are closer than the contact tolerance")]
    TransitionsTooClose(usize, usize),
    #[error("level {level} at region {region} is not a lane count in {{1, 2}}")]
    LevelOutOfRange { region: usize, level: u8 },
    #[error("transition {0} separates two regions with the same lane count")]
    RedundantTransition(usize),
    #[error("speed ratio alpha = {0} is below 1")]
    AlphaBelowOne(f64),
    #[error("expected {expected} levels for {transitions} transitions, got {got}")]
    LevelCount {
        transitions: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite road parameter")]
    NonFinite,
}

/// Lane profile `n*(x)` together with the speed ratio `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadProfile {
    pub transitions: Vec<f64>,
    pub levels: Vec<u8>,
    pub alpha: f64,
}

impl RoadProfile {
    pub fn new(transitions: Vec<f64>, levels: Vec<u8>, alpha: f64) -> Result<Self, RoadError> {
        let road = Self {
            transitions,
            levels,
            alpha,
        };
        road.validate()?;
        Ok(road)
    }

    /// A road with a single lane count everywhere.
    pub fn uniform(level: u8, alpha: f64) -> Result<Self, RoadError> {
        Self::new(Vec::new(), vec![level], alpha)
    }

    pub fn validate(&self) -> Result<(), RoadError> {
        if !self.alpha.is_finite() || self.transitions.iter().any(|r| !r.is_finite()) {
            return Err(RoadError::NonFinite);
        }
        if self.levels.len() != self.transitions.len() + 1 {
            return Err(RoadError::LevelCount {
                transitions: self.transitions.len(),
                expected: self.transitions.len() + 1,
                got: self.levels.len(),
            });
        }
        for (k, w) in self.transitions.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(RoadError::NonMonotoneTransitions(k + 2));
            }
            if w[1] - w[0] <= EPS_X {
                return Err(RoadError::TransitionsTooClose(k + 1, k + 2));
            }
        }
        for (region, &level) in self.levels.iter().enumerate() {
            if !(1..=2).contains(&level) {
                return Err(RoadError::LevelOutOfRange { region, level });
            }
        }
        for (k, w) in self.levels.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(RoadError::RedundantTransition(k + 1));
            }
        }
        if self.alpha < 1.0 {
            return Err(RoadError::AlphaBelowOne(self.alpha));
        }
        Ok(())
    }

    /// Number of transitions `M`.
    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn num_regions(&self) -> usize {
        self.levels.len()
    }

    /// Position of transition `j` (1-based).
    pub fn transition(&self, j: usize) -> f64 {
        self.transitions[j - 1]
    }

    /// Region containing `x`; at a transition point the downstream region wins.
    pub fn region_at(&self, x: f64) -> usize {
        self.transitions.partition_point(|&r| r <= x)
    }

    /// Open interval `(r_k, r_{k+1})` of region `k`, with infinite ends.
    pub fn region_bounds(&self, k: usize) -> (f64, f64) {
        let lo = if k == 0 {
            f64::NEG_INFINITY
        } else {
            self.transitions[k - 1]
        };
        let hi = self
            .transitions
            .get(k)
            .copied()
            .unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    pub fn region_level(&self, k: usize) -> u8 {
        self.levels[k]
    }

    /// `n*(x)`, right-continuous at transitions.
    pub fn level_at(&self, x: f64) -> u8 {
        self.levels[self.region_at(x)]
    }

    pub fn max_level(&self) -> u8 {
        self.levels.iter().copied().max().unwrap_or(1)
    }

    /// Momentum weight for a given lane count: 1 on one lane, `1/α` on two.
    pub fn i_alpha_for_level(&self, level: u8) -> f64 {
        if level == 2 {
            1.0 / self.alpha
        } else {
            1.0
        }
    }

    /// `I_α(x)`.
    pub fn i_alpha_at(&self, x: f64) -> f64 {
        self.i_alpha_for_level(self.level_at(x))
    }

    /// Smallest transition strictly to the right of `x`, as `(index, position)`.
    pub fn next_transition(&self, x: f64) -> Option<(usize, f64)> {
        let k = self.region_at(x);
        self.transitions.get(k).map(|&r| (k + 1, r))
    }

    /// Factor applied to `u + p` when a car crosses transition `j`:
    /// `1/α` into one lane, `α` into two lanes.
    pub fn crossing_factor(&self, j: usize) -> f64 {
        if self.levels[j] == 1 {
            1.0 / self.alpha
        } else {
            self.alpha
        }
    }
}
