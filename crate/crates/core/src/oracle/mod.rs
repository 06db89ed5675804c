//! Value-iteration oracles on a uniform belief grid.
//!
//! Next beliefs are mapped back onto the grid by linear interpolation, so
//! every Bellman backup is a finite weighted sum over grid values. Sweeps
//! are Jacobi style: each one reads only the previous iterate.

mod best_response;
mod exploit;
mod thresholds;
mod value;

pub use best_response::{attacker_br_vi, defender_br_vi};
pub use exploit::{
    exploitability, exploitability_grid, exploitability_mc, ExploitabilityMode, GridExploit,
    McExploit,
};
pub use thresholds::{
    extract_thresholds, non_increasing_within, Region, RowThreshold, ThresholdError,
};
pub use value::{game_value_vi, solve_two_row_game, StageSolution};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::game::{BeliefFallback, State};
use crate::strategy::BeliefGrid;

/// Grid resolution, stopping rule and degenerate-belief handling shared by
/// the oracles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub grid: BeliefGrid,
    pub tol: f64,
    pub max_sweeps: usize,
    pub fallback: BeliefFallback,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            grid: BeliefGrid::new(BeliefGrid::DEFAULT_POINTS).expect("default grid"),
            tol: 1e-6,
            max_sweeps: 10_000,
            fallback: BeliefFallback::UniformAttacker,
        }
    }
}

impl OracleConfig {
    pub fn with_grid(grid: BeliefGrid) -> Self {
        OracleConfig {
            grid,
            ..OracleConfig::default()
        }
    }
}

/// Values on the grid. Defender problems have one row per `l`; attacker
/// problems one row per `(s, l)`, laid out like [`crate::GridStrategy`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridValues {
    pub stops: u32,
    pub grid: BeliefGrid,
    pub values: Vec<f64>,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
    pub sweeps: usize,
    pub converged: bool,
}

impl GridValues {
    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.grid.len();
        &self.values[r * k..(r + 1) * k]
    }

    /// Defender-problem value at `(l, grid index)`.
    pub fn at(&self, l: u32, k: usize) -> f64 {
        self.values[(l as usize - 1) * self.grid.len() + k]
    }

    /// Attacker-problem value at `(s, l, grid index)`.
    pub fn at_state(&self, s: State, l: u32, k: usize) -> f64 {
        self.values[(s.code() * self.stops as usize + l as usize - 1) * self.grid.len() + k]
    }

    pub fn interpolate(&self, row: usize, b: f64) -> f64 {
        self.grid.interpolate(self.row(row), b)
    }
}

/// A successor on the grid: `weight * ((1 - frac) V[idx] + frac V[idx + 1])`.
/// The weight already includes the discount factor.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Outcome {
    pub weight: f64,
    pub idx: u32,
    pub frac: f64,
}

/// One action at one grid state: expected immediate reward plus a slice of
/// the shared outcome buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Backup {
    pub reward: f64,
    pub start: u32,
    pub end: u32,
}

/// Flattened Bellman operator: `actions_per_state` backups per state.
pub(crate) struct Operator {
    pub actions_per_state: usize,
    pub backups: Vec<Backup>,
    pub outcomes: Vec<Outcome>,
}

impl Operator {
    pub fn new(actions_per_state: usize) -> Self {
        Operator {
            actions_per_state,
            backups: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn states(&self) -> usize {
        self.backups.len() / self.actions_per_state
    }

    /// Appends a backup whose successors are given as `(weight, idx, frac)`.
    pub fn push(&mut self, reward: f64, succ: impl IntoIterator<Item = Outcome>) {
        let start = self.outcomes.len() as u32;
        self.outcomes.extend(succ);
        self.backups.push(Backup {
            reward,
            start,
            end: self.outcomes.len() as u32,
        });
    }

    #[inline]
    pub fn q(&self, state: usize, action: usize, v: &[f64]) -> f64 {
        let bk = self.backups[state * self.actions_per_state + action];
        let mut acc = bk.reward;
        for o in &self.outcomes[bk.start as usize..bk.end as usize] {
            let i = o.idx as usize;
            let cont = if o.frac == 0.0 {
                v[i]
            } else {
                v[i] + o.frac * (v[i + 1] - v[i])
            };
            acc += o.weight * cont;
        }
        acc
    }

    /// Jacobi value iteration with `combine` mapping a state's action values
    /// to its new value. Returns values, last residual, sweeps, converged.
    pub fn iterate<F>(&self, tol: f64, max_sweeps: usize, combine: F) -> (Vec<f64>, f64, usize, bool)
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let n = self.states();
        let na = self.actions_per_state;
        let mut v = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut residual = f64::INFINITY;
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            next.par_iter_mut()
                .with_min_len(256)
                .enumerate()
                .for_each(|(i, out)| {
                    let mut qs = [0.0f64; 8];
                    for (a, q) in qs.iter_mut().enumerate().take(na) {
                        *q = self.q(i, a, &v);
                    }
                    *out = combine(&qs[..na]);
                });
            residual = v
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            std::mem::swap(&mut v, &mut next);
            sweeps += 1;
            if residual < tol {
                return (v, residual, sweeps, true);
            }
        }
        (v, residual, sweeps, false)
    }
}

/// Greedy stop indicator from two action values, continuing on near-ties.
pub(crate) fn greedy_stop(q_continue: f64, q_stop: f64) -> f64 {
    if q_stop > q_continue + 1e-9 {
        1.0
    } else {
        0.0
    }
}
