use crate::error::Result;
use crate::game::{predicted_masses, reward, Action, ActionPair, GameConfig, State};
use crate::observation::ObservationModel;

use super::{GridValues, Operator, OracleConfig, Outcome};

/// Optimal mixed play in a zero-sum game where the row player (maximizing)
/// has two actions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSolution {
    pub value: f64,
    /// Probability of the first row.
    pub p_top: f64,
}

/// Solves `max_p min_j p top[j] + (1 - p) bottom[j]`.
///
/// The objective is concave and piecewise linear in `p`, so its maximum is
/// at `p in {0, 1}` or at a crossing of two column lines.
pub fn solve_two_row_game(top: &[f64], bottom: &[f64]) -> StageSolution {
    debug_assert_eq!(top.len(), bottom.len());
    let eval = |p: f64| {
        top.iter()
            .zip(bottom)
            .map(|(t, b)| p * t + (1.0 - p) * b)
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = StageSolution {
        value: eval(0.0),
        p_top: 0.0,
    };
    let mut consider = |p: f64| {
        let v = eval(p);
        if v > best.value {
            best = StageSolution { value: v, p_top: p };
        }
    };
    consider(1.0);
    let n = top.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let slope_i = top[i] - bottom[i];
            let slope_j = top[j] - bottom[j];
            let denom = slope_i - slope_j;
            if denom != 0.0 {
                let p = (bottom[j] - bottom[i]) / denom;
                if p > 0.0 && p < 1.0 {
                    consider(p);
                }
            }
        }
    }
    best
}

/// Attacker decision rules: stop probability in state 0 and state 1.
const RULES: [(f64, f64); 4] = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];

/// Approximate minimax value over `(l, b)`.
///
/// At each grid point the stage game pits the two defender actions against
/// four deterministic attacker rules (one action per live state). Each
/// column's continuation uses the Bayes update under that rule. This is a
/// simplification of the exact one-sided operator and is meant for
/// qualitative checks of the value function's shape.
pub fn game_value_vi(cfg: &GameConfig, obs: &ObservationModel, oc: &OracleConfig) -> Result<GridValues> {
    cfg.validate()?;
    let grid = oc.grid;
    let k_pts = grid.len();
    let stops = cfg.stops;
    // backups ordered (a_d, rule): 0..4 continue, 4..8 stop
    let mut op = Operator::new(8);

    for l in 1..=stops {
        for k in 0..k_pts {
            let b = grid.point(k);
            for a_d in Action::ALL {
                for (p0, p1) in RULES {
                    let a0 = if p0 > 0.0 { Action::Stop } else { Action::Continue };
                    let a1 = if p1 > 0.0 { Action::Stop } else { Action::Continue };
                    let r = (1.0 - b) * reward(State::NoIntrusion, ActionPair::new(a_d, a0), l, cfg)?
                        + b * reward(State::Intrusion, ActionPair::new(a_d, a1), l, cfg)?;
                    let (m0, m1) = predicted_masses(b, a_d, p0, p1, l, cfg)?;
                    let l_next = l - a_d.code();
                    let mut succ = Vec::new();
                    if l_next >= 1 {
                        let base = (l_next as usize - 1) * k_pts;
                        for o in 0..obs.alphabet_size() {
                            let n1 = m1 * obs.pmf1().prob(o);
                            let p = m0 * obs.pmf0().prob(o) + n1;
                            if p > 0.0 {
                                let (lo, frac) = grid.locate(n1 / p);
                                succ.push(Outcome {
                                    weight: cfg.gamma * p,
                                    idx: (base + lo) as u32,
                                    frac,
                                });
                            }
                        }
                    }
                    op.push(r, succ);
                }
            }
        }
    }

    let (values, residual, sweeps, converged) = op.iterate(oc.tol, oc.max_sweeps, |q| {
        solve_two_row_game(&q[4..8], &q[0..4]).value
    });
    Ok(GridValues {
        stops,
        grid,
        values,
        residual,
        sweeps,
        converged,
    })
}
