use crate::error::Result;
use crate::game::{
    next_state_distribution, posterior, predicted_masses, reward, Action, ActionPair,
    BeliefFallback, GameConfig, State,
};
use crate::observation::ObservationModel;
use crate::policy::{AttackerPolicy, DefenderPolicy};
use crate::strategy::{GridStrategy, Player};

use super::{greedy_stop, GridValues, Operator, OracleConfig, Outcome};

fn stop_count_after(l: u32, a_d: Action) -> u32 {
    l - a_d.code()
}

/// Expected defender reward in state `s` when the attacker stops with
/// probability `p_a`.
fn mixed_reward(s: State, a_d: Action, p_a: f64, l: u32, cfg: &GameConfig) -> Result<f64> {
    let rc = reward(s, ActionPair::new(a_d, Action::Continue), l, cfg)?;
    let rs = reward(s, ActionPair::new(a_d, Action::Stop), l, cfg)?;
    Ok((1.0 - p_a) * rc + p_a * rs)
}

/// Defender best response by value iteration over `(l, b)`.
///
/// The attacker strategy drives both the true dynamics and the defender's
/// belief update. The returned strategy is greedy with respect to the
/// final values and continues on ties.
pub fn defender_br_vi(
    cfg: &GameConfig,
    obs: &ObservationModel,
    attacker: &dyn AttackerPolicy,
    oc: &OracleConfig,
) -> Result<(GridStrategy, GridValues)> {
    cfg.validate()?;
    let grid = oc.grid;
    let k_pts = grid.len();
    let stops = cfg.stops;
    let mut op = Operator::new(2);

    for l in 1..=stops {
        for k in 0..k_pts {
            let b = grid.point(k);
            let p_attack = attacker.stop_prob(l, b, State::NoIntrusion);
            let p_abort = attacker.stop_prob(l, b, State::Intrusion);
            for a_d in Action::ALL {
                let r = (1.0 - b) * mixed_reward(State::NoIntrusion, a_d, p_attack, l, cfg)?
                    + b * mixed_reward(State::Intrusion, a_d, p_abort, l, cfg)?;
                let (m0, m1) = predicted_masses(b, a_d, p_attack, p_abort, l, cfg)?;
                let l_next = stop_count_after(l, a_d);
                let mut succ = Vec::new();
                if l_next >= 1 {
                    let base = (l_next as usize - 1) * k_pts;
                    for o in 0..obs.alphabet_size() {
                        let n0 = m0 * obs.pmf0().prob(o);
                        let n1 = m1 * obs.pmf1().prob(o);
                        let p = n0 + n1;
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

    let (v, residual, sweeps, converged) =
        op.iterate(oc.tol, oc.max_sweeps, |q| q[0].max(q[1]));
    let table = (0..op.states())
        .map(|i| greedy_stop(op.q(i, 0, &v), op.q(i, 1, &v)))
        .collect();
    Ok((
        GridStrategy::new(Player::Defender, stops, grid, table)?,
        GridValues {
            stops,
            grid,
            values: v,
            residual,
            sweeps,
            converged,
        },
    ))
}

/// Next belief per observation under the defender's model, with the
/// configured fallback for observations the model deems impossible.
fn model_beliefs(
    b: f64,
    a_d: Action,
    l: u32,
    model: &dyn AttackerPolicy,
    obs: &ObservationModel,
    cfg: &GameConfig,
    fallback: BeliefFallback,
) -> Result<Vec<f64>> {
    let (m0, m1) = predicted_masses(
        b,
        a_d,
        model.stop_prob(l, b, State::NoIntrusion),
        model.stop_prob(l, b, State::Intrusion),
        l,
        cfg,
    )?;
    let uniform = match fallback {
        BeliefFallback::UniformAttacker => Some(predicted_masses(b, a_d, 0.5, 0.5, l, cfg)?),
        BeliefFallback::CarryForward => None,
    };
    Ok((0..obs.alphabet_size())
        .map(|o| {
            posterior(m0, m1, o, obs)
                .or_else(|_| match uniform {
                    Some((u0, u1)) => posterior(u0, u1, o, obs),
                    None => Ok(b),
                })
                .unwrap_or(b)
        })
        .collect())
}

/// Attacker best response by value iteration over `(s, l, b)`.
///
/// Values are in the attacker's sign convention (the attacker maximizes
/// `-J_D`). The defender's action is marginalized with its stop
/// probability; its belief moves according to `belief_model`, which need
/// not be the attacker being optimized.
pub fn attacker_br_vi(
    cfg: &GameConfig,
    obs: &ObservationModel,
    defender: &dyn DefenderPolicy,
    belief_model: &dyn AttackerPolicy,
    oc: &OracleConfig,
) -> Result<(GridStrategy, GridValues)> {
    cfg.validate()?;
    let grid = oc.grid;
    let k_pts = grid.len();
    let stops = cfg.stops;
    let row_of = |s: State, l: u32| s.code() * stops as usize + l as usize - 1;
    let mut op = Operator::new(2);

    // per (l, k): defender stop probability and model beliefs per a_d
    let mut kin: Vec<(f64, [Option<Vec<f64>>; 2])> = Vec::with_capacity(stops as usize * k_pts);
    for l in 1..=stops {
        for k in 0..k_pts {
            let b = grid.point(k);
            let p_d = defender.stop_prob(l, b);
            let mut next = [None, None];
            for (slot, a_d) in next.iter_mut().zip(Action::ALL) {
                let p = if a_d == Action::Stop { p_d } else { 1.0 - p_d };
                if p > 0.0 && stop_count_after(l, a_d) >= 1 {
                    *slot = Some(model_beliefs(b, a_d, l, belief_model, obs, cfg, oc.fallback)?);
                }
            }
            kin.push((p_d, next));
        }
    }

    for s in State::LIVE {
        for l in 1..=stops {
            for k in 0..k_pts {
                let (p_d, next) = &kin[(l as usize - 1) * k_pts + k];
                for a_a in Action::ALL {
                    let mut r = 0.0;
                    let mut succ = Vec::new();
                    for (a_d, bnext) in Action::ALL.into_iter().zip(next) {
                        let p = if a_d == Action::Stop { *p_d } else { 1.0 - p_d };
                        if p == 0.0 {
                            continue;
                        }
                        let a = ActionPair::new(a_d, a_a);
                        r -= p * reward(s, a, l, cfg)?;
                        let Some(bnext) = bnext else { continue };
                        let l_next = stop_count_after(l, a_d);
                        let dist = next_state_distribution(s, a, l, cfg)?;
                        for s_next in State::LIVE {
                            let ps = dist[s_next.code()];
                            if ps == 0.0 {
                                continue;
                            }
                            let base = row_of(s_next, l_next) * k_pts;
                            for (o, &b_next) in bnext.iter().enumerate() {
                                let f = obs.likelihood(s_next, o);
                                if f > 0.0 {
                                    let (lo, frac) = grid.locate(b_next);
                                    succ.push(Outcome {
                                        weight: cfg.gamma * p * ps * f,
                                        idx: (base + lo) as u32,
                                        frac,
                                    });
                                }
                            }
                        }
                    }
                    op.push(r, succ);
                }
            }
        }
    }

    let (v, residual, sweeps, converged) =
        op.iterate(oc.tol, oc.max_sweeps, |q| q[0].max(q[1]));
    let table = (0..op.states())
        .map(|i| greedy_stop(op.q(i, 0, &v), op.q(i, 1, &v)))
        .collect();
    Ok((
        GridStrategy::new(Player::Attacker, stops, grid, table)?,
        GridValues {
            stops,
            grid,
            values: v,
            residual,
            sweeps,
            converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{binomial_model, DiscretePmf};
    use crate::policy::{FixedAttacker, FixedDefender};
    use crate::strategy::BeliefGrid;

    fn small_oracle() -> OracleConfig {
        OracleConfig::with_grid(BeliefGrid::new(51).unwrap())
    }

    #[test]
    fn no_attack_means_no_value() {
        let cfg = GameConfig::with_stops(3);
        let obs = binomial_model(6, 0.3, 0.7).unwrap();
        let (gs, vals) = defender_br_vi(&cfg, &obs, &FixedAttacker::never_attack(), &small_oracle()).unwrap();
        assert!(vals.converged);
        for l in 1..=3 {
            assert!(vals.at(l, 0).abs() < 1e-9);
            assert_eq!(gs.row(l as usize - 1)[0], 0.0);
        }
    }

    #[test]
    fn certain_intrusion_single_stop() {
        let mut cfg = GameConfig::with_stops(1);
        cfg.gamma = 0.5;
        let single = DiscretePmf::new(vec![1.0]).unwrap();
        let obs = ObservationModel::new(single.clone(), single).unwrap();
        let (gs, vals) = defender_br_vi(&cfg, &obs, &FixedAttacker::new(0.0, 0.0), &small_oracle()).unwrap();
        let k = vals.grid.len() - 1;
        assert!((vals.at(1, k) - 20.0).abs() < 1e-6);
        assert_eq!(gs.row(0)[k], 1.0);
    }

    #[test]
    fn extra_sweep_moves_values_less_than_tol() {
        let cfg = GameConfig::with_stops(2);
        let obs = binomial_model(5, 0.3, 0.7).unwrap();
        let oc = small_oracle();
        let att = FixedAttacker::new(0.2, 0.1);
        let (_, vals) = defender_br_vi(&cfg, &obs, &att, &oc).unwrap();
        let more = OracleConfig {
            max_sweeps: vals.sweeps + 1,
            tol: 0.0,
            ..oc
        };
        let (_, again) = defender_br_vi(&cfg, &obs, &att, &more).unwrap();
        let diff = vals
            .values
            .iter()
            .zip(&again.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= oc.tol);
    }

    #[test]
    fn attacker_value_against_passive_defender() {
        let cfg = GameConfig::with_stops(7);
        let obs = binomial_model(4, 0.3, 0.7).unwrap();
        let model = FixedAttacker::new(0.5, 0.0);
        let (gs, vals) = attacker_br_vi(&cfg, &obs, &FixedDefender(0.0), &model, &small_oracle()).unwrap();
        let expected = 1.0 / (1.0 - 0.99 * 13.0 / 14.0);
        for k in [0, 10, 50] {
            assert!((vals.at_state(State::Intrusion, 7, k) - expected).abs() < 1e-3);
            assert_eq!(gs.row(gs.row_index(7, Some(State::Intrusion)))[k], 0.0);
        }
        assert!((expected - 12.39).abs() < 0.01);
    }

    #[test]
    fn attacker_aborts_against_certain_stops() {
        let cfg = GameConfig::with_stops(3);
        let obs = binomial_model(6, 0.3, 0.7).unwrap();
        let model = FixedAttacker::new(0.3, 0.2);
        let (gs, vals) = attacker_br_vi(&cfg, &obs, &FixedDefender(1.0), &model, &small_oracle()).unwrap();
        for l in 1..=3 {
            for k in 0..vals.grid.len() {
                assert_eq!(gs.row(gs.row_index(l, Some(State::Intrusion)))[k], 1.0);
                assert!(vals.at_state(State::Intrusion, l, k).abs() < 1e-9);
            }
        }
        assert!(vals.values.iter().all(|v| *v >= -1e-6));
    }
}
