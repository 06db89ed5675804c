//! Threshold fictitious play: each outer iteration learns a best response
//! for both players with SPSA against the opponent's empirical mixture,
//! appends it to the player's buffer and re-forms uniform mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{BeliefFallback, GameConfig};
use crate::observation::ObservationModel;
use crate::policy::{AttackerPolicy, DefenderPolicy};
use crate::oracle::{exploitability, ExploitabilityMode, OracleConfig};
use crate::sim::{
    compensated_sum, episode_rng, episode_stats, run_episode, simulate, DefenderAgent, Matchup,
};
use crate::strategy::{MixedThresholdStrategy, Player, ThresholdVector};

/// SPSA gains, iteration counts and the termination target.
#[derive(Clone, Debug, PartialEq)]
pub struct TfpHyper {
    pub a: f64,
    pub c: f64,
    /// Exponent of `c_n = c / n^lambda`.
    pub lambda: f64,
    /// Stability offset in `a_n = a / (n + A)^epsilon`.
    pub big_a: f64,
    /// Exponent of `a_n`.
    pub epsilon: f64,
    /// SPSA iterations per best response.
    pub n_inner: usize,
    /// Stop once exploitability falls below this.
    pub delta: f64,
    pub max_outer: usize,
    /// Episodes averaged per objective evaluation.
    pub br_episodes: usize,
    /// Episodes for the per-iteration `J_D` and episode-length estimates.
    pub eval_episodes: usize,
    /// Use `lambda` for `a_n` and `epsilon` for `c_n` instead.
    pub swap_exponents: bool,
    pub fallback: BeliefFallback,
}

impl Default for TfpHyper {
    fn default() -> Self {
        TfpHyper {
            a: 1.0,
            c: 10.0,
            lambda: 0.602,
            big_a: 100.0,
            epsilon: 0.101,
            n_inner: 50,
            delta: 0.2,
            max_outer: 500,
            br_episodes: 50,
            eval_episodes: 500,
            swap_exponents: false,
            fallback: BeliefFallback::UniformAttacker,
        }
    }
}

impl TfpHyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a", self.a),
            ("c", self.c),
            ("lambda", self.lambda),
            ("A", self.big_a),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig {
                    field,
                    reason: format!("{v} is not positive"),
                });
            }
        }
        if self.epsilon > 1.0 || self.lambda > 1.0 {
            return Err(Error::InvalidConfig {
                field: "epsilon",
                reason: "gain exponents must lie in (0, 1]".into(),
            });
        }
        if self.br_episodes == 0 || self.eval_episodes == 0 {
            return Err(Error::InvalidConfig {
                field: "br_episodes",
                reason: "need at least one episode".into(),
            });
        }
        Ok(())
    }
}

/// `(a_n, c_n) = (a / (n + A)^epsilon, c / n^lambda)` for `n >= 1`.
pub fn spsa_gains(n: usize, h: &TfpHyper) -> (f64, f64) {
    let (ea, ec) = if h.swap_exponents {
        (h.lambda, h.epsilon)
    } else {
        (h.epsilon, h.lambda)
    };
    let n = n.max(1) as f64;
    (h.a / (n + h.big_a).powf(ea), h.c / n.powf(ec))
}

/// Two-point simultaneous-perturbation gradient estimate at `theta` with
/// perturbation size `c_n` and Rademacher directions.
pub fn spsa_gradient<F, R>(mut evaluate: F, theta: &[f64], c_n: f64, rng: &mut R) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    let delta: Vec<f64> = theta
        .iter()
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let high: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + c_n * d).collect();
    let low: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - c_n * d).collect();
    let r_high = evaluate(&high)?;
    let r_low = evaluate(&low)?;
    if !r_high.is_finite() || !r_low.is_finite() {
        return Err(Error::NonFinite("objective evaluation".into()));
    }
    Ok(delta.iter().map(|d| (r_high - r_low) / (2.0 * c_n * d)).collect())
}

/// Runs `n_inner` SPSA ascent steps from `theta`. Both players share this
/// loop; only the objective differs.
pub fn spsa_ascent<F, R>(mut evaluate: F, mut theta: Vec<f64>, h: &TfpHyper, rng: &mut R) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], u64) -> Result<f64>,
    R: Rng + ?Sized,
{
    for n in 1..=h.n_inner {
        let (a_n, c_n) = spsa_gains(n, h);
        // both evaluations of one gradient share their episode streams
        let seed: u64 = rng.random();
        let g = spsa_gradient(|th| evaluate(th, seed), &theta, c_n, rng)?;
        for (t, gk) in theta.iter_mut().zip(&g) {
            *t += a_n * gk;
        }
    }
    Ok(theta)
}

pub fn random_theta<R: Rng + ?Sized>(player: Player, stops: u32, rng: &mut R) -> Vec<f64> {
    (0..player.theta_len(stops))
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

fn mean_return(m: &Matchup<'_>, n: usize, seed: u64) -> Result<f64> {
    let returns = (0..n as u64)
        .map(|i| run_episode(m, &mut episode_rng(seed, i)).map(|t| t.discounted_return))
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(returns) / n as f64)
}

/// Own objective of `player` when it plays `theta` in a match where the
/// defender side is `defender` and the announced attacker is `announced`.
///
/// A learning attacker reacts to `defender`'s stop probability; the
/// defender's belief always follows `announced`.
#[allow(clippy::too_many_arguments)]
fn player_objective(
    cfg: &GameConfig,
    obs: &ObservationModel,
    player: Player,
    theta: &[f64],
    defender: &dyn DefenderPolicy,
    announced: &dyn AttackerPolicy,
    h: &TfpHyper,
    seed: u64,
) -> Result<f64> {
    let learner = MixedThresholdStrategy::single(ThresholdVector::new(player, theta.to_vec(), cfg.stops)?)?;
    match player {
        Player::Defender => mean_return(
            &Matchup {
                cfg,
                obs,
                defender: DefenderAgent::Policy(&learner),
                attacker: announced,
                belief_model: announced,
                fallback: h.fallback,
            },
            h.br_episodes,
            seed,
        ),
        Player::Attacker => {
            let deviating = learner.bind(defender)?;
            mean_return(
                &Matchup {
                    cfg,
                    obs,
                    defender: DefenderAgent::Policy(defender),
                    attacker: &deviating,
                    belief_model: announced,
                    fallback: h.fallback,
                },
                h.br_episodes,
                seed,
            )
            .map(|j| -j)
        }
    }
}

/// SPSA best response of `player` to fixed behaviour: `defender` is the
/// current defender strategy (the attacker reacts to its stop
/// probability) and `announced` the attacker strategy the defender's
/// belief follows. The learner replaces its own side of the match.
pub fn learn_best_response_against<R: Rng + ?Sized>(
    cfg: &GameConfig,
    obs: &ObservationModel,
    player: Player,
    defender: &dyn DefenderPolicy,
    announced: &dyn AttackerPolicy,
    h: &TfpHyper,
    rng: &mut R,
) -> Result<ThresholdVector> {
    let theta0 = random_theta(player, cfg.stops, rng);
    let theta = spsa_ascent(
        |th, seed| player_objective(cfg, obs, player, th, defender, announced, h, seed),
        theta0,
        h,
        rng,
    )?;
    ThresholdVector::new(player, theta, cfg.stops)
}

/// SPSA best response of `player` to the `opponent` mixture. `own_mixed`
/// is the player's current mixture: the attacker reacts to the defender
/// mixture and the defender's belief follows the attacker mixture.
pub fn learn_best_response<R: Rng + ?Sized>(
    cfg: &GameConfig,
    obs: &ObservationModel,
    player: Player,
    opponent: &MixedThresholdStrategy,
    own_mixed: &MixedThresholdStrategy,
    h: &TfpHyper,
    rng: &mut R,
) -> Result<ThresholdVector> {
    own_mixed.expect_player(player)?;
    let (mix_d, mix_a) = match player {
        Player::Defender => (own_mixed, opponent),
        Player::Attacker => (opponent, own_mixed),
    };
    mix_d.expect_player(Player::Defender)?;
    let announced = mix_a.bind(mix_d)?;
    learn_best_response_against(cfg, obs, player, mix_d, &announced, h, rng)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TfpRecord {
    pub iteration: usize,
    pub exploitability: f64,
    pub j_d: f64,
    pub mean_episode_len: f64,
    pub mean_intrusion_len: f64,
    pub defender_atoms: usize,
    pub attacker_atoms: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfpHistory {
    pub records: Vec<TfpRecord>,
    /// Whether exploitability fell below `delta` before `max_outer`.
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct TfpOutcome {
    pub defender: MixedThresholdStrategy,
    pub attacker: MixedThresholdStrategy,
    pub history: TfpHistory,
}

pub fn tfp_run<R: Rng + ?Sized>(
    cfg: &GameConfig,
    obs: &ObservationModel,
    h: &TfpHyper,
    oc: &OracleConfig,
    rng: &mut R,
) -> Result<TfpOutcome> {
    tfp_run_with(cfg, obs, h, oc, rng, |_, _, _| Ok(()))
}

/// [`tfp_run`] with a callback after every outer iteration, used for
/// checkpointing.
pub fn tfp_run_with<R, F>(
    cfg: &GameConfig,
    obs: &ObservationModel,
    h: &TfpHyper,
    oc: &OracleConfig,
    rng: &mut R,
    mut on_iteration: F,
) -> Result<TfpOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&TfpRecord, &MixedThresholdStrategy, &MixedThresholdStrategy) -> Result<()>,
{
    cfg.validate()?;
    h.validate()?;
    let mut buf_d = vec![ThresholdVector::new(
        Player::Defender,
        random_theta(Player::Defender, cfg.stops, rng),
        cfg.stops,
    )?];
    let mut buf_a = vec![ThresholdVector::new(
        Player::Attacker,
        random_theta(Player::Attacker, cfg.stops, rng),
        cfg.stops,
    )?];
    let mut mix_d = MixedThresholdStrategy::uniform(buf_d.clone())?;
    let mut mix_a = MixedThresholdStrategy::uniform(buf_a.clone())?;
    let mut history = TfpHistory::default();

    for iteration in 1..=h.max_outer {
        // both best responses read the same frozen mixtures
        let (seed_d, seed_a, seed_eval) = (rng.random::<u64>(), rng.random::<u64>(), rng.random::<u64>());
        let (br_d, br_a) = rayon::join(
            || {
                let mut r = ChaCha8Rng::seed_from_u64(seed_d);
                learn_best_response(cfg, obs, Player::Defender, &mix_a, &mix_d, h, &mut r)
            },
            || {
                let mut r = ChaCha8Rng::seed_from_u64(seed_a);
                learn_best_response(cfg, obs, Player::Attacker, &mix_d, &mix_a, h, &mut r)
            },
        );
        buf_d.push(br_d?);
        buf_a.push(br_a?);
        mix_d = MixedThresholdStrategy::uniform(buf_d.clone())?;
        mix_a = MixedThresholdStrategy::uniform(buf_a.clone())?;

        let delta_hat = exploitability(cfg, obs, &mix_d, &mix_a, oc, ExploitabilityMode::Grid)?;
        let announced = mix_a.bind(&mix_d)?;
        let traces = simulate(
            &Matchup {
                cfg,
                obs,
                defender: DefenderAgent::Policy(&mix_d),
                attacker: &announced,
                belief_model: &announced,
                fallback: h.fallback,
            },
            h.eval_episodes,
            seed_eval,
        )?;
        let stats = episode_stats(&traces)?;
        let record = TfpRecord {
            iteration,
            exploitability: delta_hat,
            j_d: stats.mean_return,
            mean_episode_len: stats.mean_episode_length,
            mean_intrusion_len: stats.mean_intrusion_length,
            defender_atoms: buf_d.len(),
            attacker_atoms: buf_a.len(),
        };
        history.records.push(record);
        on_iteration(&record, &mix_d, &mix_a)?;
        if delta_hat < h.delta {
            history.converged = true;
            break;
        }
    }

    Ok(TfpOutcome {
        defender: mix_d,
        attacker: mix_a,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::binomial_model;
    use crate::game::State;
    use crate::policy::{FixedAttacker, FixedDefender};
    use crate::oracle::defender_br_vi;
    use crate::strategy::BeliefGrid;

    #[test]
    fn gain_examples() {
        let h = TfpHyper::default();
        let (a1, c1) = spsa_gains(1, &h);
        assert!((c1 - 10.0).abs() < 1e-12);
        assert!((a1 - 101f64.powf(-0.101)).abs() < 1e-12);
        assert!((a1 - 0.6274).abs() < 1e-4);
        let mut prev = (a1, c1);
        for n in [2, 10, 100, 10_000, 1_000_000] {
            let g = spsa_gains(n, &h);
            assert!(g.0 < prev.0 && g.1 < prev.1);
            prev = g;
        }
        let swapped = TfpHyper {
            swap_exponents: true,
            ..h
        };
        assert!((spsa_gains(1, &swapped).0 - 101f64.powf(-0.602)).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_exact_for_one_dimensional_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = spsa_gradient(|th| Ok(3.5 * th[0]), &[0.7], 2.0, &mut rng).unwrap();
            assert!((g[0] - 3.5).abs() < 1e-12);
        }
        let g = spsa_gradient(|_| Ok(4.0), &[1.0, 2.0, 3.0], 1.0, &mut rng).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(spsa_gradient(|_| Ok(f64::NAN), &[1.0], 1.0, &mut rng).is_err());
    }

    #[test]
    fn gradient_mean_on_quadratic() {
        let target = [0.5, -1.0, 2.0];
        let theta = [1.0, 1.0, -1.0];
        let j = |th: &[f64]| -> Result<f64> {
            Ok(-th.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let g = spsa_gradient(j, &theta, 0.5, &mut rng).unwrap();
            for k in 0..3 {
                mean[k] += g[k] / n as f64;
            }
        }
        let analytic: Vec<f64> = theta.iter().zip(&target).map(|(t, s)| -2.0 * (t - s)).collect();
        let err: f64 = mean.iter().zip(&analytic).map(|(m, a)| (m - a).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 0.05 * norm, "relative error {}", err / norm);
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let cfg = GameConfig::with_stops(2);
        let obs = binomial_model(5, 0.3, 0.7).unwrap();
        let h = TfpHyper {
            n_inner: 0,
            ..TfpHyper::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mix_d = MixedThresholdStrategy::single(
            ThresholdVector::new(Player::Defender, vec![0.0, 0.0], 2).unwrap(),
        )
        .unwrap();
        let mix_a = MixedThresholdStrategy::single(
            ThresholdVector::new(Player::Attacker, vec![0.0; 4], 2).unwrap(),
        )
        .unwrap();
        let theta = learn_best_response(&cfg, &obs, Player::Defender, &mix_a, &mix_d, &h, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(theta.theta, random_theta(Player::Defender, 2, &mut rng));
    }

    #[test]
    fn defender_learns_to_wait_against_passive_attacker() {
        let cfg = GameConfig::with_stops(3);
        let obs = binomial_model(10, 0.3, 0.7).unwrap();
        let h = TfpHyper {
            br_episodes: 20,
            ..TfpHyper::default()
        };
        let passive = FixedAttacker::never_attack();
        let oc = OracleConfig::with_grid(BeliefGrid::new(51).unwrap());
        let (gs, vals) = defender_br_vi(&cfg, &obs, &passive, &oc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let theta =
            learn_best_response_against(&cfg, &obs, Player::Defender, &FixedDefender(0.0), &passive, &h, &mut rng)
                .unwrap();
        let learned = MixedThresholdStrategy::single(theta).unwrap();
        // without attacks the belief never leaves 0
        for l in 1..=3 {
            assert!(learned.stop_prob(l, 0.0) < 0.1);
            assert_eq!(crate::policy::DefenderPolicy::stop_prob(&gs, l, 0.0), 0.0);
            assert!(vals.at(l, 0).abs() < 1e-9);
        }
    }

    #[test]
    fn attacker_learns_to_attack_passive_defender() {
        let cfg = GameConfig::with_stops(3);
        let obs = binomial_model(10, 0.3, 0.7).unwrap();
        let h = TfpHyper {
            br_episodes: 20,
            ..TfpHyper::default()
        };
        let never = FixedDefender(0.0);
        let model = FixedAttacker::new(0.5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = learn_best_response_against(&cfg, &obs, Player::Attacker, &never, &model, &h, &mut rng).unwrap();
        let learned = MixedThresholdStrategy::single(theta).unwrap();
        let bound = learned.bind(&never).unwrap();
        for l in 1..=3 {
            for b in [0.0, 0.5, 1.0] {
                assert!(bound.stop_prob(l, b, State::NoIntrusion) > 0.9);
            }
        }
    }

    #[test]
    fn one_iteration_doubles_buffers() {
        let cfg = GameConfig::with_stops(2);
        let obs = binomial_model(5, 0.3, 0.7).unwrap();
        let h = TfpHyper {
            n_inner: 2,
            br_episodes: 5,
            eval_episodes: 20,
            max_outer: 1,
            ..TfpHyper::default()
        };
        let oc = OracleConfig::with_grid(BeliefGrid::new(21).unwrap());
        let run = |seed| tfp_run(&cfg, &obs, &h, &oc, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let out = run(9);
        assert_eq!(out.history.records.len(), 1);
        assert_eq!(out.defender.atoms().len(), 2);
        assert_eq!(out.attacker.atoms().len(), 2);
        assert_eq!(out.defender.weights(), &[0.5, 0.5]);
        assert_eq!(out.history, run(9).history);
    }
}
