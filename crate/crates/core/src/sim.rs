//! Episode simulation and Monte Carlo estimates of the defender objective.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{
    belief_update_or_fallback, reward, sample_transition, Action, ActionPair, Belief,
    BeliefFallback, GameConfig, State,
};
use crate::observation::{sample_observation, ObservationModel};
use crate::policy::{AttackerPolicy, DefenderPolicy};
use crate::strategy::{baseline_decide, BaselineContext, BaselineStrategy};

/// The defender side of a match: a belief-based policy or a static baseline.
#[derive(Clone, Copy)]
pub enum DefenderAgent<'a> {
    Policy(&'a dyn DefenderPolicy),
    Baseline(BaselineStrategy),
}

/// Everything needed to play episodes. `belief_model` is the attacker
/// strategy the defender assumes in its belief update; it may differ from
/// `attacker`.
#[derive(Clone, Copy)]
pub struct Matchup<'a> {
    pub cfg: &'a GameConfig,
    pub obs: &'a ObservationModel,
    pub defender: DefenderAgent<'a>,
    pub attacker: &'a dyn AttackerPolicy,
    pub belief_model: &'a dyn AttackerPolicy,
    pub fallback: BeliefFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TerminalReason {
    FinalDefenderStop,
    IntrusionStoppedByChance,
    AttackerAborted,
    Truncated,
}

impl TerminalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalReason::FinalDefenderStop => "final_defender_stop",
            TerminalReason::IntrusionStoppedByChance => "intrusion_stopped_by_chance",
            TerminalReason::AttackerAborted => "attacker_aborted",
            TerminalReason::Truncated => "truncated",
        }
    }
}

/// One step: the state, belief, stops and observation the step starts
/// with, both actions and the defender reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub t: u32,
    pub s: State,
    pub b1: f64,
    pub l: u32,
    pub a_d: Action,
    pub a_a: Action,
    pub o: usize,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<Step>,
    pub terminal_reason: TerminalReason,
    pub discounted_return: f64,
    pub intrusion_start: Option<u32>,
    /// Steps spent in the intrusion state.
    pub intrusion_length: u32,
    /// Belief updates that hit a zero normalizer and used the fallback.
    pub degenerate_updates: u32,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn stop_times(&self) -> impl Iterator<Item = u32> + '_ {
        self.steps
            .iter()
            .filter(|s| s.a_d == Action::Stop)
            .map(|s| s.t)
    }
}

/// Plays one episode from `s = 0`, `b = 0`, `l = L`.
///
/// Random draws per step, in order: defender action (policies only),
/// attacker action, transition, observation of the new state. The first
/// observation is drawn from the initial state and does not move the
/// belief.
pub fn run_episode<R: Rng + ?Sized>(m: &Matchup<'_>, rng: &mut R) -> Result<EpisodeTrace> {
    let cfg = m.cfg;
    let mut s = State::NoIntrusion;
    let mut b = Belief::NO_INTRUSION;
    let mut l = cfg.stops;
    let mut o = sample_observation(m.obs, s, rng)?;
    let mut steps = Vec::new();
    let mut discount = 1.0;
    let mut ret = 0.0;
    let mut intrusion_start = None;
    let mut intrusion_length = 0;
    let mut degenerate_updates = 0;
    let mut reason = TerminalReason::Truncated;

    for t in 1..=cfg.t_max {
        let a_d = match m.defender {
            DefenderAgent::Policy(p) => Action::sample(p.stop_prob(l, b.intrusion()), rng),
            DefenderAgent::Baseline(bl) => baseline_decide(
                &bl,
                &BaselineContext {
                    last_observation: Some(o),
                    intrusion_started: Some(intrusion_start.is_some()),
                    stops_taken: Some(cfg.stops - l),
                    stops: Some(cfg.stops),
                },
            )?,
        };
        // the attacker sees (s, b, l) but not a_d
        let a_a = Action::sample(m.attacker.stop_prob(l, b.intrusion(), s), rng);
        let a = ActionPair::new(a_d, a_a);
        let r = reward(s, a, l, cfg)?;
        steps.push(Step {
            t,
            s,
            b1: b.intrusion(),
            l,
            a_d,
            a_a,
            o,
            r,
        });
        ret += discount * r;
        discount *= cfg.gamma;
        if s == State::Intrusion {
            intrusion_length += 1;
        }

        let next = sample_transition(s, a, l, cfg, rng)?;
        if next == State::Terminal {
            reason = if s == State::Intrusion && a_a == Action::Stop {
                TerminalReason::AttackerAborted
            } else if l == 1 && a_d == Action::Stop {
                TerminalReason::FinalDefenderStop
            } else {
                TerminalReason::IntrusionStoppedByChance
            };
            break;
        }
        let o_next = sample_observation(m.obs, next, rng)?;
        let (b_next, degenerate) =
            belief_update_or_fallback(b, a_d, o_next, m.belief_model, l, m.obs, cfg, m.fallback)?;
        degenerate_updates += degenerate as u32;
        if a_d == Action::Stop {
            l -= 1;
        }
        if next == State::Intrusion && intrusion_start.is_none() {
            intrusion_start = Some(t + 1);
        }
        s = next;
        b = b_next;
        o = o_next;
    }

    Ok(EpisodeTrace {
        steps,
        terminal_reason: reason,
        discounted_return: ret,
        intrusion_start,
        intrusion_length,
        degenerate_updates,
    })
}

/// Independent stream for episode `index` under `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Plays `n` episodes, episode `i` on stream `i` of `seed`. The result does
/// not depend on the thread count.
pub fn simulate(m: &Matchup<'_>, n: usize, seed: u64) -> Result<Vec<EpisodeTrace>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| run_episode(m, &mut episode_rng(seed, i)))
        .collect()
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_episodes: usize,
    pub ci95: (f64, f64),
}

impl ObjectiveEstimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("returns"));
        }
        let n = xs.len();
        let mean = compensated_sum(xs.iter().copied()) / n as f64;
        let std_error = if n > 1 {
            let ss = compensated_sum(xs.iter().map(|x| (x - mean).powi(2)));
            (ss / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(ObjectiveEstimate {
            mean,
            std_error,
            n_episodes: n,
            ci95: (mean - 1.96 * std_error, mean + 1.96 * std_error),
        })
    }

    /// The attacker's objective, `J_A = -J_D`.
    pub fn negate(self) -> Self {
        ObjectiveEstimate {
            mean: -self.mean,
            ci95: (-self.ci95.1, -self.ci95.0),
            ..self
        }
    }
}

/// Monte Carlo estimate of the defender objective `J_D`.
pub fn estimate_objective(m: &Matchup<'_>, n_episodes: usize, seed: u64) -> Result<ObjectiveEstimate> {
    if n_episodes == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let returns: Vec<f64> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| run_episode(m, &mut episode_rng(seed, i)).map(|t| t.discounted_return))
        .collect::<Result<_>>()?;
    ObjectiveEstimate::from_samples(&returns)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_intrusion_length: f64,
    pub mean_episode_length: f64,
    /// Number of defender stops taken at each time step.
    pub stop_time_histogram: BTreeMap<u32, usize>,
}

pub fn episode_stats(traces: &[EpisodeTrace]) -> Result<EpisodeStats> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("traces"));
    }
    let n = traces.len() as f64;
    let mut hist = BTreeMap::new();
    for t in traces.iter().flat_map(|tr| tr.stop_times()) {
        *hist.entry(t).or_insert(0) += 1;
    }
    Ok(EpisodeStats {
        episodes: traces.len(),
        mean_return: compensated_sum(traces.iter().map(|t| t.discounted_return)) / n,
        mean_intrusion_length: compensated_sum(traces.iter().map(|t| t.intrusion_length as f64)) / n,
        mean_episode_length: compensated_sum(traces.iter().map(|t| t.len() as f64)) / n,
        stop_time_histogram: hist,
    })
}
