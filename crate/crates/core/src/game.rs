//! State machine of the intrusion response stopping game.
//!
//! Three states (no intrusion, intrusion, terminal), two actions per player
//! (stop / continue), a defender budget of `L` stop actions, and a discrete
//! observation channel that only the defender reads. The defender tracks a
//! scalar belief `b1 = P[s = intrusion]`; the attacker sees everything.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::ObservationModel;
use crate::policy::AttackerPolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    NoIntrusion,
    Intrusion,
    Terminal,
}

impl State {
    /// The two states in which play continues.
    pub const LIVE: [State; 2] = [State::NoIntrusion, State::Intrusion];

    /// Numeric code: 0, 1, and 2 for the terminal state.
    pub fn code(self) -> usize {
        match self {
            State::NoIntrusion => 0,
            State::Intrusion => 1,
            State::Terminal => 2,
        }
    }

    pub fn from_code(code: usize) -> Result<State> {
        match code {
            0 => Ok(State::NoIntrusion),
            1 => Ok(State::Intrusion),
            2 => Ok(State::Terminal),
            _ => Err(Error::InvalidState("unknown state code")),
        }
    }

    pub fn is_live(self) -> bool {
        self != State::Terminal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Continue,
    Stop,
}

impl Action {
    /// Stop encodes 1, continue 0.
    pub fn code(self) -> u32 {
        match self {
            Action::Continue => 0,
            Action::Stop => 1,
        }
    }

    pub const ALL: [Action; 2] = [Action::Continue, Action::Stop];

    /// Draws `Stop` with probability `p_stop`. Always consumes one uniform
    /// draw so that streams stay aligned regardless of `p_stop`.
    pub fn sample<R: Rng + ?Sized>(p_stop: f64, rng: &mut R) -> Action {
        let u: f64 = rng.random();
        if u < p_stop {
            Action::Stop
        } else {
            Action::Continue
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionPair {
    pub defender: Action,
    pub attacker: Action,
}

impl ActionPair {
    pub fn new(defender: Action, attacker: Action) -> Self {
        ActionPair { defender, attacker }
    }

    pub fn all() -> [ActionPair; 4] {
        [
            ActionPair::new(Action::Continue, Action::Continue),
            ActionPair::new(Action::Continue, Action::Stop),
            ActionPair::new(Action::Stop, Action::Continue),
            ActionPair::new(Action::Stop, Action::Stop),
        ]
    }
}

/// Defender belief that an intrusion is ongoing.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Belief(f64);

impl Belief {
    pub const NO_INTRUSION: Belief = Belief(0.0);

    pub fn new(b1: f64) -> Result<Belief> {
        if !(0.0..=1.0).contains(&b1) {
            return Err(Error::InvalidConfig {
                field: "belief",
                reason: format!("{b1} is not a probability"),
            });
        }
        Ok(Belief(b1))
    }

    /// Probability of the intrusion state.
    pub fn intrusion(self) -> f64 {
        self.0
    }

    pub fn no_intrusion(self) -> f64 {
        1.0 - self.0
    }
}

/// Scalar parameters of the game. The initial state is always
/// [`State::NoIntrusion`] with belief 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Maximum number of defender stops `L`.
    pub stops: u32,
    /// Reward for stopping an ongoing intrusion (> 0).
    pub reward_stop: f64,
    /// Cost of a defensive action (< 0).
    pub reward_cost: f64,
    /// Per-step cost while an intrusion is ongoing (< 0).
    pub reward_intrusion: f64,
    pub gamma: f64,
    /// `phi[l - 1]` is the probability that an ongoing intrusion is stopped
    /// when `l` stops remain.
    pub phi: Vec<f64>,
    /// Episode truncation cap.
    pub t_max: u32,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig::with_stops(7)
    }
}

impl GameConfig {
    pub const DEFAULT_T_MAX: u32 = 200;

    /// Default rewards and discount with `stops` stops and `phi_l = 1/(2l)`.
    pub fn with_stops(stops: u32) -> Self {
        GameConfig {
            stops,
            reward_stop: 20.0,
            reward_cost: -2.0,
            reward_intrusion: -1.0,
            gamma: 0.99,
            phi: default_phi(stops),
            t_max: Self::DEFAULT_T_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stops < 1 {
            return Err(invalid("stops", "must be at least 1"));
        }
        if !(self.reward_stop > 0.0 && self.reward_stop.is_finite()) {
            return Err(invalid("reward_stop", "must be positive and finite"));
        }
        if !(self.reward_cost < 0.0 && self.reward_cost.is_finite()) {
            return Err(invalid("reward_cost", "must be negative and finite"));
        }
        if !(self.reward_intrusion < 0.0 && self.reward_intrusion.is_finite()) {
            return Err(invalid("reward_intrusion", "must be negative and finite"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", "must lie in [0, 1)"));
        }
        if self.phi.len() != self.stops as usize {
            return Err(invalid(
                "phi",
                &format!("expected {} entries, got {}", self.stops, self.phi.len()),
            ));
        }
        if self.phi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("phi", "entries must be probabilities"));
        }
        if self.phi.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("phi", "must be non-increasing in l"));
        }
        if self.t_max < 2 {
            return Err(invalid("t_max", "must be at least 2"));
        }
        Ok(())
    }

    pub fn check_stops(&self, l: u32) -> Result<()> {
        if l == 0 || l > self.stops {
            Err(Error::InvalidStops { l, max: self.stops })
        } else {
            Ok(())
        }
    }

    /// Intrusion-stop probability with `l` stops remaining.
    pub fn phi(&self, l: u32) -> f64 {
        self.phi[l as usize - 1]
    }

    /// Largest absolute one-step reward.
    pub fn reward_bound(&self) -> f64 {
        self.reward_stop
            .abs()
            .max(self.reward_cost.abs())
            .max(self.reward_intrusion.abs())
    }

    /// Bias introduced by truncating episodes at `t_max`.
    pub fn truncation_bias_bound(&self) -> f64 {
        self.gamma.powi(self.t_max as i32) * self.reward_bound() / (1.0 - self.gamma)
    }
}

pub fn default_phi(stops: u32) -> Vec<f64> {
    (1..=stops).map(|l| 1.0 / (2.0 * l as f64)).collect()
}

fn invalid(field: &'static str, reason: &str) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.to_string(),
    }
}

/// Distribution of the next state, indexed by [`State::code`].
pub fn next_state_distribution(
    s: State,
    a: ActionPair,
    l: u32,
    cfg: &GameConfig,
) -> Result<[f64; 3]> {
    cfg.check_stops(l)?;
    let mut dist = [0.0; 3];
    let final_stop = l == 1 && a.defender == Action::Stop;
    match s {
        State::Terminal => dist[2] = 1.0,
        _ if final_stop => dist[2] = 1.0,
        State::NoIntrusion => match a.attacker {
            Action::Continue => dist[0] = 1.0,
            Action::Stop => dist[1] = 1.0,
        },
        State::Intrusion => match a.attacker {
            Action::Stop => dist[2] = 1.0,
            Action::Continue => {
                // phi evaluated at the pre-action stop count
                let phi = cfg.phi(l);
                dist[1] = 1.0 - phi;
                dist[2] = phi;
            }
        },
    }
    Ok(dist)
}

pub fn transition_prob(
    s: State,
    s_next: State,
    a: ActionPair,
    l: u32,
    cfg: &GameConfig,
) -> Result<f64> {
    Ok(next_state_distribution(s, a, l, cfg)?[s_next.code()])
}

pub fn sample_transition<R: Rng + ?Sized>(
    s: State,
    a: ActionPair,
    l: u32,
    cfg: &GameConfig,
    rng: &mut R,
) -> Result<State> {
    let dist = next_state_distribution(s, a, l, cfg)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (code, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return State::from_code(code);
        }
    }
    // u landed in the rounding gap above the cumulative sum
    let last = dist.iter().rposition(|&p| p > 0.0).unwrap_or(2);
    State::from_code(last)
}

/// Defender reward; the attacker receives the negation.
pub fn reward(s: State, a: ActionPair, l: u32, cfg: &GameConfig) -> Result<f64> {
    cfg.check_stops(l)?;
    let lf = l as f64;
    let r = match (s, a.defender, a.attacker) {
        (State::Terminal, _, _) => 0.0,
        (State::Intrusion, _, Action::Stop) => 0.0,
        (State::NoIntrusion, Action::Continue, _) => 0.0,
        (State::NoIntrusion, Action::Stop, _) => cfg.reward_cost / lf,
        (State::Intrusion, Action::Stop, Action::Continue) => cfg.reward_stop / lf,
        (State::Intrusion, Action::Continue, Action::Continue) => cfg.reward_intrusion,
    };
    Ok(r)
}

/// What to do when an observation has zero probability under the
/// defender's attacker model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeliefFallback {
    /// Keep the previous belief.
    CarryForward,
    /// Redo the update assuming the attacker picks each action with
    /// probability 1/2; carry forward if that is degenerate as well.
    #[default]
    UniformAttacker,
}

/// Unnormalized live-state masses `(m0, m1)` after the transition, before
/// weighting by the observation likelihood. `p_attack` is the attacker's stop
/// probability in state 0, `p_abort` in state 1.
pub(crate) fn predicted_masses(
    b1: f64,
    a_d: Action,
    p_attack: f64,
    p_abort: f64,
    l: u32,
    cfg: &GameConfig,
) -> Result<(f64, f64)> {
    let mut m = [0.0; 2];
    for (s, prior) in [(State::NoIntrusion, 1.0 - b1), (State::Intrusion, b1)] {
        if prior == 0.0 {
            continue;
        }
        let p_stop = if s == State::NoIntrusion { p_attack } else { p_abort };
        for (a_a, pa) in [(Action::Continue, 1.0 - p_stop), (Action::Stop, p_stop)] {
            if pa == 0.0 {
                continue;
            }
            let dist = next_state_distribution(s, ActionPair::new(a_d, a_a), l, cfg)?;
            m[0] += prior * pa * dist[0];
            m[1] += prior * pa * dist[1];
        }
    }
    Ok((m[0], m[1]))
}

/// Bayes update of the defender belief, conditioned on the game still being
/// live. `l` is the stop count before the defender's action.
pub fn belief_update(
    b: Belief,
    a_d: Action,
    o: usize,
    attacker_model: &dyn AttackerPolicy,
    l: u32,
    obs: &ObservationModel,
    cfg: &GameConfig,
) -> Result<Belief> {
    cfg.check_stops(l)?;
    obs.check_symbol(o)?;
    let b1 = b.intrusion();
    let p_attack = attacker_model.stop_prob(l, b1, State::NoIntrusion);
    let p_abort = attacker_model.stop_prob(l, b1, State::Intrusion);
    let (m0, m1) = predicted_masses(b1, a_d, p_attack, p_abort, l, cfg)?;
    posterior(m0, m1, o, obs).map(Belief)
}

pub(crate) fn posterior(m0: f64, m1: f64, o: usize, obs: &ObservationModel) -> Result<f64> {
    let n0 = m0 * obs.pmf0().prob(o);
    let n1 = m1 * obs.pmf1().prob(o);
    let norm = n0 + n1;
    if norm <= 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateBelief);
    }
    Ok((n1 / norm).clamp(0.0, 1.0))
}

/// [`belief_update`] with a fallback for degenerate updates. The flag reports
/// whether the fallback was used.
pub fn belief_update_or_fallback(
    b: Belief,
    a_d: Action,
    o: usize,
    attacker_model: &dyn AttackerPolicy,
    l: u32,
    obs: &ObservationModel,
    cfg: &GameConfig,
    fallback: BeliefFallback,
) -> Result<(Belief, bool)> {
    match belief_update(b, a_d, o, attacker_model, l, obs, cfg) {
        Ok(next) => Ok((next, false)),
        Err(Error::DegenerateBelief) => {
            let next = match fallback {
                BeliefFallback::CarryForward => b,
                BeliefFallback::UniformAttacker => {
                    let (m0, m1) = predicted_masses(b.intrusion(), a_d, 0.5, 0.5, l, cfg)?;
                    posterior(m0, m1, o, obs).map(Belief).unwrap_or(b)
                }
            };
            Ok((next, true))
        }
        Err(e) => Err(e),
    }
}
