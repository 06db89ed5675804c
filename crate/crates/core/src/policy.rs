//! Behavioural strategy interfaces shared by the simulator and the oracles.

use crate::game::State;

/// Defender stop probability as a function of stops remaining and belief.
pub trait DefenderPolicy: Sync {
    fn stop_prob(&self, l: u32, b1: f64) -> f64;
}

/// Attacker stop probability. The attacker sees the true state as well as
/// the defender's belief. Returns 0 for the terminal state.
pub trait AttackerPolicy: Sync {
    fn stop_prob(&self, l: u32, b1: f64, s: State) -> f64;
}

/// Defender that stops with a fixed probability everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedDefender(pub f64);

impl DefenderPolicy for FixedDefender {
    fn stop_prob(&self, _l: u32, _b1: f64) -> f64 {
        self.0
    }
}

/// Attacker with a fixed stop probability per live state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedAttacker {
    /// Probability of starting the intrusion in state 0.
    pub attack: f64,
    /// Probability of aborting the intrusion in state 1.
    pub abort: f64,
}

impl FixedAttacker {
    pub fn new(attack: f64, abort: f64) -> Self {
        FixedAttacker { attack, abort }
    }

    pub fn never_attack() -> Self {
        FixedAttacker::new(0.0, 0.0)
    }
}

impl AttackerPolicy for FixedAttacker {
    fn stop_prob(&self, _l: u32, _b1: f64, s: State) -> f64 {
        match s {
            State::NoIntrusion => self.attack,
            State::Intrusion => self.abort,
            State::Terminal => 0.0,
        }
    }
}

impl<T: DefenderPolicy + ?Sized> DefenderPolicy for &T {
    fn stop_prob(&self, l: u32, b1: f64) -> f64 {
        (**self).stop_prob(l, b1)
    }
}

impl<T: AttackerPolicy + ?Sized> AttackerPolicy for &T {
    fn stop_prob(&self, l: u32, b1: f64, s: State) -> f64 {
        (**self).stop_prob(l, b1, s)
    }
}
