//! Toolkit for a two-player zero-sum optimal stopping game of intrusion
//! response.
//!
//! The defender has `L` stop actions and observes a noisy alert signal; the
//! attacker sees the true state and decides when to start and when to abort
//! an intrusion. The crate provides the game model, strategy
//! representations, a Monte Carlo simulator, threshold fictitious play with
//! SPSA best responses, and grid value-iteration oracles.

pub mod error;
pub mod game;
pub mod io;
pub mod observation;
pub mod oracle;
pub mod policy;
pub mod sim;
pub mod strategy;
pub mod tfp;

pub use error::{Error, Result};
pub use game::{Action, ActionPair, Belief, BeliefFallback, GameConfig, State};
pub use observation::{DiscretePmf, ObservationModel};
pub use policy::{AttackerPolicy, DefenderPolicy};
pub use strategy::{
    BaselineStrategy, BeliefGrid, GridStrategy, MixedThresholdStrategy, Player, ThresholdVector,
};
