use crate::error::Result;
use crate::game::{GameConfig, State};
use crate::observation::ObservationModel;
use crate::policy::{AttackerPolicy, DefenderPolicy};
use crate::sim::{estimate_objective, DefenderAgent, Matchup, ObjectiveEstimate};
use crate::strategy::{GridStrategy, MixedThresholdStrategy, Player};

use super::{attacker_br_vi, defender_br_vi, GridValues, OracleConfig};

/// How the two best-response terms are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExploitabilityMode {
    /// Read both terms off the oracle value tables at the initial state.
    Grid,
    /// Play the oracle best responses in the simulator.
    MonteCarlo { episodes: usize, seed: u64 },
}

/// Noise-free exploitability from the oracle values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridExploit {
    pub value: f64,
    /// `J_D(br_D, pi_A)`: defender best-response value at `(L, b = 0)`.
    pub defender_term: f64,
    /// `J_A(pi_D, br_A)`: attacker best-response value at `(0, L, b = 0)`.
    pub attacker_term: f64,
    pub defender_br: GridStrategy,
    pub attacker_br: GridStrategy,
    pub defender_values: GridValues,
    pub attacker_values: GridValues,
    pub converged: bool,
}

/// Exploitability with both terms estimated by simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct McExploit {
    pub value: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub defender_term: ObjectiveEstimate,
    pub attacker_term: ObjectiveEstimate,
    pub grid: GridExploit,
}

/// `J_D(br_D, pi_A) + J_A(pi_D, br_A)` from the oracle tables. The
/// defender's belief always follows `attacker`, the announced strategy,
/// since a deviation is not observable to the defender.
pub fn exploitability_grid(
    cfg: &GameConfig,
    obs: &ObservationModel,
    defender: &dyn DefenderPolicy,
    attacker: &dyn AttackerPolicy,
    oc: &OracleConfig,
) -> Result<GridExploit> {
    let (defender_br, defender_values) = defender_br_vi(cfg, obs, attacker, oc)?;
    let (attacker_br, attacker_values) = attacker_br_vi(cfg, obs, defender, attacker, oc)?;
    let defender_term = defender_values.at(cfg.stops, 0);
    let attacker_term = attacker_values.at_state(State::NoIntrusion, cfg.stops, 0);
    Ok(GridExploit {
        value: defender_term + attacker_term,
        defender_term,
        attacker_term,
        converged: defender_values.converged && attacker_values.converged,
        defender_br,
        attacker_br,
        defender_values,
        attacker_values,
    })
}

/// As [`exploitability_grid`], then evaluates each best response against
/// the candidate strategy with `episodes` simulated episodes per term.
pub fn exploitability_mc(
    cfg: &GameConfig,
    obs: &ObservationModel,
    defender: &dyn DefenderPolicy,
    attacker: &dyn AttackerPolicy,
    oc: &OracleConfig,
    episodes: usize,
    seed: u64,
) -> Result<McExploit> {
    let grid = exploitability_grid(cfg, obs, defender, attacker, oc)?;
    let d_term = estimate_objective(
        &Matchup {
            cfg,
            obs,
            defender: DefenderAgent::Policy(&grid.defender_br),
            attacker,
            belief_model: attacker,
            fallback: oc.fallback,
        },
        episodes,
        seed,
    )?;
    let a_term = estimate_objective(
        &Matchup {
            cfg,
            obs,
            defender: DefenderAgent::Policy(defender),
            attacker: &grid.attacker_br,
            belief_model: attacker,
            fallback: oc.fallback,
        },
        episodes,
        seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
    )?
    .negate();
    let value = d_term.mean + a_term.mean;
    let std_error = (d_term.std_error.powi(2) + a_term.std_error.powi(2)).sqrt();
    Ok(McExploit {
        value,
        std_error,
        ci95: (value - 1.96 * std_error, value + 1.96 * std_error),
        defender_term: d_term,
        attacker_term: a_term,
        grid,
    })
}

/// Exploitability of a pair of threshold mixtures. The attacker mixture is
/// evaluated against the defender mixture's stop probability.
pub fn exploitability(
    cfg: &GameConfig,
    obs: &ObservationModel,
    mix_d: &MixedThresholdStrategy,
    mix_a: &MixedThresholdStrategy,
    oc: &OracleConfig,
    mode: ExploitabilityMode,
) -> Result<f64> {
    mix_d.expect_player(Player::Defender)?;
    let attacker = mix_a.bind(mix_d)?;
    match mode {
        ExploitabilityMode::Grid => Ok(exploitability_grid(cfg, obs, mix_d, &attacker, oc)?.value),
        ExploitabilityMode::MonteCarlo { episodes, seed } => {
            Ok(exploitability_mc(cfg, obs, mix_d, &attacker, oc, episodes, seed)?.value)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::binomial_model;
    use crate::policy::{FixedAttacker, FixedDefender};
    use crate::strategy::BeliefGrid;

    #[test]
    fn passive_pair_is_highly_exploitable() {
        let cfg = GameConfig::with_stops(7);
        let obs = binomial_model(6, 0.3, 0.7).unwrap();
        let oc = OracleConfig::with_grid(BeliefGrid::new(51).unwrap());
        let rep = exploitability_grid(&cfg, &obs, &FixedDefender(0.0), &FixedAttacker::never_attack(), &oc)
            .unwrap();
        // attack now, then collect the geometric series one step later
        let series = 1.0 / (1.0 - 0.99 * 13.0 / 14.0);
        assert!((rep.attacker_term - 0.99 * series).abs() < 1e-3);
        assert!(rep.defender_term.abs() < 1e-9);
        assert!(rep.value > 5.0);

        let mc = exploitability_mc(
            &cfg,
            &obs,
            &FixedDefender(0.0),
            &FixedAttacker::never_attack(),
            &oc,
            4000,
            3,
        )
        .unwrap();
        assert!((mc.value - rep.value).abs() < 3.0 * mc.std_error + 0.03);
    }
}
