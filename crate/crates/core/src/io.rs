//! File formats: TOML for configs, observation models and strategies; CSV
//! for value tables, learning curves and traces.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! reading a written file reproduces every value bit for bit.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{default_phi, GameConfig, State};
use crate::observation::{DiscretePmf, ObservationModel};
use crate::oracle::GridValues;
use crate::sim::EpisodeTrace;
use crate::strategy::{
    BaselineStrategy, BeliefGrid, GridStrategy, MixedThresholdStrategy, Player, ThresholdVector,
};
use crate::tfp::TfpRecord;

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(e.to_string())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// On-disk game config; every field is optional and defaults to the
/// standard parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stops: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_stop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_intrusion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<u32>,
    /// Observation-model file, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observations: Option<String>,
}

impl GameConfigFile {
    pub fn resolve(&self) -> Result<GameConfig> {
        let d = GameConfig::with_stops(self.stops.unwrap_or(7));
        let cfg = GameConfig {
            stops: d.stops,
            reward_stop: self.reward_stop.unwrap_or(d.reward_stop),
            reward_cost: self.reward_cost.unwrap_or(d.reward_cost),
            reward_intrusion: self.reward_intrusion.unwrap_or(d.reward_intrusion),
            gamma: self.gamma.unwrap_or(d.gamma),
            phi: self.phi.clone().unwrap_or_else(|| default_phi(d.stops)),
            t_max: self.t_max.unwrap_or(d.t_max),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config(cfg: &GameConfig, observations: Option<String>) -> Self {
        GameConfigFile {
            stops: Some(cfg.stops),
            reward_stop: Some(cfg.reward_stop),
            reward_cost: Some(cfg.reward_cost),
            reward_intrusion: Some(cfg.reward_intrusion),
            gamma: Some(cfg.gamma),
            phi: Some(cfg.phi.clone()),
            t_max: Some(cfg.t_max),
            observations,
        }
    }
}

/// Parses and validates a game config; also returns the observation-model
/// reference if present.
pub fn parse_game_config(text: &str) -> Result<(GameConfig, Option<String>)> {
    let file: GameConfigFile = toml::from_str(text).map_err(parse_err)?;
    Ok((file.resolve()?, file.observations))
}

/// Loads a game config. A relative observation-model path is resolved
/// against the config file's directory.
pub fn load_game_config(path: &Path) -> Result<(GameConfig, Option<PathBuf>)> {
    let (cfg, obs) = parse_game_config(&read(path)?)?;
    let obs = obs.map(|o| {
        let p = PathBuf::from(o);
        if p.is_relative() {
            path.parent().map(|d| d.join(&p)).unwrap_or(p)
        } else {
            p
        }
    });
    Ok((cfg, obs))
}

pub fn game_config_to_string(cfg: &GameConfig, observations: Option<String>) -> Result<String> {
    toml::to_string(&GameConfigFile::from_config(cfg, observations)).map_err(parse_err)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationFile {
    alphabet_size: usize,
    pmf0: Vec<f64>,
    pmf1: Vec<f64>,
}

pub fn parse_observation_model(text: &str) -> Result<ObservationModel> {
    let f: ObservationFile = toml::from_str(text).map_err(parse_err)?;
    if f.pmf0.len() != f.alphabet_size || f.pmf1.len() != f.alphabet_size {
        return Err(Error::AlphabetMismatch {
            left: f.alphabet_size,
            right: if f.pmf0.len() != f.alphabet_size { f.pmf0.len() } else { f.pmf1.len() },
        });
    }
    ObservationModel::new(DiscretePmf::new(f.pmf0)?, DiscretePmf::new(f.pmf1)?)
}

pub fn observation_model_to_string(m: &ObservationModel) -> Result<String> {
    toml::to_string(&ObservationFile {
        alphabet_size: m.alphabet_size(),
        pmf0: m.pmf0().probs().to_vec(),
        pmf1: m.pmf1().probs().to_vec(),
    })
    .map_err(parse_err)
}

pub fn load_observation_model(path: &Path) -> Result<ObservationModel> {
    parse_observation_model(&read(path)?)
}

pub fn save_observation_model(path: &Path, m: &ObservationModel) -> Result<()> {
    write(path, &observation_model_to_string(m)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomEntry {
    pub theta: Vec<f64>,
    pub weight: f64,
}

/// On-disk strategy, tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StrategyFile {
    Threshold {
        player: Player,
        #[serde(rename = "L")]
        stops: u32,
        theta: Vec<f64>,
    },
    Mixed {
        player: Player,
        #[serde(rename = "L")]
        stops: u32,
        atoms: Vec<AtomEntry>,
    },
    Grid {
        player: Player,
        #[serde(rename = "L")]
        stops: u32,
        grid_points: usize,
        table: Vec<f64>,
    },
    Baseline {
        name: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        threshold: Option<u32>,
    },
}

/// A strategy loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    Threshold(MixedThresholdStrategy),
    Grid(GridStrategy),
    Baseline(BaselineStrategy),
}

impl Strategy {
    pub fn player(&self) -> Player {
        match self {
            Strategy::Threshold(m) => m.player(),
            Strategy::Grid(g) => g.player,
            Strategy::Baseline(_) => Player::Defender,
        }
    }

    pub fn stops(&self) -> Option<u32> {
        match self {
            Strategy::Threshold(m) => Some(m.stops()),
            Strategy::Grid(g) => Some(g.stops),
            Strategy::Baseline(_) => None,
        }
    }

    pub fn to_file(&self) -> StrategyFile {
        match self {
            Strategy::Threshold(m) => StrategyFile::Mixed {
                player: m.player(),
                stops: m.stops(),
                atoms: m
                    .atoms()
                    .iter()
                    .zip(m.weights())
                    .map(|(a, w)| AtomEntry {
                        theta: a.theta.clone(),
                        weight: *w,
                    })
                    .collect(),
            },
            Strategy::Grid(g) => StrategyFile::Grid {
                player: g.player,
                stops: g.stops,
                grid_points: g.grid.len(),
                table: g.table.clone(),
            },
            Strategy::Baseline(BaselineStrategy::AlertThreshold { threshold }) => StrategyFile::Baseline {
                name: "alert-threshold".into(),
                threshold: Some(*threshold),
            },
            Strategy::Baseline(BaselineStrategy::IntrusionOracle) => StrategyFile::Baseline {
                name: "intrusion-oracle".into(),
                threshold: None,
            },
        }
    }
}

impl StrategyFile {
    pub fn into_strategy(self) -> Result<Strategy> {
        match self {
            StrategyFile::Threshold { player, stops, theta } => Ok(Strategy::Threshold(
                MixedThresholdStrategy::single(ThresholdVector::new(player, theta, stops)?)?,
            )),
            StrategyFile::Mixed { player, stops, atoms } => {
                let (vecs, weights): (Vec<_>, Vec<_>) = atoms
                    .into_iter()
                    .map(|a| Ok((ThresholdVector::new(player, a.theta, stops)?, a.weight)))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip();
                Ok(Strategy::Threshold(MixedThresholdStrategy::new(vecs, weights)?))
            }
            StrategyFile::Grid {
                player,
                stops,
                grid_points,
                table,
            } => Ok(Strategy::Grid(GridStrategy::new(
                player,
                stops,
                BeliefGrid::new(grid_points)?,
                table,
            )?)),
            StrategyFile::Baseline { name, threshold } => {
                let bl = match name.as_str() {
                    "alert-threshold" => BaselineStrategy::AlertThreshold {
                        threshold: threshold.unwrap_or(1),
                    },
                    "intrusion-oracle" => BaselineStrategy::IntrusionOracle,
                    other => return Err(Error::Parse(format!("unknown baseline `{other}`"))),
                };
                bl.validate()?;
                Ok(Strategy::Baseline(bl))
            }
        }
    }
}

pub fn parse_strategy(text: &str) -> Result<Strategy> {
    let f: StrategyFile = toml::from_str(text).map_err(parse_err)?;
    f.into_strategy()
}

pub fn strategy_to_string(s: &Strategy) -> Result<String> {
    toml::to_string(&s.to_file()).map_err(parse_err)
}

pub fn load_strategy(path: &Path) -> Result<Strategy> {
    parse_strategy(&read(path)?)
}

pub fn save_strategy(path: &Path, s: &Strategy) -> Result<()> {
    write(path, &strategy_to_string(s)?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Value table with columns `l,b,value` for defender problems or
/// `l,s,b,value` for attacker problems, plus `stop_prob` when a strategy
/// is given.
pub fn write_value_table<W: Write>(
    out: W,
    values: &GridValues,
    player: Player,
    strategy: Option<&GridStrategy>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["l"];
    if player == Player::Attacker {
        header.push("s");
    }
    header.extend(["b", "value"]);
    if strategy.is_some() {
        header.push("stop_prob");
    }
    w.write_record(&header).map_err(csv_err)?;
    let k = values.grid.len();
    let rows = values.values.len() / k;
    for r in 0..rows {
        let l = r % values.stops as usize + 1;
        let s = r / values.stops as usize;
        for i in 0..k {
            let mut rec = vec![l.to_string()];
            if player == Player::Attacker {
                rec.push(s.to_string());
            }
            rec.push(values.grid.point(i).to_string());
            rec.push(values.values[r * k + i].to_string());
            if let Some(gs) = strategy {
                rec.push(gs.table[r * k + i].to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub const HISTORY_HEADER: [&str; 5] = [
    "iteration",
    "exploitability",
    "J_D",
    "mean_episode_len",
    "mean_intrusion_len",
];

pub fn history_row(r: &TfpRecord) -> [String; 5] {
    [
        r.iteration.to_string(),
        r.exploitability.to_string(),
        r.j_d.to_string(),
        r.mean_episode_len.to_string(),
        r.mean_intrusion_len.to_string(),
    ]
}

pub fn write_history<W: Write>(out: W, records: &[TfpRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(history_row(r)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

fn state_label(s: State) -> &'static str {
    match s {
        State::NoIntrusion => "0",
        State::Intrusion => "1",
        State::Terminal => "T",
    }
}

/// One row per step, `episode,t,s,b1,l,a_D,a_A,o,r`, followed per episode
/// by a footer row `episode,end,<terminal_reason>,,,,,,<discounted_return>`.
pub fn write_traces<W: Write>(out: W, traces: &[EpisodeTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "t", "s", "b1", "l", "a_D", "a_A", "o", "r"])
        .map_err(csv_err)?;
    for (e, tr) in traces.iter().enumerate() {
        let ep = e.to_string();
        for st in &tr.steps {
            w.write_record([
                ep.as_str(),
                &st.t.to_string(),
                state_label(st.s),
                &st.b1.to_string(),
                &st.l.to_string(),
                &st.a_d.code().to_string(),
                &st.a_a.code().to_string(),
                &st.o.to_string(),
                &st.r.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.write_record([
            ep.as_str(),
            "end",
            tr.terminal_reason.as_str(),
            "",
            "",
            "",
            "",
            "",
            &tr.discounted_return.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::binomial_model;
    use crate::sim::{simulate, DefenderAgent, Matchup};
    use crate::policy::{FixedAttacker, FixedDefender};
    use crate::game::BeliefFallback;

    #[test]
    fn empty_config_gives_defaults() {
        let (cfg, obs) = parse_game_config("").unwrap();
        assert_eq!(cfg, GameConfig::default());
        assert!(obs.is_none());
    }

    #[test]
    fn invalid_gamma_names_the_field() {
        let err = parse_game_config("gamma = 1.2").unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        let err = parse_game_config("stops = 3\nphi = [0.5, 0.25]").unwrap_err();
        assert!(err.to_string().contains("phi"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line_info() {
        let err = parse_game_config("stops = 3\ngamma = = 0.5").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_game_config("unknown_field = 3").is_err());
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = GameConfig::with_stops(4);
        cfg.gamma = 0.1 + 0.2;
        cfg.phi = vec![0.7, 1.0 / 3.0, 0.2, 0.1];
        let text = game_config_to_string(&cfg, Some("obs.toml".into())).unwrap();
        let (back, obs) = parse_game_config(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(obs.as_deref(), Some("obs.toml"));
    }

    #[test]
    fn observation_round_trip() {
        let m = binomial_model(13, 0.37, 0.71).unwrap();
        let back = parse_observation_model(&observation_model_to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(parse_observation_model("alphabet_size = 3\npmf0 = [0.5, 0.5]\npmf1 = [1.0, 0.0, 0.0]").is_err());
    }

    #[test]
    fn strategy_round_trips_are_bit_exact() {
        let atoms = vec![
            ThresholdVector::new(Player::Attacker, vec![0.1, -2.0 / 3.0, 1e-300, 5.5], 2).unwrap(),
            ThresholdVector::new(Player::Attacker, vec![std::f64::consts::PI, 0.0, -0.0, 7.25], 2).unwrap(),
        ];
        let mix = MixedThresholdStrategy::new(atoms, vec![0.3, 0.7]).unwrap();
        let grid = GridStrategy::from_fn(Player::Defender, 2, BeliefGrid::new(11).unwrap(), |r, b| {
            (b * 0.77 + r as f64 * 0.01).min(1.0)
        })
        .unwrap();
        for s in [
            Strategy::Threshold(mix),
            Strategy::Grid(grid),
            Strategy::Baseline(BaselineStrategy::AlertThreshold { threshold: 3 }),
            Strategy::Baseline(BaselineStrategy::IntrusionOracle),
        ] {
            let back = parse_strategy(&strategy_to_string(&s).unwrap()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn threshold_kind_loads_as_single_atom() {
        let s = parse_strategy("kind = \"threshold\"\nplayer = \"defender\"\nL = 2\ntheta = [0.5, -0.5]").unwrap();
        match s {
            Strategy::Threshold(m) => assert_eq!(m.atoms().len(), 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_strategy("kind = \"threshold\"\nplayer = \"defender\"\nL = 3\ntheta = [0.5]").is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let cfg = GameConfig::with_stops(1);
        let obs = binomial_model(3, 0.2, 0.6).unwrap();
        let att = FixedAttacker::new(0.0, 0.0);
        let m = Matchup {
            cfg: &cfg,
            obs: &obs,
            defender: DefenderAgent::Policy(&FixedDefender(1.0)),
            attacker: &att,
            belief_model: &att,
            fallback: BeliefFallback::UniformAttacker,
        };
        let traces = simulate(&m, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_traces(&mut buf, &traces).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "episode,t,s,b1,l,a_D,a_A,o,r");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[2].starts_with("0,end,final_defender_stop,"));
        assert!(lines[2].ends_with(",-2"));
    }
}
