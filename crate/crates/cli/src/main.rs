//! `stopgame`: fit observation models, train threshold strategies, and
//! evaluate, simulate and solve the stopping game from the command line.
//!
//! Exit status: 0 success, 1 usage error, 2 validation error (bad input
//! files or values), 3 numeric failure. Non-convergence only warns unless
//! `--strict` is given, in which case it exits with 3.

mod manifest;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use stopping_game::io::{
    load_game_config, load_observation_model, load_strategy, save_observation_model,
    save_strategy, write_history, write_traces, write_value_table, StrategyFile,
};
use stopping_game::observation::{fit_gmm_em, kl_divergence, tp2_check};
use stopping_game::oracle::{exploitability_mc, game_value_vi, OracleConfig};
use stopping_game::sim::{episode_stats, simulate, DefenderAgent, Matchup, ObjectiveEstimate};
use stopping_game::tfp::{tfp_run_with, TfpHyper, TfpRecord};
use stopping_game::{
    AttackerPolicy, BeliefFallback, BeliefGrid, DefenderPolicy, Error, GameConfig,
    ObservationModel, Player,
};

use manifest::{sibling, RunManifest};

#[derive(Parser)]
#[command(name = "stopgame", version, about = "Optimal stopping game of intrusion response")]
struct Cli {
    /// Cap on worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Treat non-convergence as a failure (exit status 3).
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-state Gaussian mixtures to labelled samples and write an
    /// observation model.
    FitObs(FitObsArgs),
    /// Run threshold fictitious play.
    Train(TrainArgs),
    /// Estimate the exploitability of a strategy pair.
    Exploit(ExploitArgs),
    /// Approximate the game value on a belief grid.
    Value(ValueArgs),
    /// Simulate episodes and write traces plus a summary.
    Simulate(SimulateArgs),
    /// Write a baseline defender strategy file.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct GameArgs {
    /// Game config (TOML); missing fields take the standard defaults.
    #[arg(long)]
    game: Option<PathBuf>,
    /// Observation model; overrides the reference in the game config.
    #[arg(long)]
    obs: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fallback {
    CarryForward,
    UniformAttacker,
}

impl From<Fallback> for BeliefFallback {
    fn from(f: Fallback) -> Self {
        match f {
            Fallback::CarryForward => BeliefFallback::CarryForward,
            Fallback::UniformAttacker => BeliefFallback::UniformAttacker,
        }
    }
}

#[derive(Args)]
struct FitObsArgs {
    /// CSV with columns `state,value`, state 0 or 1.
    #[arg(long)]
    samples: PathBuf,
    /// Mixture components for state 0 and state 1, e.g. `2,3`.
    #[arg(long, value_delimiter = ',', required = true)]
    components: Vec<usize>,
    #[arg(long)]
    alphabet: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    game: GameArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Maximum outer iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// SPSA iterations per best response.
    #[arg(long)]
    n_inner: Option<usize>,
    #[arg(long)]
    br_episodes: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Exploitability target.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Decay `a_n` with `lambda` and `c_n` with `epsilon`.
    #[arg(long)]
    swap_exponents: bool,
    /// Belief grid points for the exploitability oracle.
    #[arg(long, default_value_t = BeliefGrid::DEFAULT_POINTS)]
    grid: usize,
    #[arg(long, value_enum, default_value_t = Fallback::UniformAttacker)]
    fallback: Fallback,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    defender: PathBuf,
    #[arg(long)]
    attacker: PathBuf,
    /// Defender whose stop probability a threshold attacker reacts to;
    /// defaults to `--defender`. Needed when the defender is a baseline.
    #[arg(long)]
    reacts_to: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Fallback::UniformAttacker)]
    fallback: Fallback,
}

#[derive(Args)]
struct ExploitArgs {
    #[command(flatten)]
    game: GameArgs,
    #[command(flatten)]
    matchup: MatchArgs,
    #[arg(long, default_value_t = BeliefGrid::DEFAULT_POINTS)]
    grid: usize,
}

#[derive(Args)]
struct ValueArgs {
    #[command(flatten)]
    game: GameArgs,
    #[arg(long, default_value_t = BeliefGrid::DEFAULT_POINTS)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    game: GameArgs,
    #[command(flatten)]
    matchup: MatchArgs,
    /// Trace CSV; the summary goes to `<out>.summary.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineName {
    AlertThreshold,
    IntrusionOracle,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    name: BaselineName,
    /// Alert level that triggers a stop (alert-threshold only).
    #[arg(long)]
    threshold: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

/// Non-convergence under `--strict`.
#[derive(Debug)]
struct NotConverged(String);

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} did not converge", self.0)
    }
}

impl std::error::Error for NotConverged {}

fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NotConverged>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonFinite(_)) => 3,
        _ => 2,
    }
}

fn check_convergence(strict: bool, what: &str, converged: bool) -> Result<()> {
    match (converged, strict) {
        (true, _) => Ok(()),
        (false, true) => Err(NotConverged(what.to_string()).into()),
        (false, false) => {
            eprintln!("warning: {what} did not converge");
            Ok(())
        }
    }
}

struct Loaded {
    cfg: GameConfig,
    obs: ObservationModel,
    config_path: Option<PathBuf>,
    obs_path: PathBuf,
}

fn load_game(args: &GameArgs) -> Result<Loaded> {
    let (cfg, referenced) = match &args.game {
        Some(p) => load_game_config(p).with_context(|| format!("game config {}", p.display()))?,
        None => (GameConfig::default(), None),
    };
    let obs_path = args.obs.clone().or(referenced).ok_or_else(|| {
        anyhow!(Error::Parse(
            "no observation model: pass --obs or set `observations` in the game config".into()
        ))
    })?;
    let obs = load_observation_model(&obs_path)
        .with_context(|| format!("observation model {}", obs_path.display()))?;
    Ok(Loaded {
        cfg,
        obs,
        config_path: args.game.clone(),
        obs_path,
    })
}

fn oracle_config(grid: usize, fallback: BeliefFallback) -> Result<OracleConfig> {
    Ok(OracleConfig {
        fallback,
        ..OracleConfig::with_grid(BeliefGrid::new(grid)?)
    })
}

fn load_for(path: &Path, player: Player, cfg: &GameConfig) -> Result<stopping_game::io::Strategy> {
    let s = load_strategy(path).with_context(|| format!("strategy {}", path.display()))?;
    if s.player() != player {
        return Err(Error::StrategyMismatch(format!(
            "{} holds a {:?} strategy, expected {player:?}",
            path.display(),
            s.player()
        ))
        .into());
    }
    if let Some(l) = s.stops() {
        if l != cfg.stops {
            return Err(Error::StrategyMismatch(format!(
                "{} is for L = {l}, the game has L = {}",
                path.display(),
                cfg.stops
            ))
            .into());
        }
    }
    Ok(s)
}

fn defender_policy(s: &stopping_game::io::Strategy) -> Option<&dyn DefenderPolicy> {
    use stopping_game::io::Strategy::*;
    match s {
        Threshold(m) => Some(m),
        Grid(g) => Some(g),
        Baseline(_) => None,
    }
}

/// Loads both sides of a match and hands them to `f`. Threshold attackers
/// are bound to the defender they react to; the same attacker drives the
/// defender's belief.
fn with_matchup<T>(
    cfg: &GameConfig,
    args: &MatchArgs,
    f: impl FnOnce(DefenderAgent<'_>, &dyn AttackerPolicy) -> Result<T>,
) -> Result<T> {
    use stopping_game::io::Strategy;
    let defender = load_for(&args.defender, Player::Defender, cfg)?;
    let attacker = load_for(&args.attacker, Player::Attacker, cfg)?;
    let reference = args
        .reacts_to
        .as_deref()
        .map(|p| load_for(p, Player::Defender, cfg))
        .transpose()?;
    let agent = match &defender {
        Strategy::Baseline(b) => DefenderAgent::Baseline(*b),
        other => DefenderAgent::Policy(defender_policy(other).expect("belief-based defender")),
    };
    match &attacker {
        Strategy::Grid(g) => f(agent, g),
        Strategy::Threshold(m) => {
            let target = reference.as_ref().unwrap_or(&defender);
            let d = defender_policy(target).ok_or_else(|| {
                anyhow!(Error::StrategyMismatch(
                    "a threshold attacker needs a belief-based defender to react to; pass --reacts-to".into()
                ))
            })?;
            f(agent, &m.bind(d)?)
        }
        Strategy::Baseline(_) => unreachable!("baselines are defender strategies"),
    }
}

fn fit_obs(args: &FitObsArgs, strict: bool) -> Result<()> {
    #[derive(Deserialize)]
    struct Row {
        state: u8,
        value: f64,
    }
    if args.components.len() != 2 {
        bail!(Error::InvalidConfig {
            field: "components",
            reason: format!("expected two counts, got {}", args.components.len()),
        });
    }
    let manifest_path = sibling(&args.out, "manifest.json");
    RunManifest::new("fit-obs")
        .config(Some(&args.samples))
        .artifact(&args.out)
        .write(&manifest_path)?;

    let mut by_state = [Vec::new(), Vec::new()];
    let mut reader = csv::Reader::from_path(&args.samples)
        .map_err(|e| Error::Parse(format!("{}: {e}", args.samples.display())))?;
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("{}: {e}", args.samples.display())))?;
        match row.state {
            0 | 1 => by_state[row.state as usize].push(row.value),
            s => bail!(Error::Parse(format!("row {}: state {s} is not 0 or 1", i + 1))),
        }
    }
    let fit0 = fit_gmm_em(&by_state[0], args.components[0], args.alphabet)?;
    let fit1 = fit_gmm_em(&by_state[1], args.components[1], args.alphabet)?;
    check_convergence(strict, "EM for state 0", fit0.converged)?;
    check_convergence(strict, "EM for state 1", fit1.converged)?;
    let model = ObservationModel::new(fit0.pmf, fit1.pmf)?;
    save_observation_model(&args.out, &model)?;

    let tp2 = tp2_check(&model);
    match tp2.violation {
        None => println!("TP-2: holds"),
        Some((i, j)) => println!("TP-2: violated at symbols ({i}, {j})"),
    }
    match kl_divergence(model.pmf0(), model.pmf1()) {
        Ok(kl) => println!("KL(f0 || f1) = {kl}"),
        Err(e) => println!("KL(f0 || f1) undefined: {e}"),
    }
    Ok(())
}

fn train(args: &TrainArgs, strict: bool) -> Result<()> {
    let game = load_game(&args.game)?;
    let d = TfpHyper::default();
    let h = TfpHyper {
        a: args.a.unwrap_or(d.a),
        c: args.c.unwrap_or(d.c),
        n_inner: args.n_inner.unwrap_or(d.n_inner),
        delta: args.delta.unwrap_or(d.delta),
        max_outer: args.iters.unwrap_or(d.max_outer),
        br_episodes: args.br_episodes.unwrap_or(d.br_episodes),
        eval_episodes: args.eval_episodes.unwrap_or(d.eval_episodes),
        swap_exponents: args.swap_exponents,
        fallback: args.fallback.into(),
        ..d
    };
    h.validate()?;
    let oc = oracle_config(args.grid, h.fallback)?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let history_path = args.out_dir.join("history.csv");
    let defender_path = args.out_dir.join("defender.toml");
    let attacker_path = args.out_dir.join("attacker.toml");
    RunManifest::new("train")
        .config(game.config_path.as_deref())
        .config(Some(&game.obs_path))
        .seed(args.seed)
        .artifact(&history_path)
        .artifact(&defender_path)
        .artifact(&attacker_path)
        .write(&args.out_dir.join("manifest.json"))?;

    let mut records: Vec<TfpRecord> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    // checkpoint after every iteration so an interrupted run keeps its
    // mixtures and learning curve
    let outcome = tfp_run_with(&game.cfg, &game.obs, &h, &oc, &mut rng, |rec, mix_d, mix_a| {
        records.push(*rec);
        let file = File::create(&history_path).map_err(|e| Error::Parse(e.to_string()))?;
        write_history(BufWriter::new(file), &records)?;
        save_strategy(&defender_path, &stopping_game::io::Strategy::Threshold(mix_d.clone()))?;
        save_strategy(&attacker_path, &stopping_game::io::Strategy::Threshold(mix_a.clone()))?;
        eprintln!(
            "iteration {}: exploitability {:.4}, J_D {:.4}",
            rec.iteration, rec.exploitability, rec.j_d
        );
        Ok(())
    })?;
    if records.is_empty() {
        write_history(BufWriter::new(File::create(&history_path)?), &records)?;
        save_strategy(&defender_path, &stopping_game::io::Strategy::Threshold(outcome.defender.clone()))?;
        save_strategy(&attacker_path, &stopping_game::io::Strategy::Threshold(outcome.attacker.clone()))?;
    }
    if let Some(last) = outcome.history.records.last() {
        println!(
            "{} iterations, final exploitability {}",
            last.iteration, last.exploitability
        );
    }
    check_convergence(strict, "fictitious play", outcome.history.converged)
}

fn exploit(args: &ExploitArgs, strict: bool) -> Result<()> {
    let game = load_game(&args.game)?;
    let m = &args.matchup;
    let oc = oracle_config(args.grid, m.fallback.into())?;
    let rep = with_matchup(&game.cfg, m, |agent, attacker| {
        let DefenderAgent::Policy(defender) = agent else {
            bail!(Error::StrategyMismatch(
                "exploitability needs a belief-based defender, not a baseline".into()
            ))
        };
        Ok(exploitability_mc(&game.cfg, &game.obs, defender, attacker, &oc, m.episodes, m.seed)?)
    })?;
    println!(
        "exploitability {} (std error {}, 95% CI [{}, {}])",
        rep.value, rep.std_error, rep.ci95.0, rep.ci95.1
    );
    println!(
        "defender term {} (std error {}), attacker term {} (std error {})",
        rep.defender_term.mean, rep.defender_term.std_error, rep.attacker_term.mean, rep.attacker_term.std_error
    );
    println!("grid exploitability {}", rep.grid.value);
    check_convergence(strict, "best-response value iteration", rep.grid.converged)
}

fn value(args: &ValueArgs, strict: bool) -> Result<()> {
    let game = load_game(&args.game)?;
    let oc = oracle_config(args.grid, BeliefFallback::default())?;
    RunManifest::new("value")
        .config(game.config_path.as_deref())
        .config(Some(&game.obs_path))
        .artifact(&args.out)
        .write(&sibling(&args.out, "manifest.json"))?;
    let values = game_value_vi(&game.cfg, &game.obs, &oc)?;
    let file = File::create(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    write_value_table(BufWriter::new(file), &values, Player::Defender, None)?;
    println!(
        "value at (L, b = 0): {} after {} sweeps (residual {})",
        values.at(game.cfg.stops, 0),
        values.sweeps,
        values.residual
    );
    check_convergence(strict, "game value iteration", values.converged)
}

fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let game = load_game(&args.game)?;
    let m = &args.matchup;
    let summary_path = sibling(&args.out, "summary.json");
    RunManifest::new("simulate")
        .config(game.config_path.as_deref())
        .config(Some(&game.obs_path))
        .config(Some(&m.defender))
        .config(Some(&m.attacker))
        .config(m.reacts_to.as_deref())
        .seed(m.seed)
        .artifact(&args.out)
        .artifact(&summary_path)
        .write(&sibling(&args.out, "manifest.json"))?;
    let traces = with_matchup(&game.cfg, m, |agent, attacker| {
        let matchup = Matchup {
            cfg: &game.cfg,
            obs: &game.obs,
            defender: agent,
            attacker,
            belief_model: attacker,
            fallback: m.fallback.into(),
        };
        Ok(simulate(&matchup, m.episodes, m.seed)?)
    })?;
    let file = File::create(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    write_traces(BufWriter::new(file), &traces)?;

    let stats = episode_stats(&traces)?;
    let returns: Vec<f64> = traces.iter().map(|t| t.discounted_return).collect();
    let estimate = ObjectiveEstimate::from_samples(&returns)?;
    let summary = json!({
        "episodes": stats.episodes,
        "mean_return": stats.mean_return,
        "std_error": estimate.std_error,
        "mean_episode_length": stats.mean_episode_length,
        "mean_intrusion_length": stats.mean_intrusion_length,
        "degenerate_updates": traces.iter().map(|t| t.degenerate_updates as u64).sum::<u64>(),
        "stop_time_histogram": stats.stop_time_histogram,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(&summary_path, format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn baseline(args: &BaselineArgs) -> Result<()> {
    let name = match args.name {
        BaselineName::AlertThreshold => "alert-threshold",
        BaselineName::IntrusionOracle => "intrusion-oracle",
    };
    if args.threshold.is_some() && matches!(args.name, BaselineName::IntrusionOracle) {
        bail!(Error::InvalidConfig {
            field: "threshold",
            reason: "only applies to alert-threshold".into(),
        });
    }
    RunManifest::new("baseline")
        .artifact(&args.out)
        .write(&sibling(&args.out, "manifest.json"))?;
    let strategy = StrategyFile::Baseline {
        name: name.into(),
        threshold: args.threshold,
    }
    .into_strategy()?;
    save_strategy(&args.out, &strategy)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(Error::InvalidConfig {
                field: "threads",
                reason: "must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::FitObs(a) => fit_obs(a, cli.strict),
        Command::Train(a) => train(a, cli.strict),
        Command::Exploit(a) => exploit(a, cli.strict),
        Command::Value(a) => value(a, cli.strict),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Baseline(a) => baseline(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
