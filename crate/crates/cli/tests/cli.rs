use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn stopgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stopgame"))
        .args(args)
        .output()
        .expect("run stopgame")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn put(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Grid strategy file with 11 belief points; `row(r, b)` fills the table.
fn grid_file(player: &str, stops: u32, rows: usize, row: impl Fn(usize, f64) -> f64) -> String {
    let table: Vec<String> = (0..rows)
        .flat_map(|r| (0..11).map(move |i| (r, i as f64 / 10.0)))
        .map(|(r, b)| format!("{:?}", row(r, b)))
        .collect();
    format!(
        "kind = \"grid\"\nplayer = \"{player}\"\nL = {stops}\ngrid_points = 11\ntable = [{}]\n",
        table.join(", ")
    )
}

/// A four-symbol model with disjoint supports: the first observation after
/// an intrusion starts reveals it.
const DISJOINT_OBS: &str = "alphabet_size = 4\npmf0 = [0.6, 0.4, 0.0, 0.0]\npmf1 = [0.0, 0.0, 0.3, 0.7]\n";

const BINOMIAL_OBS: &str = "alphabet_size = 3\npmf0 = [0.6, 0.3, 0.1]\npmf1 = [0.1, 0.3, 0.6]\n";

#[test]
fn train_with_one_iteration_writes_one_history_row() {
    let dir = TempDir::new().unwrap();
    let game = put(dir.path(), "game.toml", "stops = 2\nobservations = \"obs.toml\"\n");
    put(dir.path(), "obs.toml", BINOMIAL_OBS);
    let out = dir.path().join("run");
    let o = stopgame(&[
        "train", "--game", s(&game), "--seed", "3", "--out-dir", s(&out), "--iters", "1",
        "--n-inner", "3", "--br-episodes", "5", "--eval-episodes", "20", "--grid", "21",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 2, "{history}");
    assert_eq!(lines[0], "iteration,exploitability,J_D,mean_episode_len,mean_intrusion_len");
    assert!(lines[1].starts_with("1,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let artifacts: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap())
        .collect();
    for name in ["history.csv", "defender.toml", "attacker.toml", "manifest.json"] {
        assert!(out.join(name).exists());
        assert!(artifacts.iter().any(|a| a.ends_with(name)), "{name} missing from manifest");
    }
    assert_eq!(manifest["seeds"][0], 3);

    // the checkpointed mixtures hold the initial atom plus one best response
    let defender = std::fs::read_to_string(out.join("defender.toml")).unwrap();
    assert!(defender.contains("kind = \"mixed\""));
    assert_eq!(defender.matches("[[atoms]]").count(), 2);
}

#[test]
fn training_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let obs = put(dir.path(), "obs.toml", BINOMIAL_OBS);
    let game = put(dir.path(), "game.toml", "stops = 1\n");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = stopgame(&[
            "train", "--game", s(&game), "--obs", s(&obs), "--seed", "11", "--out-dir", s(&out),
            "--iters", "2", "--n-inner", "3", "--br-episodes", "5", "--eval-episodes", "20",
            "--grid", "11", "--threads", "2",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            std::fs::read(out.join("history.csv")).unwrap(),
            std::fs::read(out.join("attacker.toml")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn always_stop_with_one_stop_costs_the_false_alarm() {
    let dir = TempDir::new().unwrap();
    let game = put(dir.path(), "game.toml", "stops = 1\n");
    let obs = put(dir.path(), "obs.toml", BINOMIAL_OBS);
    let defender = put(
        dir.path(),
        "defender.toml",
        &grid_file("defender", 1, 1, |_, _| 1.0),
    );
    let attacker = put(
        dir.path(),
        "attacker.toml",
        "kind = \"threshold\"\nplayer = \"attacker\"\nL = 1\ntheta = [0.5, -0.5]\n",
    );
    let traces = dir.path().join("traces.csv");
    let o = stopgame(&[
        "simulate", "--game", s(&game), "--obs", s(&obs), "--defender", s(&defender),
        "--attacker", s(&attacker), "--episodes", "50", "--seed", "1", "--out", s(&traces),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["mean_return"].as_f64().unwrap(), -2.0);
    assert_eq!(summary["mean_episode_length"].as_f64().unwrap(), 1.0);
    assert_eq!(summary["std_error"].as_f64().unwrap(), 0.0);

    let text = std::fs::read_to_string(&traces).unwrap();
    let ends: Vec<&str> = text.lines().filter(|l| l.contains(",end,")).collect();
    assert_eq!(ends.len(), 50);
    assert!(ends.iter().all(|l| l.ends_with(",-2")), "{}", ends[0]);
    for suffix in ["summary.json", "manifest.json"] {
        assert!(dir.path().join(format!("traces.csv.{suffix}")).exists());
    }
}

#[test]
fn exploit_of_mutual_best_responses_is_zero() {
    // disjoint supports: stopping as soon as the belief moves is a best
    // response to an attacker that never attacks, and vice versa
    let dir = TempDir::new().unwrap();
    let game = put(dir.path(), "game.toml", "stops = 2\n");
    let obs = put(dir.path(), "obs.toml", DISJOINT_OBS);
    let defender = put(
        dir.path(),
        "defender.toml",
        &grid_file("defender", 2, 2, |_, b| if b > 0.0 { 1.0 } else { 0.0 }),
    );
    let attacker = put(
        dir.path(),
        "attacker.toml",
        // rows 0..L are state 0 (never attack), rows L..2L state 1 (abort)
        &grid_file("attacker", 2, 4, |r, _| if r < 2 { 0.0 } else { 1.0 }),
    );
    let o = stopgame(&[
        "exploit", "--game", s(&game), "--obs", s(&obs), "--defender", s(&defender),
        "--attacker", s(&attacker), "--grid", "51", "--episodes", "2000", "--seed", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().next().unwrap().to_string();
    let nums: Vec<f64> = line
        .split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == 'e'))
        .filter_map(|t| t.parse().ok())
        .collect();
    let (delta, se) = (nums[0], nums[1]);
    assert!(delta.abs() <= (3.0 * se).max(1e-9), "{line}");
}

#[test]
fn gamma_above_one_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let game = put(dir.path(), "game.toml", "gamma = 1.2\n");
    let obs = put(dir.path(), "obs.toml", BINOMIAL_OBS);
    let out = dir.path().join("v.csv");
    let o = stopgame(&["value", "--game", s(&game), "--obs", s(&obs), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(stopgame(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(stopgame(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(stopgame(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let o = stopgame(&["value", "--obs", s(&dir.path().join("absent.toml")), "--out", s(&dir.path().join("v.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = stopgame(&["value", "--out", s(&dir.path().join("v.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("observation model"));
}

#[test]
fn value_writes_a_table_per_stop_and_grid_point() {
    let dir = TempDir::new().unwrap();
    let game = put(dir.path(), "game.toml", "stops = 2\n");
    let obs = put(dir.path(), "obs.toml", BINOMIAL_OBS);
    let out = dir.path().join("value.csv");
    let o = stopgame(&["value", "--game", s(&game), "--obs", s(&obs), "--grid", "11", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("l,b,value"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 22);
    // the defender can never do better than zero
    assert!(rows.iter().all(|r| r[2] <= 1e-6));
}

#[test]
fn baseline_files_round_trip_through_simulate() {
    let dir = TempDir::new().unwrap();
    let obs = put(dir.path(), "obs.toml", BINOMIAL_OBS);
    let bl = dir.path().join("alert.toml");
    let o = stopgame(&["baseline", "--name", "alert-threshold", "--threshold", "2", "--out", s(&bl)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&bl).unwrap();
    assert!(text.contains("alert-threshold") && text.contains("threshold = 2"));

    let attacker = put(
        dir.path(),
        "attacker.toml",
        "kind = \"threshold\"\nplayer = \"attacker\"\nL = 7\ntheta = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]\n",
    );
    let traces = dir.path().join("t.csv");
    let args = ["simulate", "--obs", s(&obs), "--defender", s(&bl), "--attacker", s(&attacker), "--episodes", "20", "--out", s(&traces)];
    // a threshold attacker has no belief-based defender to react to
    let o = stopgame(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--reacts-to"));

    let reference = put(
        dir.path(),
        "ref.toml",
        "kind = \"threshold\"\nplayer = \"defender\"\nL = 7\ntheta = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]\n",
    );
    let mut with_ref = args.to_vec();
    with_ref.extend(["--reacts-to", s(&reference)]);
    let o = stopgame(&with_ref);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn fit_obs_reports_tp2_and_kl() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("state,value\n");
    for i in 0..400 {
        let jitter = (i % 7) as f64 - 3.0;
        csv.push_str(&format!("0,{}\n1,{}\n", 5.0 + jitter, 14.0 + jitter));
    }
    let samples = put(dir.path(), "samples.csv", &csv);
    let out = dir.path().join("obs.toml");
    let o = stopgame(&[
        "fit-obs", "--samples", s(&samples), "--components", "1,1", "--alphabet", "20", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("TP-2: holds"), "{text}");
    let kl: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("KL(f0 || f1) = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(kl > 1.0);
    let model = std::fs::read_to_string(&out).unwrap();
    assert!(model.contains("alphabet_size = 20"));
}
