//! Strategy representations: smoothed threshold vectors, their
//! fictitious-play mixtures, tabular grid strategies and the two static
//! defender baselines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Action, State};
use crate::policy::{AttackerPolicy, DefenderPolicy};

/// Sharpness of the smoothed threshold.
pub const SMOOTHING_EXPONENT: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    Defender,
    Attacker,
}

impl Player {
    /// Parameter count for `stops` stops: `L` for the defender, `2L` for
    /// the attacker.
    pub fn theta_len(self, stops: u32) -> usize {
        match self {
            Player::Defender => stops as usize,
            Player::Attacker => 2 * stops as usize,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(b / (1 - b))`, with the infinite limits at 0 and 1.
pub fn logit(b: f64) -> f64 {
    if b <= 0.0 {
        f64::NEG_INFINITY
    } else if b >= 1.0 {
        f64::INFINITY
    } else {
        (b / (1.0 - b)).ln()
    }
}

/// Soft threshold `phi(a, b) = (1 + (b (1 - s(a)) / (s(a) (1 - b)))^-20)^-1`.
///
/// The ratio equals `exp(logit(b) - a)`, so `phi = sigmoid(20 (logit(b) - a))`,
/// which is what is evaluated. Exactly 0 at `b = 0` and 1 at `b = 1`.
pub fn smooth_threshold(a: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    if b >= 1.0 {
        return 1.0;
    }
    sigmoid(SMOOTHING_EXPONENT * (logit(b) - a))
}

/// `d phi / d a = -20 phi (1 - phi)`.
pub fn smooth_threshold_grad(a: f64, b: f64) -> f64 {
    let p = smooth_threshold(a, b);
    -SMOOTHING_EXPONENT * p * (1.0 - p)
}

/// Parameters of one threshold strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub player: Player,
    pub theta: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(player: Player, theta: Vec<f64>, stops: u32) -> Result<Self> {
        let tv = ThresholdVector { player, theta };
        tv.validate(stops)?;
        Ok(tv)
    }

    pub fn validate(&self, stops: u32) -> Result<()> {
        let want = self.player.theta_len(stops);
        if self.theta.len() != want {
            return Err(Error::StrategyMismatch(format!(
                "{:?} vector has {} entries, expected {want}",
                self.player,
                self.theta.len()
            )));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("threshold parameter".into()));
        }
        Ok(())
    }

    pub fn stops(&self) -> u32 {
        match self.player {
            Player::Defender => self.theta.len() as u32,
            Player::Attacker => (self.theta.len() / 2) as u32,
        }
    }
}

fn check_l(l: u32, stops: u32) -> Result<()> {
    if l == 0 || l > stops {
        Err(Error::InvalidStops { l, max: stops })
    } else {
        Ok(())
    }
}

/// `phi(theta[l], b)`.
pub fn defender_stop_prob(theta: &ThresholdVector, l: u32, b1: f64) -> Result<f64> {
    if theta.player != Player::Defender {
        return Err(Error::StrategyMismatch("expected a defender vector".into()));
    }
    check_l(l, theta.stops())?;
    Ok(smooth_threshold(theta.theta[l as usize - 1], b1))
}

/// Attacker stop probability given the defender's stop probability `d`.
/// In state 1 this is `phi(theta[L + l], d)`; in state 0 it is the
/// complement `1 - phi(theta[l], d)`, so intrusions start less often the
/// more likely the defender is to stop.
pub fn attacker_stop_prob(theta: &ThresholdVector, l: u32, s: State, d: f64) -> Result<f64> {
    if theta.player != Player::Attacker {
        return Err(Error::StrategyMismatch("expected an attacker vector".into()));
    }
    let stops = theta.stops();
    check_l(l, stops)?;
    let i = l as usize - 1;
    match s {
        State::NoIntrusion => Ok(1.0 - smooth_threshold(theta.theta[i], d)),
        State::Intrusion => Ok(smooth_threshold(theta.theta[stops as usize + i], d)),
        State::Terminal => Err(Error::InvalidState("attacker acts only in live states")),
    }
}

/// `sum_i w_i sigmoid(20 (x - theta_i))` with `x = logit(b)` computed once.
fn soft_sum(x: f64, thetas: &[f64], weights: &[f64]) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return weights.iter().sum::<f64>().min(1.0);
    }
    let p: f64 = thetas
        .iter()
        .zip(weights)
        .map(|(t, w)| w * sigmoid(SMOOTHING_EXPONENT * (x - t)))
        .sum();
    p.clamp(0.0, 1.0)
}

/// Weighted collection of threshold vectors for one player, evaluated by
/// behavioural averaging.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedThresholdStrategy {
    player: Player,
    stops: u32,
    atoms: Vec<ThresholdVector>,
    weights: Vec<f64>,
    /// `by_index[j][i]` is `atoms[i].theta[j]`, laid out for evaluation.
    by_index: Vec<Vec<f64>>,
}

impl MixedThresholdStrategy {
    pub fn new(atoms: Vec<ThresholdVector>, weights: Vec<f64>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or(Error::EmptyInput("mixture atoms"))?;
        let player = first.player;
        let stops = first.stops();
        if stops == 0 {
            return Err(Error::StrategyMismatch("empty threshold vector".into()));
        }
        for a in &atoms {
            if a.player != player {
                return Err(Error::StrategyMismatch("atoms belong to different players".into()));
            }
            a.validate(stops)?;
        }
        if weights.len() != atoms.len() {
            return Err(Error::StrategyMismatch(format!(
                "{} weights for {} atoms",
                weights.len(),
                atoms.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidPmf("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPmf(format!("mixture weights sum to {total}")));
        }
        let dim = player.theta_len(stops);
        let by_index = (0..dim)
            .map(|j| atoms.iter().map(|a| a.theta[j]).collect())
            .collect();
        Ok(MixedThresholdStrategy {
            player,
            stops,
            atoms,
            weights,
            by_index,
        })
    }

    /// Uniform empirical distribution over `atoms`.
    pub fn uniform(atoms: Vec<ThresholdVector>) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return Err(Error::EmptyInput("mixture atoms"));
        }
        MixedThresholdStrategy::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn single(atom: ThresholdVector) -> Result<Self> {
        MixedThresholdStrategy::new(vec![atom], vec![1.0])
    }

    pub fn player(&self) -> Player {
        self.player
    }

    pub fn stops(&self) -> u32 {
        self.stops
    }

    pub fn atoms(&self) -> &[ThresholdVector] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expect_player(&self, player: Player) -> Result<()> {
        if self.player == player {
            Ok(())
        } else {
            Err(Error::StrategyMismatch(format!(
                "expected a {player:?} mixture, got {:?}",
                self.player
            )))
        }
    }

    fn defender_prob(&self, l: u32, b1: f64) -> f64 {
        soft_sum(logit(b1), &self.by_index[l as usize - 1], &self.weights)
    }

    fn attacker_prob(&self, l: u32, s: State, d: f64) -> f64 {
        let i = l as usize - 1;
        let x = logit(d);
        match s {
            State::NoIntrusion => 1.0 - soft_sum(x, &self.by_index[i], &self.weights),
            State::Intrusion => {
                soft_sum(x, &self.by_index[self.stops as usize + i], &self.weights)
            }
            State::Terminal => 0.0,
        }
    }

    /// Binds an attacker mixture to the defender whose stop probability it
    /// reacts to.
    pub fn bind<'a, D: DefenderPolicy + ?Sized>(
        &'a self,
        defender: &'a D,
    ) -> Result<BoundAttacker<'a, D>> {
        self.expect_player(Player::Attacker)?;
        Ok(BoundAttacker {
            attacker: self,
            defender,
        })
    }
}

/// Stop probability of a mixture. Attackers need `s` and the defender stop
/// probability `d`; defenders need neither.
pub fn mixed_action_prob(
    mix: &MixedThresholdStrategy,
    l: u32,
    b1: f64,
    s: Option<State>,
    d: Option<f64>,
) -> Result<f64> {
    check_l(l, mix.stops)?;
    match (mix.player, s, d) {
        (Player::Defender, None, None) => Ok(mix.defender_prob(l, b1)),
        (Player::Attacker, Some(State::Terminal), Some(_)) => {
            Err(Error::InvalidState("attacker acts only in live states"))
        }
        (Player::Attacker, Some(s), Some(d)) => Ok(mix.attacker_prob(l, s, d)),
        (player, _, _) => Err(Error::StrategyMismatch(format!(
            "{player:?} mixture queried with the wrong arguments"
        ))),
    }
}

impl DefenderPolicy for MixedThresholdStrategy {
    /// Callers must ensure this is a defender mixture.
    fn stop_prob(&self, l: u32, b1: f64) -> f64 {
        debug_assert_eq!(self.player, Player::Defender);
        self.defender_prob(l, b1)
    }
}

/// Attacker mixture evaluated against a fixed defender's stop probability.
pub struct BoundAttacker<'a, D: DefenderPolicy + ?Sized> {
    attacker: &'a MixedThresholdStrategy,
    defender: &'a D,
}

impl<D: DefenderPolicy + ?Sized> AttackerPolicy for BoundAttacker<'_, D> {
    fn stop_prob(&self, l: u32, b1: f64, s: State) -> f64 {
        if s == State::Terminal {
            return 0.0;
        }
        let d = self.defender.stop_prob(l, b1);
        self.attacker.attacker_prob(l, s, d)
    }
}

/// Uniform belief grid `{0, 1/(K-1), ..., 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefGrid {
    k: usize,
}

impl BeliefGrid {
    pub const MIN_POINTS: usize = 11;
    pub const DEFAULT_POINTS: usize = 201;

    pub fn new(k: usize) -> Result<Self> {
        if k < Self::MIN_POINTS {
            return Err(Error::InvalidConfig {
                field: "grid",
                reason: format!("need at least {} points, got {k}", Self::MIN_POINTS),
            });
        }
        Ok(BeliefGrid { k })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.k {
            1.0
        } else {
            i as f64 / (self.k - 1) as f64
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.k).map(|i| self.point(i))
    }

    /// Left neighbour index and interpolation weight on the right
    /// neighbour; `lo + 1 < K` always holds.
    pub fn locate(&self, b: f64) -> (usize, f64) {
        let x = b.clamp(0.0, 1.0) * (self.k - 1) as f64;
        let lo = (x.floor() as usize).min(self.k - 2);
        (lo, x - lo as f64)
    }

    pub fn interpolate(&self, row: &[f64], b: f64) -> f64 {
        let (lo, frac) = self.locate(b);
        if frac == 0.0 {
            row[lo]
        } else {
            row[lo] * (1.0 - frac) + row[lo + 1] * frac
        }
    }
}

/// Tabular strategy on a belief grid. Defender rows are indexed by `l`,
/// attacker rows by `(s, l)`, stored row-major as `(s * L + l - 1) * K + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridStrategy {
    pub player: Player,
    pub stops: u32,
    pub grid: BeliefGrid,
    pub table: Vec<f64>,
}

impl GridStrategy {
    pub fn new(player: Player, stops: u32, grid: BeliefGrid, table: Vec<f64>) -> Result<Self> {
        let rows = match player {
            Player::Defender => stops as usize,
            Player::Attacker => 2 * stops as usize,
        };
        if table.len() != rows * grid.len() {
            return Err(Error::StrategyMismatch(format!(
                "table has {} entries, expected {}",
                table.len(),
                rows * grid.len()
            )));
        }
        if table.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidPmf("grid entries must be probabilities".into()));
        }
        Ok(GridStrategy {
            player,
            stops,
            grid,
            table,
        })
    }

    /// Builds a table by evaluating `f(row, b)` on every row and grid point.
    pub fn from_fn(
        player: Player,
        stops: u32,
        grid: BeliefGrid,
        mut f: impl FnMut(usize, f64) -> f64,
    ) -> Result<Self> {
        let rows = player.theta_len(stops);
        let mut table = Vec::with_capacity(rows * grid.len());
        for r in 0..rows {
            for b in grid.points() {
                table.push(f(r, b));
            }
        }
        GridStrategy::new(player, stops, grid, table)
    }

    pub fn row_index(&self, l: u32, s: Option<State>) -> usize {
        let base = l as usize - 1;
        match s {
            Some(State::Intrusion) => self.stops as usize + base,
            _ => base,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.grid.len();
        &self.table[r * k..(r + 1) * k]
    }

    pub fn rows(&self) -> usize {
        self.table.len() / self.grid.len()
    }
}

/// Interpolated stop probability of a grid strategy.
pub fn grid_action_prob(gs: &GridStrategy, l: u32, b1: f64, s: Option<State>) -> Result<f64> {
    check_l(l, gs.stops)?;
    match (gs.player, s) {
        (Player::Defender, None) => Ok(gs.grid.interpolate(gs.row(gs.row_index(l, None)), b1)),
        (Player::Attacker, Some(State::Terminal)) => Ok(0.0),
        (Player::Attacker, Some(s)) => Ok(gs.grid.interpolate(gs.row(gs.row_index(l, Some(s))), b1)),
        (player, _) => Err(Error::StrategyMismatch(format!(
            "{player:?} grid queried with the wrong arguments"
        ))),
    }
}

impl DefenderPolicy for GridStrategy {
    fn stop_prob(&self, l: u32, b1: f64) -> f64 {
        debug_assert_eq!(self.player, Player::Defender);
        self.grid.interpolate(self.row(l as usize - 1), b1)
    }
}

impl AttackerPolicy for GridStrategy {
    fn stop_prob(&self, l: u32, b1: f64, s: State) -> f64 {
        debug_assert_eq!(self.player, Player::Attacker);
        if s == State::Terminal {
            return 0.0;
        }
        self.grid.interpolate(self.row(self.row_index(l, Some(s))), b1)
    }
}

/// Static, history-based defender strategies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum BaselineStrategy {
    /// Stop whenever the latest observation is at least `threshold`.
    AlertThreshold { threshold: u32 },
    /// Spend every stop in the steps right after the intrusion starts.
    IntrusionOracle,
}

impl BaselineStrategy {
    pub fn alert_threshold() -> Self {
        BaselineStrategy::AlertThreshold { threshold: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineStrategy::AlertThreshold { threshold } if *threshold < 1 => {
                Err(Error::InvalidConfig {
                    field: "threshold",
                    reason: "must be at least 1".into(),
                })
            }
            _ => Ok(()),
        }
    }
}

/// What a baseline may look at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BaselineContext {
    pub last_observation: Option<usize>,
    pub intrusion_started: Option<bool>,
    pub stops_taken: Option<u32>,
    pub stops: Option<u32>,
}

pub fn baseline_decide(bl: &BaselineStrategy, ctx: &BaselineContext) -> Result<Action> {
    match *bl {
        BaselineStrategy::AlertThreshold { threshold } => {
            let o = ctx
                .last_observation
                .ok_or(Error::MissingContext("last observation"))?;
            Ok(if o >= threshold as usize {
                Action::Stop
            } else {
                Action::Continue
            })
        }
        BaselineStrategy::IntrusionOracle => {
            let started = ctx
                .intrusion_started
                .ok_or(Error::MissingContext("intrusion-start flag"))?;
            let taken = ctx.stops_taken.ok_or(Error::MissingContext("stops taken"))?;
            let stops = ctx.stops.ok_or(Error::MissingContext("stop budget"))?;
            Ok(if started && taken < stops {
                Action::Stop
            } else {
                Action::Continue
            })
        }
    }
}
