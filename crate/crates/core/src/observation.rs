//! Discrete observation channel: per-state pmfs over a finite alphabet,
//! Gaussian-mixture fitting, TP-2 verification and KL ranking of metrics.

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::State;

const PMF_SUM_TOL: f64 = 1e-9;
const TP2_TOL: f64 = 1e-12;
/// Additive smoothing applied to both arguments of [`kl_divergence`].
pub const KL_SMOOTHING: f64 = 1e-9;

/// Probability mass function over symbols `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePmf {
    probs: Vec<f64>,
}

impl DiscretePmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("empty alphabet".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidPmf(format!("entry {i} is {}", probs[i])));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidPmf(format!("entries sum to {sum}")));
        }
        Ok(DiscretePmf { probs })
    }

    /// Normalizes non-negative weights into a pmf.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidPmf(format!("weight {i} is {}", weights[i])));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidPmf("weights sum to zero".into()));
        }
        DiscretePmf::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPmf("empty alphabet".into()));
        }
        Ok(DiscretePmf {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Mass of symbol `o`; 0 outside the alphabet.
    pub fn prob(&self, o: usize) -> f64 {
        self.probs.get(o).copied().unwrap_or(0.0)
    }

    fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }
}

/// The pair `(f(. | 0), f(. | 1))` over a shared alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationModel {
    pmf0: DiscretePmf,
    pmf1: DiscretePmf,
    cdf0: Vec<f64>,
    cdf1: Vec<f64>,
}

impl ObservationModel {
    pub fn new(pmf0: DiscretePmf, pmf1: DiscretePmf) -> Result<Self> {
        if pmf0.len() != pmf1.len() {
            return Err(Error::AlphabetMismatch {
                left: pmf0.len(),
                right: pmf1.len(),
            });
        }
        let cdf0 = pmf0.cdf();
        let cdf1 = pmf1.cdf();
        Ok(ObservationModel {
            pmf0,
            pmf1,
            cdf0,
            cdf1,
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.pmf0.len()
    }

    pub fn pmf0(&self) -> &DiscretePmf {
        &self.pmf0
    }

    pub fn pmf1(&self) -> &DiscretePmf {
        &self.pmf1
    }

    pub fn pmf(&self, s: State) -> Result<&DiscretePmf> {
        match s {
            State::NoIntrusion => Ok(&self.pmf0),
            State::Intrusion => Ok(&self.pmf1),
            State::Terminal => Err(Error::TerminalObservation),
        }
    }

    /// Likelihood `f(o | s)` for a live state.
    pub fn likelihood(&self, s: State, o: usize) -> f64 {
        match s {
            State::NoIntrusion => self.pmf0.prob(o),
            State::Intrusion => self.pmf1.prob(o),
            State::Terminal => 0.0,
        }
    }

    pub fn check_symbol(&self, o: usize) -> Result<()> {
        if o >= self.alphabet_size() {
            Err(Error::SymbolOutOfRange {
                symbol: o,
                alphabet: self.alphabet_size(),
            })
        } else {
            Ok(())
        }
    }
}

/// Draws a symbol from the pmf of the live state `s`. Consumes exactly one
/// uniform draw.
pub fn sample_observation<R: Rng + ?Sized>(
    model: &ObservationModel,
    s: State,
    rng: &mut R,
) -> Result<usize> {
    let (cdf, pmf) = match s {
        State::NoIntrusion => (&model.cdf0, &model.pmf0),
        State::Intrusion => (&model.cdf1, &model.pmf1),
        State::Terminal => return Err(Error::TerminalObservation),
    };
    let u: f64 = rng.random();
    let i = cdf.partition_point(|&c| c <= u);
    if i < cdf.len() {
        Ok(i)
    } else {
        // rounding left the cdf short of 1
        Ok(pmf.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
    }
}

/// Result of [`tp2_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tp2Report {
    pub holds: bool,
    /// First `(i, j)`, `i < j`, in lexicographic order with a negative minor.
    pub violation: Option<(usize, usize)>,
}

/// Exhaustive check that every minor `f0(i) f1(j) - f0(j) f1(i)`, `i < j`,
/// is at least `-1e-12`.
pub fn tp2_check(model: &ObservationModel) -> Tp2Report {
    let f0 = model.pmf0.probs();
    let f1 = model.pmf1.probs();
    let n = f0.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if f0[i] * f1[j] - f0[j] * f1[i] < -TP2_TOL {
                return Tp2Report {
                    holds: false,
                    violation: Some((i, j)),
                };
            }
        }
    }
    Tp2Report {
        holds: true,
        violation: None,
    }
}

fn smooth(p: &DiscretePmf) -> Vec<f64> {
    let total = 1.0 + KL_SMOOTHING * p.len() as f64;
    p.probs.iter().map(|x| (x + KL_SMOOTHING) / total).collect()
}

/// `D(p || q)` after additive smoothing of both pmfs.
pub fn kl_divergence(p: &DiscretePmf, q: &DiscretePmf) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::AlphabetMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let ps = smooth(p);
    let qs = smooth(q);
    let d: f64 = ps
        .iter()
        .zip(&qs)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum();
    // Gibbs: negative values are rounding
    Ok(d.max(0.0))
}

/// Counts with additive smoothing: `(count(o) + s) / (n + s |O|)`.
pub fn empirical_pmf(samples: &[usize], alphabet_size: usize, smoothing: f64) -> Result<DiscretePmf> {
    if alphabet_size == 0 {
        return Err(Error::InvalidPmf("empty alphabet".into()));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidConfig {
            field: "smoothing",
            reason: format!("{smoothing} is not a finite non-negative number"),
        });
    }
    let mut counts = vec![0.0; alphabet_size];
    for &o in samples {
        if o >= alphabet_size {
            return Err(Error::SymbolOutOfRange {
                symbol: o,
                alphabet: alphabet_size,
            });
        }
        counts[o] += 1.0;
    }
    let denom = samples.len() as f64 + smoothing * alphabet_size as f64;
    if denom == 0.0 {
        return Err(Error::EmptyInput("samples"));
    }
    DiscretePmf::new(counts.into_iter().map(|c| (c + smoothing) / denom).collect())
}

/// Metrics sorted by decreasing `D(f0 || f1)`; the most informative first.
pub fn rank_metrics_by_kl(
    metrics: &[(String, ObservationModel)],
) -> Result<Vec<(String, f64)>> {
    let mut ranked = metrics
        .iter()
        .map(|(name, m)| Ok((name.clone(), kl_divergence(m.pmf0(), m.pmf1())?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ranked)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams {
    pub components: Vec<GmmComponent>,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - LN_SQRT_2PI
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + log_normal(x, c.mean, c.std))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// Density evaluated at the integer symbols `0..alphabet_size`, then
    /// normalized. Works in log space so far-away modes cannot underflow
    /// the whole vector.
    pub fn discretize(&self, alphabet_size: usize) -> Result<DiscretePmf> {
        if alphabet_size == 0 {
            return Err(Error::InvalidPmf("empty alphabet".into()));
        }
        let logs: Vec<f64> = (0..alphabet_size).map(|o| self.log_density(o as f64)).collect();
        let norm = log_sum_exp(&logs);
        if !norm.is_finite() {
            return Err(Error::NonFinite("mixture density on the alphabet".into()));
        }
        DiscretePmf::from_weights(logs.iter().map(|l| (l - norm).exp()).collect())
    }
}

/// EM settings. Defaults: 200 iterations, relative tolerance 1e-6, variance
/// floor 1e-3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub var_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            rel_tol: 1e-6,
            var_floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub params: GmmParams,
    pub pmf: DiscretePmf,
    /// Log-likelihood of the initial point and after every M-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

pub fn fit_gmm_em(samples: &[f64], k: usize, alphabet_size: usize) -> Result<GmmFit> {
    fit_gmm_em_with(samples, k, alphabet_size, EmOptions::default())
}

pub fn fit_gmm_em_with(
    samples: &[f64],
    k: usize,
    alphabet_size: usize,
    opts: EmOptions,
) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidConfig {
            field: "components",
            reason: "need at least one component".into(),
        });
    }
    if alphabet_size < 2 {
        return Err(Error::InvalidConfig {
            field: "alphabet_size",
            reason: "need at least two symbols".into(),
        });
    }
    if samples.len() < 10 * k {
        return Err(Error::InsufficientSamples {
            needed: 10 * k,
            got: samples.len(),
        });
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("sample {x}")));
    }

    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let pooled_var = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).max(opts.var_floor);

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut params = GmmParams {
        components: (0..k)
            .map(|c| {
                let q = (c as f64 + 0.5) / k as f64;
                let idx = ((q * n) as usize).min(sorted.len() - 1);
                GmmComponent {
                    weight: 1.0 / k as f64,
                    mean: sorted[idx],
                    std: pooled_var.sqrt(),
                }
            })
            .collect(),
    };

    let mut resp = vec![0.0; samples.len() * k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut best = (f64::NEG_INFINITY, params.clone());
    let mut logs = vec![0.0; k];

    for iter in 0..=opts.max_iter {
        // E-step
        let mut ll = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            for (c, comp) in params.components.iter().enumerate() {
                logs[c] = comp.weight.ln() + log_normal(x, comp.mean, comp.std);
            }
            let lse = log_sum_exp(&logs);
            ll += lse;
            for c in 0..k {
                resp[i * k + c] = (logs[c] - lse).exp();
            }
        }
        if ll > best.0 {
            best = (ll, params.clone());
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < opts.rel_tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iter == opts.max_iter {
            break;
        }

        // M-step
        for c in 0..k {
            let nk: f64 = (0..samples.len()).map(|i| resp[i * k + c]).sum();
            if nk <= 0.0 {
                // empty component keeps its parameters with zero weight floor
                params.components[c].weight = f64::MIN_POSITIVE;
                continue;
            }
            let mu = samples
                .iter()
                .enumerate()
                .map(|(i, x)| resp[i * k + c] * x)
                .sum::<f64>()
                / nk;
            let var = samples
                .iter()
                .enumerate()
                .map(|(i, x)| resp[i * k + c] * (x - mu).powi(2))
                .sum::<f64>()
                / nk;
            params.components[c] = GmmComponent {
                weight: nk / n,
                mean: mu,
                std: var.max(opts.var_floor).sqrt(),
            };
        }
    }

    let params = best.1;
    let pmf = params.discretize(alphabet_size)?;
    Ok(GmmFit {
        params,
        pmf,
        log_likelihood: trace,
        converged,
    })
}

/// Pair of binomial pmfs on `0..alphabet_size` with success probabilities
/// `p0 < p1`. Binomial families have monotone likelihood ratios, so the
/// model is TP-2.
pub fn binomial_model(alphabet_size: usize, p0: f64, p1: f64) -> Result<ObservationModel> {
    let n = alphabet_size
        .checked_sub(1)
        .filter(|n| *n >= 1)
        .ok_or(Error::InvalidConfig {
            field: "alphabet_size",
            reason: "need at least two symbols".into(),
        })?;
    let binom = |p: f64| -> Result<DiscretePmf> {
        let mut w = Vec::with_capacity(n + 1);
        let mut log_choose = 0.0;
        for k in 0..=n {
            if k > 0 {
                log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            w.push((log_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp());
        }
        DiscretePmf::from_weights(w)
    };
    ObservationModel::new(binom(p0)?, binom(p1)?)
}

/// Equal-variance Gaussians evaluated at the integer symbols and normalized.
/// With `mean0 < mean1` the likelihood ratio is increasing, hence TP-2.
pub fn gaussian_model(alphabet_size: usize, mean0: f64, mean1: f64, std: f64) -> Result<ObservationModel> {
    let single = |mean: f64| GmmParams {
        components: vec![GmmComponent {
            weight: 1.0,
            mean,
            std,
        }],
    };
    ObservationModel::new(
        single(mean0).discretize(alphabet_size)?,
        single(mean1).discretize(alphabet_size)?,
    )
}

/// Random TP-2 model: `f0` has random positive masses and `f1` is `f0`
/// tilted by a random non-decreasing likelihood ratio.
pub fn random_tp2_model<R: Rng + ?Sized>(alphabet_size: usize, rng: &mut R) -> Result<ObservationModel> {
    let f0: Vec<f64> = (0..alphabet_size).map(|_| rng.random::<f64>() + 0.05).collect();
    let mut ratio: Vec<f64> = (0..alphabet_size).map(|_| rng.random::<f64>() * 4.0).collect();
    ratio.sort_by(f64::total_cmp);
    let f1: Vec<f64> = f0.iter().zip(&ratio).map(|(a, r)| a * (r + 0.01)).collect();
    ObservationModel::new(DiscretePmf::from_weights(f0)?, DiscretePmf::from_weights(f1)?)
}
