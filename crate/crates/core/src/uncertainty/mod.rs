//! Per-token uncertainty scores and dev-set threshold selection.
//!
//! Every score follows the same polarity: higher means more uncertain.

mod threshold;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{repair_iob, Utterance};
use crate::dirichlet::{calibrate, confidence, dirichlet_entropy, posterior_mean, CalibrationMatrix, Concentration};
use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax};
use crate::tagger::{concentrations, Model, TaggerParams};
use crate::training::rectify;

pub use threshold::{select_threshold, select_threshold_from_scores, Threshold, ThresholdSearch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    DirichletEntropy,
    Confidence,
    DropoutPerturbation,
    GaussianNoise,
    TopkVariance,
    Oov,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::DirichletEntropy,
        MetricKind::Confidence,
        MetricKind::DropoutPerturbation,
        MetricKind::GaussianNoise,
        MetricKind::TopkVariance,
        MetricKind::Oov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::DirichletEntropy => "dirichlet-entropy",
            MetricKind::Confidence => "confidence",
            MetricKind::DropoutPerturbation => "dropout-perturbation",
            MetricKind::GaussianNoise => "gaussian-noise",
            MetricKind::TopkVariance => "topk-variance",
            MetricKind::Oov => "oov",
        }
    }

    /// Whether the metric produces scores to threshold (all but `oov`).
    pub fn is_score_based(self) -> bool {
        self != MetricKind::Oov
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// A metric with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metric {
    pub kind: MetricKind,
    /// Score on `α̃` instead of `α`. Predictions always come from `α`.
    #[serde(default)]
    pub use_calibration: bool,
    /// Take predictions from `α̃` as well. Off by default.
    #[serde(default)]
    pub predict_calibrated: bool,
    /// Calibration ratio bound used when `use_calibration` or
    /// `predict_calibrated` is set.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Forward passes for the perturbation metrics.
    #[serde(default = "default_passes")]
    pub passes: usize,
    /// Dropout probability.
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Gaussian noise variance.
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Base seed of the perturbation streams.
    #[serde(default)]
    pub seed: u64,
}

fn default_delta() -> f64 {
    crate::dirichlet::DEFAULT_DELTA
}
fn default_passes() -> usize {
    10
}
fn default_rate() -> f64 {
    0.25
}
fn default_sigma2() -> f64 {
    0.01
}
fn default_top_k() -> usize {
    5
}

impl Metric {
    pub fn new(kind: MetricKind) -> Self {
        Metric {
            kind,
            use_calibration: false,
            predict_calibrated: false,
            delta: default_delta(),
            passes: default_passes(),
            rate: default_rate(),
            sigma2: default_sigma2(),
            top_k: default_top_k(),
            seed: 0,
        }
    }

    pub fn calibrated(mut self, on: bool) -> Self {
        self.use_calibration = on;
        self
    }

    /// Checks the settings against a label count `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.kind {
            MetricKind::DropoutPerturbation | MetricKind::GaussianNoise if self.passes < 2 => {
                bad(format!("{} needs at least 2 passes, got {}", self.kind, self.passes))
            }
            MetricKind::DropoutPerturbation if !(self.rate > 0.0 && self.rate < 1.0) => {
                bad(format!("dropout rate must lie in (0, 1), got {}", self.rate))
            }
            MetricKind::GaussianNoise if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) => {
                bad(format!("noise variance must be non-negative, got {}", self.sigma2))
            }
            MetricKind::TopkVariance if self.top_k == 0 || self.top_k > k => {
                bad(format!("top_k must lie in 1..={k}, got {}", self.top_k))
            }
            _ if (self.use_calibration || self.predict_calibrated) && !(self.delta > 0.0 && self.delta < 1.0) => {
                bad(format!("delta must lie in (0, 1), got {}", self.delta))
            }
            _ => Ok(()),
        }
    }

    /// Short label such as `dirichlet-entropy+cal`.
    pub fn label(&self) -> String {
        if self.use_calibration {
            format!("{}+cal", self.kind)
        } else {
            self.kind.to_string()
        }
    }
}

/// An utterance's predictions, scores and (optionally) flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUtterance {
    /// Argmax of the posterior mean (of `α` unless `predict_calibrated`),
    /// repaired to strict IOB.
    pub predicted: Vec<String>,
    pub scores: Vec<f64>,
    /// `H` = true. Set when a threshold is given, and always for `oov`.
    pub flags: Option<Vec<bool>>,
}

fn calibration_for(model: &Model, metric: &Metric, on: bool) -> Result<Option<CalibrationMatrix>> {
    if on {
        Ok(Some(rectify(&model.params.w_raw.value, metric.delta)?))
    } else {
        Ok(None)
    }
}

fn scored_alpha(alpha: &Concentration, cal: Option<&CalibrationMatrix>) -> Result<Concentration> {
    match cal {
        Some(c) => Ok(calibrate(alpha, c)?.alpha_tilde),
        None => Ok(alpha.clone()),
    }
}

/// Scores one utterance. `index` keys the perturbation RNG streams.
pub fn score(model: &Model, u: &Utterance, index: u64, metric: &Metric, theta: Option<f64>) -> Result<ScoredUtterance> {
    metric.validate(model.config.num_labels)?;
    let m = model.logits(u)?;
    let alphas = concentrations(&m, model.config.scale)?;
    let pred_cal = calibration_for(model, metric, metric.predict_calibrated)?;
    let raw = alphas
        .iter()
        .map(|a| Ok(model.labels.label(argmax(scored_alpha(a, pred_cal.as_ref())?.alpha()))))
        .collect::<Result<Vec<&str>>>()?;
    let predicted = repair_iob(&raw);
    let cal = calibration_for(model, metric, metric.use_calibration)?;
    let scores = match metric.kind {
        MetricKind::DirichletEntropy => alphas
            .iter()
            .map(|a| dirichlet_entropy(&scored_alpha(a, cal.as_ref())?))
            .collect::<Result<Vec<_>>>()?,
        MetricKind::Confidence => alphas
            .iter()
            .map(|a| Ok(confidence(&scored_alpha(a, cal.as_ref())?)))
            .collect::<Result<Vec<_>>>()?,
        MetricKind::TopkVariance => {
            let probs = alphas
                .iter()
                .map(|a| Ok(posterior_mean(&scored_alpha(a, cal.as_ref())?)))
                .collect::<Result<Vec<_>>>()?;
            topk_variance_scores(&probs, metric.top_k)?
        }
        MetricKind::DropoutPerturbation => dropout_scores(model, u, index, metric.passes, metric.rate, metric.seed)?,
        MetricKind::GaussianNoise => gaussian_scores(model, u, index, metric.passes, metric.sigma2, metric.seed)?,
        MetricKind::Oov => {
            let flags = oov_flags(&u.tokens, &predicted, &model.oov_vocab);
            let scores = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
            return Ok(ScoredUtterance { predicted, scores, flags: Some(flags) });
        }
    };
    let flags = theta.map(|th| scores.iter().map(|&s| s > th).collect());
    Ok(ScoredUtterance { predicted, scores, flags })
}

/// RNG for pass `pass` of utterance `index`, independent of scoring order.
pub fn perturbation_rng(seed: u64, index: u64, pass: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(&pass.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Population variance, across `perturbed` parameter sets, of the probability
/// each token's unperturbed argmax label receives.
pub fn perturbation_variance(model: &Model, u: &Utterance, perturbed: &[TaggerParams]) -> Result<Vec<f64>> {
    let base = model.logits(u)?;
    let anchor: Vec<usize> = (0..base.len()).map(|t| argmax(base.row(t))).collect();
    let mut samples = vec![Vec::with_capacity(perturbed.len()); base.len()];
    for params in perturbed {
        let m = model.logits_with(params, u)?;
        for (t, s) in samples.iter_mut().enumerate() {
            s.push(softmax(m.row(t))[anchor[t]]);
        }
    }
    Ok(samples.iter().map(|s| population_variance(s)).collect())
}

fn population_variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    // shifting by the first value keeps identical samples at exactly 0
    let n = x.len() as f64;
    let d: Vec<f64> = x.iter().map(|v| v - x[0]).collect();
    let mean = d.iter().sum::<f64>() / n;
    d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn perturbed_params<F: FnMut(&mut ChaCha8Rng, &mut f64)>(
    model: &Model,
    index: u64,
    passes: usize,
    seed: u64,
    mut perturb: F,
) -> Vec<TaggerParams> {
    (0..passes as u64)
        .map(|pass| {
            let mut rng = perturbation_rng(seed, index, pass);
            let mut p = model.params.clone();
            for param in p.body_params_mut() {
                for x in param.value.data_mut() {
                    perturb(&mut rng, x);
                }
            }
            p
        })
        .collect()
}

/// Weight dropout: each weight is zeroed with probability `rate`, no rescaling.
pub fn dropout_scores(model: &Model, u: &Utterance, index: u64, passes: usize, rate: f64, seed: u64) -> Result<Vec<f64>> {
    let perturbed = perturbed_params(model, index, passes, seed, |rng, x| {
        if rng.random_bool(rate) {
            *x = 0.0;
        }
    });
    perturbation_variance(model, u, &perturbed)
}

/// Additive weight noise drawn from `N(0, sigma2)`.
pub fn gaussian_scores(model: &Model, u: &Utterance, index: u64, passes: usize, sigma2: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::Config(format!("noise variance: {e}")))?;
    let perturbed = perturbed_params(model, index, passes, seed, |rng, x| *x += normal.sample(rng));
    perturbation_variance(model, u, &perturbed)
}

/// Negated population variance of each row's `top_k` largest probabilities.
pub fn topk_variance_scores(probs: &[Vec<f64>], top_k: usize) -> Result<Vec<f64>> {
    probs
        .iter()
        .map(|p| {
            if top_k == 0 || top_k > p.len() {
                return Err(Error::Config(format!("top_k {top_k} outside 1..={}", p.len())));
            }
            let mut sorted = p.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            Ok(-population_variance(&sorted[..top_k]))
        })
        .collect()
}

/// `H` for tokens predicted `O` that never appeared with `O` in training.
pub fn oov_flags<S: AsRef<str>>(tokens: &[String], predicted: &[S], oov_vocab: &BTreeSet<String>) -> Vec<bool> {
    tokens
        .iter()
        .zip(predicted)
        .map(|(t, p)| p.as_ref() == "O" && !oov_vocab.contains(t))
        .collect()
}
