//! Losses, Adam, and the joint training loop.
//!
//! Each step minimizes `L = mean_u CE_u − λ·mean_t H(Dir(α̃_t))`: per-token
//! cross-entropy averaged within an utterance then over the batch, minus the
//! mean calibrated Dirichlet entropy over the batch's tokens.

mod adam;

use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_oov_vocab, build_vocabs, repair_iob, Dataset, Utterance};
use crate::dirichlet::{calibrate, calibrate_backward, dirichlet_entropy, entropy_grad, CalibrationMatrix, Concentration};
use crate::error::{Error, Result};
use crate::evaluation::phrase_f1;
use crate::numerics::{argmax, softmax, ParamSet, Tensor};
use crate::tagger::{backward, concentrations, forward, LogitSequence, Model, TaggerConfig};

pub use crate::tagger::{load_checkpoint, save_checkpoint};
pub use adam::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationScope {
    /// The entropy objective updates `W_raw` only.
    WcOnly,
    /// The entropy objective also reaches the tagger body.
    FullBackprop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub delta: f64,
    pub lambda_cal: f64,
    pub calibration_scope: CalibrationScope,
    pub seed: u64,
    pub shuffle: bool,
    pub min_count: usize,
    /// Starting value of every `W_raw` entry. At 0 the rectifier passes no
    /// gradient, so `W_c` stays zero for the whole run.
    pub w_raw_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 20,
            delta: crate::dirichlet::DEFAULT_DELTA,
            lambda_cal: 1.0,
            calibration_scope: CalibrationScope::WcOnly,
            seed: 0,
            shuffle: true,
            min_count: 1,
            w_raw_init: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.lambda_cal >= 0.0 && self.lambda_cal.is_finite()) {
            return bad(format!("lambda_cal must be non-negative, got {}", self.lambda_cal));
        }
        if !self.w_raw_init.is_finite() {
            return bad(format!("w_raw_init must be finite, got {}", self.w_raw_init));
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    /// Mean per-utterance cross-entropy over the epoch.
    pub ce_loss: f64,
    /// Mean calibrated entropy per training token over the epoch.
    pub cal_entropy: f64,
    pub dev_f1: f64,
    /// Excluded from determinism comparisons.
    pub wall_ms: u64,
}

impl LossReport {
    /// The report without its wall-clock field.
    pub fn deterministic_part(&self) -> (usize, f64, f64, f64) {
        (self.epoch, self.ce_loss, self.cal_entropy, self.dev_f1)
    }
}

fn check_gold(m: &LogitSequence, gold: &[usize]) -> Result<()> {
    if gold.len() != m.len() {
        return Err(Error::Shape(format!("{} gold labels for {} tokens", gold.len(), m.len())));
    }
    if let Some(&g) = gold.iter().find(|&&g| g >= m.num_labels()) {
        return Err(Error::Shape(format!("gold label index {g} outside 0..{}", m.num_labels())));
    }
    Ok(())
}

/// `−(1/n)·Σ_t ln softmax(m_t)[gold_t]`.
pub fn sequence_loss(m: &LogitSequence, gold: &[usize]) -> Result<f64> {
    check_gold(m, gold)?;
    let n = m.len() as f64;
    Ok(gold.iter().enumerate().map(|(t, &g)| token_nll(m.row(t), g)).sum::<f64>() / n)
}

// ln Σ_i exp(m_i) − m_g, written as ln(1 + Σ_{i≠top} e^{m_i−max}) + (max − m_g)
// so a confident correct token keeps its relative precision.
fn token_nll(m: &[f64], g: usize) -> f64 {
    let top = argmax(m);
    let max = m[top];
    let rest: f64 = m.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, x)| (x - max).exp()).sum();
    rest.ln_1p() + (max - m[g])
}

/// [`sequence_loss`] and its gradient with respect to the logits.
pub fn sequence_loss_grad(m: &LogitSequence, gold: &[usize]) -> Result<(f64, Tensor)> {
    let loss = sequence_loss(m, gold)?;
    let n = m.len();
    let k = m.num_labels();
    let mut g = Tensor::zeros(&[n, k]);
    for (t, &y) in gold.iter().enumerate() {
        let row = g.row_mut(t);
        row.copy_from_slice(&softmax(m.row(t)));
        row[y] -= 1.0;
        for x in row.iter_mut() {
            *x /= n as f64;
        }
    }
    Ok((loss, g))
}

/// Negative log-likelihood of the gold labels under the Dirichlet posterior
/// mean, `−(1/n)·Σ_t ln(α_t[gold_t] / α_t0)` with `α = M·exp(m)`.
pub fn dirichlet_nll(m: &LogitSequence, gold: &[usize], scale: f64) -> Result<f64> {
    check_gold(m, gold)?;
    let alphas = concentrations(m, scale)?;
    let n = m.len() as f64;
    Ok(-alphas.iter().zip(gold).map(|(a, &g)| (a.alpha()[g] / a.alpha0()).ln()).sum::<f64>() / n)
}

/// `W_c = max(W_raw, 0)`.
pub fn rectify(w_raw: &Tensor, delta: f64) -> Result<CalibrationMatrix> {
    let k = w_raw.rows();
    if w_raw.shape() != [k, k] {
        return Err(Error::Shape(format!("W_raw must be square, got {:?}", w_raw.shape())));
    }
    CalibrationMatrix::rectify(k, w_raw.data(), delta)
}

/// `Σ_t H(Dir(α̃_t))` over every token of every sequence.
pub fn calibration_loss(ms: &[LogitSequence], cal: &CalibrationMatrix, scale: f64) -> Result<f64> {
    let mut total = 0.0;
    for m in ms {
        for a in concentrations(m, scale)? {
            total += dirichlet_entropy(&calibrate(&a, cal)?.alpha_tilde)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationGrad {
    pub loss: f64,
    pub tokens: usize,
    /// `∂L/∂W_raw`, zero wherever `W_raw ≤ 0`.
    pub d_w_raw: Tensor,
    /// `∂L/∂m` per sequence.
    pub d_m: Vec<Tensor>,
}

/// [`calibration_loss`] with gradients for `W_raw` and the logits. The norm
/// rescale is held constant and floored components pass no gradient.
pub fn calibration_loss_grad(ms: &[LogitSequence], w_raw: &Tensor, delta: f64, scale: f64) -> Result<CalibrationGrad> {
    let cal = rectify(w_raw, delta)?;
    let k = cal.k();
    let mut d_wc = vec![0.0; k * k];
    let mut loss = 0.0;
    let mut tokens = 0;
    let mut d_m = Vec::with_capacity(ms.len());
    for m in ms {
        let mut dm = Tensor::zeros(&[m.len(), k]);
        for (t, a) in concentrations(m, scale)?.iter().enumerate() {
            let (h, da) = token_entropy_grad(a, &cal, &mut d_wc)?;
            loss += h;
            tokens += 1;
            // dα/dm = α
            for ((o, d), al) in dm.row_mut(t).iter_mut().zip(&da).zip(a.alpha()) {
                *o = d * al;
            }
        }
        d_m.push(dm);
    }
    let mask: Vec<f64> = w_raw.data().iter().zip(&d_wc).map(|(&w, &g)| if w > 0.0 { g } else { 0.0 }).collect();
    Ok(CalibrationGrad { loss, tokens, d_w_raw: Tensor::from_vec(&[k, k], mask)?, d_m })
}

fn token_entropy_grad(a: &Concentration, cal: &CalibrationMatrix, d_wc: &mut [f64]) -> Result<(f64, Vec<f64>)> {
    let out = calibrate(a, cal)?;
    let h = dirichlet_entropy(&out.alpha_tilde)?;
    let g = entropy_grad(&out.alpha_tilde)?;
    Ok((h, calibrate_backward(a, cal, &out, &g, Some(d_wc))))
}

/// Context handed to [`TrainObserver::after_step`].
pub struct StepContext<'a> {
    pub epoch: usize,
    pub step: usize,
    /// The model after the optimizer update.
    pub model: &'a Model,
    pub batch: &'a [&'a Utterance],
    pub config: &'a TrainConfig,
}

/// Hooks into the training loop.
pub trait TrainObserver {
    fn after_step(&mut self, _ctx: &StepContext<'_>) -> Result<()> {
        Ok(())
    }

    /// Called with the current and best-so-far models; `Break` stops training.
    fn after_epoch(&mut self, _current: &Model, _best: &Model, _report: &LossReport) -> Result<ControlFlow<()>> {
        Ok(ControlFlow::Continue(()))
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev F1 (first wins on ties).
    pub best: Model,
    pub last: Model,
    pub reports: Vec<LossReport>,
}

/// Argmax predictions repaired to strict IOB.
pub fn predict_repaired(model: &Model, u: &Utterance) -> Result<Vec<String>> {
    Ok(repair_iob(&model.predict(u)?))
}

/// Phrase F1 of `model` on `data` (0 for an empty set).
pub fn evaluate_f1(model: &Model, data: &[Utterance]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let preds = data.iter().map(|u| predict_repaired(model, u)).collect::<Result<Vec<_>>>()?;
    let gold: Vec<&[String]> = data.iter().map(|u| u.gold_labels.as_slice()).collect();
    Ok(phrase_f1(&preds, &gold)?.f1)
}

/// Builds vocabularies from `dataset.train` and a freshly initialized model.
/// `vocab_size` and `num_labels` of `tagger` are overwritten.
pub fn init_model(dataset: &Dataset, mut tagger: TaggerConfig, min_count: usize) -> Result<Model> {
    let (words, labels) = build_vocabs(&dataset.train, min_count)?;
    tagger.vocab_size = words.len();
    tagger.num_labels = labels.len();
    Model::new(tagger, words, labels, build_oov_vocab(&dataset.train))
}

pub fn train(dataset: &Dataset, tagger: TaggerConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, tagger, config, &mut NoObserver)
}

pub fn train_with(
    dataset: &Dataset,
    tagger: TaggerConfig,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let mut model = init_model(dataset, tagger, config.min_count)?;
    model.params.w_raw.value.fill(config.w_raw_init);
    train_model(model, dataset, config, observer)
}

/// Trains an already initialized model.
pub fn train_model(
    mut model: Model,
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let encoded: Vec<(Vec<usize>, Vec<usize>)> = dataset
        .train
        .iter()
        .map(|u| Ok((model.encode(u), model.labels.encode(&u.gold_labels)?)))
        .collect::<Result<_>>()?;
    let mut adam = Adam::new(config.learning_rate, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut best: Option<(f64, Model)> = None;
    let mut reports = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut ce_sum = 0.0;
        let mut ent_sum = 0.0;
        let mut ent_tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let diverged = |loss: f64| Error::Divergence { epoch, step, loss };
            let stats = match accumulate_batch(&mut model, &encoded, batch, config) {
                Ok(s) => s,
                Err(Error::NonFinite(_) | Error::Overflow(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            ce_sum += stats.ce_sum;
            ent_sum += stats.ent_sum;
            ent_tokens += stats.tokens;
            if !stats.loss.is_finite() {
                return Err(diverged(stats.loss));
            }
            adam.step(&mut model.params);
            if !model.params.is_finite() {
                return Err(diverged(stats.loss));
            }
            let utts: Vec<&Utterance> = batch.iter().map(|&i| &dataset.train[i]).collect();
            observer.after_step(&StepContext { epoch, step, model: &model, batch: &utts, config })?;
        }
        let dev_f1 = evaluate_f1(&model, &dataset.dev)?;
        let report = LossReport {
            epoch,
            ce_loss: ce_sum / encoded.len() as f64,
            cal_entropy: ent_sum / ent_tokens.max(1) as f64,
            dev_f1,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if best.as_ref().is_none_or(|(f, _)| dev_f1 > *f) {
            best = Some((dev_f1, model.clone()));
        }
        reports.push(report);
        let flow = observer.after_epoch(&model, &best.as_ref().expect("set above").1, reports.last().expect("pushed"))?;
        if flow.is_break() {
            break;
        }
    }
    let best = match best {
        Some((_, m)) => m,
        None => model.clone(),
    };
    Ok(TrainOutcome { best, last: model, reports })
}

struct BatchStats {
    loss: f64,
    ce_sum: f64,
    ent_sum: f64,
    tokens: usize,
}

// Zeroes and refills every gradient for one mini-batch.
fn accumulate_batch(
    model: &mut Model,
    encoded: &[(Vec<usize>, Vec<usize>)],
    batch: &[usize],
    config: &TrainConfig,
) -> Result<BatchStats> {
    model.params.zero_grad();
    let calibrating = config.lambda_cal > 0.0;
    let cal = rectify(&model.params.w_raw.value, config.delta)?;
    let k = model.config.num_labels;
    let mut d_wc = vec![0.0; k * k];
    let batch_tokens: usize = batch.iter().map(|&i| encoded[i].0.len()).sum();
    let ent_weight = -config.lambda_cal / batch_tokens as f64;
    let inv_b = 1.0 / batch.len() as f64;
    let mut stats = BatchStats { loss: 0.0, ce_sum: 0.0, ent_sum: 0.0, tokens: 0 };
    for &i in batch {
        let (ids, gold) = &encoded[i];
        let (m, cache) = forward(&model.config, &model.params, ids)?;
        let (ce, mut dm) = sequence_loss_grad(&m, gold)?;
        for x in dm.data_mut() {
            *x *= inv_b;
        }
        stats.ce_sum += ce;
        stats.loss += ce * inv_b;
        let alphas = concentrations(&m, model.config.scale)?;
        for (t, a) in alphas.iter().enumerate() {
            if calibrating {
                let (h, da) = token_entropy_grad(a, &cal, &mut d_wc)?;
                stats.ent_sum += h;
                stats.loss += ent_weight * h;
                if config.calibration_scope == CalibrationScope::FullBackprop {
                    for ((o, d), al) in dm.row_mut(t).iter_mut().zip(&da).zip(a.alpha()) {
                        *o += ent_weight * d * al;
                    }
                }
            } else {
                // logged only; λ = 0 leaves the gradients untouched
                stats.ent_sum += dirichlet_entropy(&calibrate(a, &cal)?.alpha_tilde)?;
            }
        }
        stats.tokens += alphas.len();
        backward(&model.config, &mut model.params, &cache, &dm)?;
    }
    if calibrating {
        let w_raw = &mut model.params.w_raw;
        for ((g, d), w) in w_raw.grad.data_mut().iter_mut().zip(&d_wc).zip(w_raw.value.data()) {
            if *w > 0.0 {
                *g += ent_weight * d;
            }
        }
    }
    Ok(stats)
}

/// Mean calibrated entropy per token of `data` under `model`'s `W_c`.
pub fn mean_calibrated_entropy(model: &Model, data: &[Utterance], delta: f64) -> Result<f64> {
    let cal = rectify(&model.params.w_raw.value, delta)?;
    let mut total = 0.0;
    let mut n = 0;
    for u in data {
        let m = model.logits(u)?;
        total += calibration_loss(std::slice::from_ref(&m), &cal, model.config.scale)?;
        n += m.len();
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
