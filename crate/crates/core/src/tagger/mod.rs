//! Bidirectional recurrent tagger producing one logit vector per token.
//!
//! Embedding → forward and backward recurrent cells → linear projection of
//! the concatenated states to `K` logits. The logits double as the
//! log-concentration of a Dirichlet (`α = M·exp(m)`).

mod checkpoint;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelVocab, Utterance, WordVocab};
use crate::dirichlet::Concentration;
use crate::error::{Error, Result};
use crate::numerics::{matvec_add, matvec_t_add, outer_add, Param, ParamSet, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    SimpleTanh,
    /// GRU cell.
    Gated,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::SimpleTanh => 1,
            CellKind::Gated => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_labels: usize,
    pub vocab_size: usize,
    pub cell: CellKind,
    pub seed: u64,
    /// Scale constant `M` of `α = M·exp(m)`.
    pub scale: f64,
}

impl TaggerConfig {
    pub fn new(vocab_size: usize, num_labels: usize, seed: u64) -> Self {
        TaggerConfig { embed_dim: 32, hidden_dim: 64, num_labels, vocab_size, cell: CellKind::Gated, seed, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.vocab_size == 0 {
            return Err(Error::Config("tagger dimensions must be at least 1".into()));
        }
        if self.num_labels < 2 {
            return Err(Error::Config(format!("need at least 2 labels, got {}", self.num_labels)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale constant must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Weights of one recurrent direction. Gate blocks are stacked row-wise in the
/// order update, reset, candidate for the gated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub w_in: Param,
    pub w_rec: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerParams {
    pub embedding: Param,
    pub fwd: CellParams,
    pub bwd: CellParams,
    /// `2H × K`.
    pub proj_w: Param,
    pub proj_b: Param,
    /// Raw calibration weights, `K × K`. Not read by the forward pass.
    pub w_raw: Param,
}

impl TaggerParams {
    /// All zeros; useful for tests and as a shape template.
    pub fn zeros(config: &TaggerConfig) -> Result<Self> {
        config.validate()?;
        let (e, h, k) = (config.embed_dim, config.hidden_dim, config.num_labels);
        let gh = config.cell.gates() * h;
        let cell = |dir: &str| CellParams {
            w_in: Param::zeros(format!("{dir}.w_in"), &[gh, e]),
            w_rec: Param::zeros(format!("{dir}.w_rec"), &[gh, h]),
            bias: Param::zeros(format!("{dir}.bias"), &[gh]),
        };
        Ok(TaggerParams {
            embedding: Param::zeros("embedding", &[config.vocab_size, e]),
            fwd: cell("fwd"),
            bwd: cell("bwd"),
            proj_w: Param::zeros("proj_w", &[2 * h, k]),
            proj_b: Param::zeros("proj_b", &[k]),
            w_raw: Param::zeros("w_raw", &[k, k]),
        })
    }

    /// Uniform(−0.1, 0.1) for every weight except `w_raw`, which stays zero.
    pub fn init(config: &TaggerConfig) -> Result<Self> {
        let mut p = TaggerParams::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for param in p.body_params_mut() {
            for x in param.value.data_mut() {
                *x = rng.random_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        Ok(p)
    }

    /// Every parameter the forward pass reads, i.e. all but `w_raw`.
    pub fn body_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.params_mut();
        v.pop();
        v
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.is_finite())
    }
}

impl ParamSet for TaggerParams {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.embedding,
            &self.fwd.w_in,
            &self.fwd.w_rec,
            &self.fwd.bias,
            &self.bwd.w_in,
            &self.bwd.w_rec,
            &self.bwd.bias,
            &self.proj_w,
            &self.proj_b,
            &self.w_raw,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.embedding,
            &mut self.fwd.w_in,
            &mut self.fwd.w_rec,
            &mut self.fwd.bias,
            &mut self.bwd.w_in,
            &mut self.bwd.w_rec,
            &mut self.bwd.bias,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.w_raw,
        ]
    }
}

/// Per-token logits, `n × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSequence {
    m: Tensor,
}

impl LogitSequence {
    pub fn from_tensor(m: Tensor) -> Result<Self> {
        if m.shape().len() != 2 {
            return Err(Error::Shape(format!("logits must be a matrix, got shape {:?}", m.shape())));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(LogitSequence { m })
    }

    pub fn len(&self) -> usize {
        self.m.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_labels(&self) -> usize {
        self.m.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.m.row(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.m
    }
}

/// `α_t = M·exp(m_t)` for every token.
pub fn concentrations(m: &LogitSequence, scale: f64) -> Result<Vec<Concentration>> {
    (0..m.len()).map(|t| Concentration::from_logits(m.row(t), scale)).collect()
}

// Activations of one direction, stored in processing order.
#[derive(Debug, Clone)]
struct DirCache {
    /// Token positions in processing order.
    order: Vec<usize>,
    /// `h` after each step, `n × H`.
    states: Vec<f64>,
    /// Gate activations, `n × G·H`.
    gates: Vec<f64>,
    /// `U_n h_prev` for the gated cell, `n × H`.
    rec_n: Vec<f64>,
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ids: Vec<usize>,
    fwd: DirCache,
    bwd: DirCache,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn run_direction(
    config: &TaggerConfig,
    emb: &Tensor,
    cell: &CellParams,
    ids: &[usize],
    order: Vec<usize>,
) -> DirCache {
    let (e, h) = (config.embed_dim, config.hidden_dim);
    let g = config.cell.gates();
    let n = ids.len();
    let mut states = vec![0.0; n * h];
    let mut gates = vec![0.0; n * g * h];
    let mut rec_n = if config.cell == CellKind::Gated { vec![0.0; n * h] } else { Vec::new() };
    let w_in = cell.w_in.value.data();
    let w_rec = cell.w_rec.value.data();
    let bias = cell.bias.value.data();
    let zero = vec![0.0; h];
    let mut pre = vec![0.0; g * h];
    for (step, &pos) in order.iter().enumerate() {
        let x = emb.row(ids[pos]);
        let h_prev: &[f64] = if step == 0 { &zero } else { &states[(step - 1) * h..step * h] };
        pre.copy_from_slice(bias);
        matvec_add(w_in, g * h, e, x, &mut pre);
        match config.cell {
            CellKind::SimpleTanh => {
                matvec_add(w_rec, h, h, h_prev, &mut pre);
                let h_new: Vec<f64> = pre.iter().map(|a| a.tanh()).collect();
                gates[step * h..(step + 1) * h].copy_from_slice(&h_new);
                states[step * h..(step + 1) * h].copy_from_slice(&h_new);
            }
            CellKind::Gated => {
                // z and r see U h_prev directly; the candidate sees r ⊙ (U_n h_prev)
                matvec_add(&w_rec[..2 * h * h], 2 * h, h, h_prev, &mut pre[..2 * h]);
                let un = &mut rec_n[step * h..(step + 1) * h];
                matvec_add(&w_rec[2 * h * h..], h, h, h_prev, un);
                let gs = &mut gates[step * 3 * h..(step + 1) * 3 * h];
                let mut h_new = vec![0.0; h];
                for i in 0..h {
                    let z = sigmoid(pre[i]);
                    let r = sigmoid(pre[h + i]);
                    let cand = (pre[2 * h + i] + r * un[i]).tanh();
                    gs[i] = z;
                    gs[h + i] = r;
                    gs[2 * h + i] = cand;
                    h_new[i] = (1.0 - z) * cand + z * h_prev[i];
                }
                states[step * h..(step + 1) * h].copy_from_slice(&h_new);
            }
        }
    }
    DirCache { order, states, gates, rec_n }
}

/// Logits for a sequence of word ids, plus the activations needed by
/// [`backward`]. Pure in `(params, ids)`.
pub fn forward(config: &TaggerConfig, params: &TaggerParams, ids: &[usize]) -> Result<(LogitSequence, ForwardCache)> {
    if ids.is_empty() {
        return Err(Error::Data("cannot tag an empty utterance".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= config.vocab_size) {
        return Err(Error::Shape(format!("word id {bad} outside vocabulary of size {}", config.vocab_size)));
    }
    let n = ids.len();
    let (h, k) = (config.hidden_dim, config.num_labels);
    let emb = &params.embedding.value;
    let fwd = run_direction(config, emb, &params.fwd, ids, (0..n).collect());
    let bwd = run_direction(config, emb, &params.bwd, ids, (0..n).rev().collect());
    let mut m = Tensor::zeros(&[n, k]);
    let mut feat = vec![0.0; 2 * h];
    for t in 0..n {
        feat[..h].copy_from_slice(&fwd.states[t * h..(t + 1) * h]);
        let sb = n - 1 - t;
        feat[h..].copy_from_slice(&bwd.states[sb * h..(sb + 1) * h]);
        let row = m.row_mut(t);
        row.copy_from_slice(params.proj_b.value.data());
        matvec_t_add(params.proj_w.value.data(), 2 * h, k, &feat, row);
    }
    let logits = LogitSequence::from_tensor(m)?;
    Ok((logits, ForwardCache { ids: ids.to_vec(), fwd, bwd }))
}

fn backprop_direction(
    config: &TaggerConfig,
    emb: &Tensor,
    cell: &mut CellParams,
    emb_grad: &mut Tensor,
    ids: &[usize],
    cache: &DirCache,
    // dL/dh at each processing step, `n × H`; consumed.
    mut dstates: Vec<f64>,
) {
    let (e, h) = (config.embed_dim, config.hidden_dim);
    let g = config.cell.gates();
    let n = ids.len();
    let mut dpre = vec![0.0; g * h];
    let mut dx = vec![0.0; e];
    let zero = vec![0.0; h];
    for step in (0..n).rev() {
        let pos = cache.order[step];
        let x = emb.row(ids[pos]);
        let h_prev: &[f64] = if step == 0 { &zero } else { &cache.states[(step - 1) * h..step * h] };
        let dh: Vec<f64> = dstates[step * h..(step + 1) * h].to_vec();
        let mut dh_prev = vec![0.0; h];
        match config.cell {
            CellKind::SimpleTanh => {
                let out = &cache.gates[step * h..(step + 1) * h];
                for i in 0..h {
                    dpre[i] = dh[i] * (1.0 - out[i] * out[i]);
                }
                outer_add(cell.w_rec.grad.data_mut(), &dpre, h_prev);
                matvec_t_add(cell.w_rec.value.data(), h, h, &dpre, &mut dh_prev);
            }
            CellKind::Gated => {
                let gs = &cache.gates[step * 3 * h..(step + 1) * 3 * h];
                let un = &cache.rec_n[step * h..(step + 1) * h];
                // candidate pre-activation gradient doubles as the W_n/b_n gradient;
                // U_n receives it gated by r
                let mut dun = vec![0.0; h];
                for i in 0..h {
                    let (z, r, cand) = (gs[i], gs[h + i], gs[2 * h + i]);
                    let dcand = dh[i] * (1.0 - z);
                    let dz = dh[i] * (h_prev[i] - cand);
                    dh_prev[i] = dh[i] * z;
                    let dan = dcand * (1.0 - cand * cand);
                    dpre[2 * h + i] = dan;
                    dpre[i] = dz * z * (1.0 - z);
                    dpre[h + i] = dan * un[i] * r * (1.0 - r);
                    dun[i] = dan * r;
                }
                let wr = cell.w_rec.grad.data_mut();
                outer_add(&mut wr[..2 * h * h], &dpre[..2 * h], h_prev);
                outer_add(&mut wr[2 * h * h..], &dun, h_prev);
                let wv = cell.w_rec.value.data();
                matvec_t_add(&wv[..2 * h * h], 2 * h, h, &dpre[..2 * h], &mut dh_prev);
                matvec_t_add(&wv[2 * h * h..], h, h, &dun, &mut dh_prev);
            }
        }
        for (b, d) in cell.bias.grad.data_mut().iter_mut().zip(&dpre) {
            *b += d;
        }
        outer_add(cell.w_in.grad.data_mut(), &dpre, x);
        dx.fill(0.0);
        matvec_t_add(cell.w_in.value.data(), g * h, e, &dpre, &mut dx);
        for (gv, d) in emb_grad.row_mut(ids[pos]).iter_mut().zip(&dx) {
            *gv += d;
        }
        if step > 0 {
            for (a, b) in dstates[(step - 1) * h..step * h].iter_mut().zip(&dh_prev) {
                *a += b;
            }
        }
    }
}

/// Accumulates `∂L/∂θ` into the gradients of `params`, given
/// `upstream = ∂L/∂m` (`n × K`) and the cache of the matching forward call.
pub fn backward(config: &TaggerConfig, params: &mut TaggerParams, cache: &ForwardCache, upstream: &Tensor) -> Result<()> {
    let n = cache.ids.len();
    let (h, k) = (config.hidden_dim, config.num_labels);
    if upstream.shape() != [n, k] {
        return Err(Error::Shape(format!("upstream gradient has shape {:?}, expected [{n}, {k}]", upstream.shape())));
    }
    if cache.fwd.states.len() != n * h || cache.bwd.states.len() != n * h {
        return Err(Error::Shape("forward cache does not match the tagger configuration".into()));
    }
    let mut d_fwd = vec![0.0; n * h];
    let mut d_bwd = vec![0.0; n * h];
    let mut feat = vec![0.0; 2 * h];
    let mut dfeat = vec![0.0; 2 * h];
    for t in 0..n {
        let dm = upstream.row(t);
        let sb = n - 1 - t;
        feat[..h].copy_from_slice(&cache.fwd.states[t * h..(t + 1) * h]);
        feat[h..].copy_from_slice(&cache.bwd.states[sb * h..(sb + 1) * h]);
        for (b, d) in params.proj_b.grad.data_mut().iter_mut().zip(dm) {
            *b += d;
        }
        outer_add(params.proj_w.grad.data_mut(), &feat, dm);
        dfeat.fill(0.0);
        matvec_add(params.proj_w.value.data(), 2 * h, k, dm, &mut dfeat);
        d_fwd[t * h..(t + 1) * h].copy_from_slice(&dfeat[..h]);
        d_bwd[sb * h..(sb + 1) * h].copy_from_slice(&dfeat[h..]);
    }
    let TaggerParams { embedding, fwd, bwd, .. } = params;
    let Param { value: emb, grad: emb_grad, .. } = embedding;
    backprop_direction(config, emb, fwd, emb_grad, &cache.ids, &cache.fwd, d_fwd);
    backprop_direction(config, emb, bwd, emb_grad, &cache.ids, &cache.bwd, d_bwd);
    Ok(())
}

/// A trained tagger with everything needed to tag and score new text.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TaggerConfig,
    pub words: WordVocab,
    pub labels: LabelVocab,
    /// Words seen with label `O` in training.
    pub oov_vocab: BTreeSet<String>,
    pub params: TaggerParams,
}

impl Model {
    pub fn new(config: TaggerConfig, words: WordVocab, labels: LabelVocab, oov_vocab: BTreeSet<String>) -> Result<Self> {
        if config.vocab_size != words.len() || config.num_labels != labels.len() {
            return Err(Error::Config(format!(
                "config sizes ({} words, {} labels) disagree with vocabularies ({}, {})",
                config.vocab_size,
                config.num_labels,
                words.len(),
                labels.len()
            )));
        }
        let params = TaggerParams::init(&config)?;
        Ok(Model { config, words, labels, oov_vocab, params })
    }

    pub fn encode(&self, u: &Utterance) -> Vec<usize> {
        self.words.encode(&u.tokens)
    }

    pub fn logits(&self, u: &Utterance) -> Result<LogitSequence> {
        self.logits_with(&self.params, u)
    }

    /// Logits under substitute parameters (used by perturbation scores).
    pub fn logits_with(&self, params: &TaggerParams, u: &Utterance) -> Result<LogitSequence> {
        Ok(forward(&self.config, params, &self.encode(u))?.0)
    }

    /// Argmax label indices.
    pub fn predict_ids(&self, u: &Utterance) -> Result<Vec<usize>> {
        let m = self.logits(u)?;
        Ok((0..m.len()).map(|t| crate::numerics::argmax(m.row(t))).collect())
    }

    /// Argmax labels, unrepaired.
    pub fn predict(&self, u: &Utterance) -> Result<Vec<String>> {
        Ok(self.predict_ids(u)?.into_iter().map(|i| self.labels.label(i).to_string()).collect())
    }
}
