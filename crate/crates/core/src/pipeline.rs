//! End-to-end unknown-concept extraction: score, flag, optionally union with
//! the OOV rule, optionally grow along the dependency tree, emit IOB.

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::extraction::{expand_syntax, to_iob_unknown, NpRelationSet, UnknownMask};
use crate::tagger::Model;
use crate::uncertainty::{oov_flags, score, Metric, MetricKind, Threshold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub metric: Metric,
    /// Tokens scoring above this are flagged. Ignored by the `oov` metric.
    pub theta: f64,
    pub with_syntax: bool,
    pub with_oov: bool,
    pub relations: NpRelationSet,
}

impl Pipeline {
    pub fn new(metric: Metric, theta: f64) -> Self {
        Pipeline { metric, theta, with_syntax: false, with_oov: false, relations: NpRelationSet::default() }
    }

    pub fn from_threshold(t: &Threshold) -> Self {
        Pipeline::new(t.metric.clone(), t.theta)
    }

    /// Plain tagging: nothing is ever flagged.
    pub fn identity() -> Self {
        Pipeline::new(Metric::new(MetricKind::Confidence), f64::INFINITY)
    }

    pub fn syntax(mut self, on: bool) -> Self {
        self.with_syntax = on;
        self
    }

    pub fn oov(mut self, on: bool) -> Self {
        self.with_oov = on;
        self
    }

    /// Row name in the style `dirichlet-entropy+cal+syntax+oov`.
    pub fn label(&self) -> String {
        let mut s = self.metric.label();
        if self.with_syntax {
            s.push_str("+syntax");
        }
        if self.with_oov && self.metric.kind != MetricKind::Oov {
            s.push_str("+oov");
        }
        s
    }

    /// The unknown mask for one utterance, before IOB emission.
    pub fn mask(&self, model: &Model, u: &Utterance, index: u64) -> Result<(Vec<String>, UnknownMask)> {
        if self.theta.is_nan() {
            return Err(Error::Config("threshold is NaN".into()));
        }
        let theta = (self.metric.kind != MetricKind::Oov).then_some(self.theta);
        let scored = score(model, u, index, &self.metric, theta)?;
        let mut mask = UnknownMask::new(scored.flags.expect("flags requested"));
        if self.with_oov {
            mask = mask.union(&UnknownMask::new(oov_flags(&u.tokens, &scored.predicted, &model.oov_vocab)))?;
        }
        if self.with_syntax {
            mask = expand_syntax(&mask, u, &self.relations)?;
        }
        Ok((scored.predicted, mask))
    }

    pub fn run(&self, model: &Model, u: &Utterance, index: u64) -> Result<Vec<String>> {
        let (predicted, mask) = self.mask(model, u, index)?;
        to_iob_unknown(&mask, &predicted)
    }

    /// Runs every utterance; the position in `data` keys the RNG streams.
    pub fn run_all(&self, model: &Model, data: &[Utterance]) -> Result<Vec<Vec<String>>> {
        data.iter().enumerate().map(|(i, u)| self.run(model, u, i as u64)).collect()
    }
}
