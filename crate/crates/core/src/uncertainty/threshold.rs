use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{score, Metric};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::evaluation::{phrase_f1, SpanCounts};
use crate::extraction::{to_iob_unknown, UnknownMask};
use crate::tagger::Model;

/// A tuned decision threshold. `theta = +inf` flags nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    #[serde(with = "theta_repr")]
    pub theta: f64,
    pub metric: Metric,
    pub dev_f1_baseline: f64,
    pub dev_f1_at_theta: f64,
}

impl Threshold {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Threshold = serde_json::from_str(s)?;
        if t.theta.is_nan() || t.theta == f64::NEG_INFINITY {
            return Err(Error::Config(format!("invalid threshold {}", t.theta)));
        }
        Ok(t)
    }
}

// JSON has no infinity literal, so +inf travels as the string "inf".
mod theta_repr {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

/// Masked dev F1 at every candidate threshold, plus the chosen one.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    /// Sorted unique scores followed by `+inf`.
    pub candidates: Vec<f64>,
    pub f1: Vec<f64>,
    pub baseline: f64,
    /// Index into `candidates` of the smallest admissible threshold.
    pub chosen: usize,
}

impl ThresholdSearch {
    pub fn theta(&self) -> f64 {
        self.candidates[self.chosen]
    }

    pub fn f1_at_theta(&self) -> f64 {
        self.f1[self.chosen]
    }
}

fn counts_of(pred: &[String], gold: &[String]) -> Result<SpanCounts> {
    let r = phrase_f1(&[pred], &[gold])?;
    Ok(SpanCounts { pred: r.num_pred, gold: r.num_gold, correct: r.num_correct })
}

/// Span counts of one utterance for each band of thresholds between its
/// own distinct scores.
struct Levels {
    cuts: Vec<f64>,
    counts: Vec<SpanCounts>,
}

impl Levels {
    fn new(pred: &[String], scores: &[f64], gold: &[String]) -> Result<Self> {
        let mut cuts = scores.to_vec();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        // Band j covers cuts[j-1] <= theta < cuts[j]; the last band flags nothing.
        let mut counts = Vec::with_capacity(cuts.len() + 1);
        for j in 0..=cuts.len() {
            let flags = match j.checked_sub(1) {
                None => vec![true; scores.len()],
                Some(i) => scores.iter().map(|&s| s > cuts[i]).collect(),
            };
            let masked = to_iob_unknown(&UnknownMask::new(flags), pred)?;
            counts.push(counts_of(&masked, gold)?);
        }
        Ok(Levels { cuts, counts })
    }

    fn at(&self, theta: f64) -> SpanCounts {
        self.counts[self.cuts.partition_point(|&c| c <= theta)]
    }
}

/// Threshold search over precomputed predictions and scores.
pub fn select_threshold_from_scores<P, S, G>(preds: &[P], scores: &[S], gold: &[G]) -> Result<ThresholdSearch>
where
    P: AsRef<[String]>,
    S: AsRef<[f64]>,
    G: AsRef<[String]>,
{
    if preds.is_empty() {
        return Err(Error::Data("threshold selection needs a non-empty dev set".into()));
    }
    if preds.len() != scores.len() || preds.len() != gold.len() {
        return Err(Error::Shape("predictions, scores and gold differ in length".into()));
    }
    let mut candidates = Vec::new();
    let mut levels = Vec::with_capacity(preds.len());
    for ((p, s), g) in preds.iter().zip(scores).zip(gold) {
        let (p, s, g) = (p.as_ref(), s.as_ref(), g.as_ref());
        if p.len() != s.len() {
            return Err(Error::Shape(format!("{} labels vs {} scores", p.len(), s.len())));
        }
        if let Some(bad) = s.iter().find(|x| x.is_nan()) {
            return Err(Error::NonFinite(format!("uncertainty score {bad}")));
        }
        candidates.extend_from_slice(s);
        levels.push(Levels::new(p, s, g)?);
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);

    let f1_at = |theta: f64| {
        let mut total = SpanCounts::default();
        for l in &levels {
            total.add(l.at(theta));
        }
        total.prf().2
    };
    let f1: Vec<f64> = candidates.iter().map(|&t| f1_at(t)).collect();
    let baseline = *f1.last().expect("sentinel present");
    let chosen = f1
        .iter()
        .position(|&f| f >= 0.99 * baseline)
        .expect("the sentinel always satisfies the bound");
    Ok(ThresholdSearch { candidates, f1, baseline, chosen })
}

/// Picks the smallest threshold whose masked dev F1 stays within 1% of the
/// unmasked F1. Flagged tokens become unknown spans, without tree expansion.
pub fn select_threshold(model: &Model, dev: &[Utterance], metric: &Metric) -> Result<Threshold> {
    if !metric.kind.is_score_based() {
        return Err(Error::Config(format!("metric {} has no scores to threshold", metric.kind)));
    }
    let mut preds = Vec::with_capacity(dev.len());
    let mut scores = Vec::with_capacity(dev.len());
    for (i, u) in dev.iter().enumerate() {
        let s = score(model, u, i as u64, metric, None)?;
        preds.push(s.predicted);
        scores.push(s.scores);
    }
    let gold: Vec<&[String]> = dev.iter().map(|u| u.gold_labels.as_slice()).collect();
    let search = select_threshold_from_scores(&preds, &scores, &gold)?;
    Ok(Threshold {
        theta: search.theta(),
        metric: metric.clone(),
        dev_f1_baseline: search.baseline,
        dev_f1_at_theta: search.f1_at_theta(),
    })
}
