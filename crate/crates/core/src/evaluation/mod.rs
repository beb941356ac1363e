//! Span-level precision/recall/F1, the unknown-concept protocol and the
//! seed-sweep significance test.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{iob_spans, Span, Utterance, UNKNOWN_TAG};
use crate::error::{Error, Result};
use crate::numerics::student_t_two_sided_p;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub pred: usize,
    pub gold: usize,
    pub correct: usize,
}

impl SpanCounts {
    pub fn add(&mut self, other: SpanCounts) {
        self.pred += other.pred;
        self.gold += other.gold;
        self.correct += other.correct;
    }

    /// `(precision, recall, f1)`, each 0 when its denominator is 0.
    pub fn prf(&self) -> (f64, f64, f64) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.correct, self.pred);
        let r = ratio(self.correct, self.gold);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub num_pred: usize,
    pub num_gold: usize,
    pub num_correct: usize,
    pub per_tag: BTreeMap<String, SpanCounts>,
}

impl EvalReport {
    pub fn from_counts(per_tag: BTreeMap<String, SpanCounts>) -> Self {
        let mut total = SpanCounts::default();
        for c in per_tag.values() {
            total.add(*c);
        }
        let (precision, recall, f1) = total.prf();
        EvalReport {
            precision,
            recall,
            f1,
            num_pred: total.pred,
            num_gold: total.gold,
            num_correct: total.correct,
            per_tag,
        }
    }

    /// `key=value` lines; scores are percentages with 4 decimals.
    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}precision={:.4}", 100.0 * self.precision);
        let _ = writeln!(s, "{prefix}recall={:.4}", 100.0 * self.recall);
        let _ = writeln!(s, "{prefix}f1={:.4}", 100.0 * self.f1);
        let _ = writeln!(s, "{prefix}num_pred={}", self.num_pred);
        let _ = writeln!(s, "{prefix}num_gold={}", self.num_gold);
        let _ = writeln!(s, "{prefix}num_correct={}", self.num_correct);
        for (tag, c) in &self.per_tag {
            let (p, r, f) = c.prf();
            let _ = writeln!(
                s,
                "{prefix}tag.{tag}=pred:{} gold:{} correct:{} p:{:.4} r:{:.4} f1:{:.4}",
                c.pred,
                c.gold,
                c.correct,
                100.0 * p,
                100.0 * r,
                100.0 * f
            );
        }
        s
    }

    pub fn to_table(&self, title: &str) -> String {
        let mut s = format!("{title}\n");
        let _ = writeln!(s, "{:<20} {:>6} {:>6} {:>7} {:>8} {:>8} {:>8}", "tag", "pred", "gold", "correct", "P", "R", "F1");
        let mut row = |tag: &str, c: &SpanCounts| {
            let (p, r, f) = c.prf();
            let _ = writeln!(
                s,
                "{:<20} {:>6} {:>6} {:>7} {:>8.2} {:>8.2} {:>8.2}",
                tag,
                c.pred,
                c.gold,
                c.correct,
                100.0 * p,
                100.0 * r,
                100.0 * f
            );
        };
        for (tag, c) in &self.per_tag {
            row(tag, c);
        }
        row("ALL", &SpanCounts { pred: self.num_pred, gold: self.num_gold, correct: self.num_correct });
        s
    }
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: {a} predicted vs {b} gold")))
    }
}

/// Exact `(start, end, tag)` span matching, micro-averaged over the corpus.
pub fn phrase_f1<P: AsRef<[String]>, G: AsRef<[String]>>(pred: &[P], gold: &[G]) -> Result<EvalReport> {
    check_lengths(pred.len(), gold.len(), "utterance count")?;
    let mut per_tag: BTreeMap<String, SpanCounts> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (p.as_ref(), g.as_ref());
        check_lengths(p.len(), g.len(), "utterance length")?;
        let ps = iob_spans(p)?;
        let gs = iob_spans(g)?;
        let gold_set: HashSet<&Span> = gs.iter().collect();
        for s in &ps {
            let c = per_tag.entry(s.tag.clone()).or_default();
            c.pred += 1;
            if gold_set.contains(s) {
                c.correct += 1;
            }
        }
        for s in &gs {
            per_tag.entry(s.tag.clone()).or_default().gold += 1;
        }
    }
    Ok(EvalReport::from_counts(per_tag))
}

/// Scores of predictions on unknown-concept test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    /// Gold unknown spans. A gold span is credited when predicted as an
    /// unknown span with the same extent, or as a typed span with the same
    /// extent and its underlying slot type; the latter also counts as a
    /// prediction. Per-tag rows are keyed by underlying slot type, with
    /// unmatched unknown predictions under `unknown`.
    pub unknown: EvalReport,
    /// In-distribution spans that co-occur in the same utterances; typed
    /// predictions credited to an unknown span above are excluded.
    pub ind_within_ood: EvalReport,
}

fn underlying_tag(u: &Utterance, span: &Span) -> Result<String> {
    let under = u
        .underlying_labels
        .as_ref()
        .ok_or_else(|| Error::Data("unknown span without underlying labels".into()))?;
    let spans = iob_spans(under)?;
    spans
        .into_iter()
        .find(|s| s.same_extent(span))
        .map(|s| s.tag)
        .ok_or_else(|| Error::Data(format!("no underlying span at tokens {}..={}", span.start, span.end)))
}

pub fn ood_eval<P: AsRef<[String]>>(pred: &[P], gold: &[Utterance]) -> Result<OodReport> {
    check_lengths(pred.len(), gold.len(), "utterance count")?;
    let mut unk: BTreeMap<String, SpanCounts> = BTreeMap::new();
    let mut ind: BTreeMap<String, SpanCounts> = BTreeMap::new();
    for (p, u) in pred.iter().zip(gold) {
        let p = p.as_ref();
        check_lengths(p.len(), u.len(), "utterance length")?;
        let ps = iob_spans(p)?;
        let gs = iob_spans(&u.gold_labels)?;
        let mut lenient_used: HashSet<&Span> = HashSet::new();
        let mut unknown_credited: HashSet<&Span> = HashSet::new();
        for g in gs.iter().filter(|g| g.tag == UNKNOWN_TAG) {
            let under = underlying_tag(u, g)?;
            let c = unk.entry(under.clone()).or_default();
            c.gold += 1;
            if let Some(hit) = ps.iter().find(|s| s.same_extent(g) && s.tag == UNKNOWN_TAG) {
                c.correct += 1;
                c.pred += 1;
                unknown_credited.insert(hit);
            } else if let Some(hit) = ps.iter().find(|s| s.same_extent(g) && s.tag == under) {
                c.correct += 1;
                c.pred += 1;
                lenient_used.insert(hit);
            }
        }
        let stray = ps.iter().filter(|s| s.tag == UNKNOWN_TAG && !unknown_credited.contains(s)).count();
        if stray > 0 {
            unk.entry(UNKNOWN_TAG.to_string()).or_default().pred += stray;
        }
        let gold_ind: HashSet<&Span> = gs.iter().filter(|g| g.tag != UNKNOWN_TAG).collect();
        for s in ps.iter().filter(|s| s.tag != UNKNOWN_TAG && !lenient_used.contains(s)) {
            let c = ind.entry(s.tag.clone()).or_default();
            c.pred += 1;
            if gold_ind.contains(s) {
                c.correct += 1;
            }
        }
        for g in &gold_ind {
            ind.entry(g.tag.clone()).or_default().gold += 1;
        }
    }
    Ok(OodReport { unknown: EvalReport::from_counts(unk), ind_within_ood: EvalReport::from_counts(ind) })
}

/// Welch two-sample t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub fn seed_sweep_ttest(runs_a: &[f64], runs_b: &[f64]) -> Result<TTest> {
    if runs_a.len() < 2 || runs_b.len() < 2 {
        return Err(Error::Domain("t-test needs at least 2 runs per configuration".into()));
    }
    if runs_a.iter().chain(runs_b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("t-test input".into()));
    }
    let (ma, va) = mean_var(runs_a);
    let (mb, vb) = mean_var(runs_b);
    let (sa, sb) = (va / runs_a.len() as f64, vb / runs_b.len() as f64);
    if sa + sb == 0.0 {
        return Err(Error::Domain("both samples have zero variance".into()));
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (runs_a.len() as f64 - 1.0) + sb * sb / (runs_b.len() as f64 - 1.0));
    let p = student_t_two_sided_p(t, df)?;
    Ok(TTest { mean_a: ma, mean_b: mb, t, df, p })
}
