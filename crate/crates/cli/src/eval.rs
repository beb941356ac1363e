use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use slotunc::corpus::{read_corpus_file, Utterance};
use slotunc::evaluation::{ood_eval, phrase_f1, EvalReport, OodReport};
use slotunc::extraction::NpRelationSet;
use slotunc::pipeline::Pipeline;
use slotunc::tagger::{load_checkpoint, Model};
use slotunc::uncertainty::{Metric, Threshold};
use slotunc::{Error, Result};

use crate::read_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Ind,
    Ood,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Ind => "ind",
            EvalMode::Ood => "ood",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ind" => Ok(EvalMode::Ind),
            "ood" => Ok(EvalMode::Ood),
            _ => Err(Error::Config(format!("mode must be ind or ood, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub test_file: PathBuf,
    pub mode: EvalMode,
    /// Supplies metric and θ.
    pub threshold_file: Option<PathBuf>,
    /// Without a threshold file, θ = +inf (the `oov` rule needs none).
    pub metric: Option<Metric>,
    pub with_syntax: bool,
    pub with_oov: bool,
    pub relations: NpRelationSet,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalOutcome {
    Ind(EvalReport),
    Ood(OodReport),
}

impl EvalOutcome {
    /// In-domain F1, or the unknown-concept F1 in OOD mode.
    pub fn f1(&self) -> f64 {
        match self {
            EvalOutcome::Ind(r) => r.f1,
            EvalOutcome::Ood(r) => r.unknown.f1,
        }
    }
}

fn check_mode(data: &[Utterance], mode: EvalMode) -> Result<()> {
    match mode {
        EvalMode::Ind if data.iter().any(|u| u.has_unknown()) => {
            Err(Error::Data("in-domain evaluation got a file with unknown spans".into()))
        }
        EvalMode::Ood => match data.iter().position(|u| u.underlying_labels.is_none()) {
            Some(i) => Err(Error::Data(format!("OOD evaluation needs underlying labels; utterance {} has none", i + 1))),
            None => Ok(()),
        },
        EvalMode::Ind => Ok(()),
    }
}

pub(crate) fn evaluate(model: &Model, pipeline: &Pipeline, data: &[Utterance], mode: EvalMode) -> Result<EvalOutcome> {
    check_mode(data, mode)?;
    let preds = pipeline.run_all(model, data)?;
    match mode {
        EvalMode::Ind => {
            let gold: Vec<&[String]> = data.iter().map(|u| u.gold_labels.as_slice()).collect();
            Ok(EvalOutcome::Ind(phrase_f1(&preds, &gold)?))
        }
        EvalMode::Ood => Ok(EvalOutcome::Ood(ood_eval(&preds, data)?)),
    }
}

pub(crate) fn theta_text(theta: f64) -> String {
    if theta == f64::INFINITY {
        "inf".into()
    } else {
        format!("{theta:e}")
    }
}

pub(crate) fn render(pipeline: &Pipeline, mode: EvalMode, outcome: &EvalOutcome) -> (String, String) {
    let label = pipeline.label();
    let mut kv = format!("pipeline={label}\nmode={mode}\ntheta={}\n", theta_text(pipeline.theta));
    let mut table = format!("pipeline {label}, mode {mode}, theta {}\n\n", theta_text(pipeline.theta));
    match outcome {
        EvalOutcome::Ind(r) => {
            kv.push_str(&r.to_kv(""));
            table.push_str(&r.to_table("in-domain spans"));
        }
        EvalOutcome::Ood(r) => {
            kv.push_str(&r.unknown.to_kv("unknown."));
            kv.push_str(&r.ind_within_ood.to_kv("ind_within_ood."));
            table.push_str(&r.unknown.to_table(
                "unknown concepts (a gold unknown span is also credited when predicted with its underlying slot type and exact extent; such predictions count toward precision)",
            ));
            let _ = writeln!(table);
            table.push_str(&r.ind_within_ood.to_table("in-domain spans inside OOD utterances"));
        }
    }
    (kv, table)
}

/// Runs the extraction pipeline over a test file and writes `report.kv`
/// and `report.txt` into the output directory.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome> {
    let model = load_checkpoint(&args.checkpoint)?;
    let mut pipeline = match (&args.threshold_file, &args.metric) {
        (Some(p), metric) => {
            let t = Threshold::from_json(&read_text(p)?)?;
            if let Some(m) = metric {
                if m.kind != t.metric.kind || m.use_calibration != t.metric.use_calibration {
                    return Err(Error::Config(format!(
                        "metric {} does not match the threshold file's {}",
                        m.label(),
                        t.metric.label()
                    )));
                }
            }
            Pipeline::from_threshold(&t)
        }
        (None, Some(m)) => Pipeline::new(m.clone(), f64::INFINITY),
        (None, None) => Pipeline::identity(),
    };
    pipeline.with_syntax = args.with_syntax;
    pipeline.with_oov = args.with_oov;
    pipeline.relations = args.relations.clone();
    pipeline.metric.validate(model.config.num_labels)?;

    let data = read_corpus_file(&args.test_file)?;
    let outcome = evaluate(&model, &pipeline, &data, args.mode)?;
    let (kv, table) = render(&pipeline, args.mode, &outcome);
    write_out(&args.out_dir, &kv, &table)?;
    Ok(outcome)
}

fn write_out(dir: &Path, kv: &str, table: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.kv"), kv)?;
    fs::write(dir.join("report.txt"), table)?;
    Ok(())
}
