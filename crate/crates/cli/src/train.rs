use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::ops::ControlFlow;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slotunc::corpus::{Dataset, SPLIT_FILES};
use slotunc::tagger::{save_checkpoint, Model};
use slotunc::training::{train_with, LossReport, TrainObserver, TrainOutcome};
use slotunc::Result;

use crate::{hash_file, read_text, write_json, RunConfig};

/// Command-line values that replace config-file entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub delta: Option<f64>,
    pub lambda_cal: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let Some(d) = self.delta {
            c.train.delta = d;
        }
        if let Some(l) = self.lambda_cal {
            c.train.lambda_cal = l;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    /// `baseline` when the calibration term is off, else `calibrated`.
    pub label: String,
    pub config: RunConfig,
    pub data_sha256: BTreeMap<String, String>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub last_dev_f1: f64,
}

#[derive(Serialize)]
struct LogLine {
    epoch: usize,
    ce_loss: f64,
    cal_entropy: f64,
    dev_f1: f64,
}

#[derive(Serialize)]
struct TimingLine {
    epoch: usize,
    wall_ms: u64,
}

// Checkpoints and log lines are written as each epoch finishes, so a killed
// run leaves a loadable `last.ckpt`.
struct RunWriter<'a> {
    dir: &'a Path,
    log: File,
    timing: File,
    best_f1: Option<f64>,
}

impl TrainObserver for RunWriter<'_> {
    fn after_epoch(&mut self, current: &Model, best: &Model, r: &LossReport) -> Result<ControlFlow<()>> {
        let line = LogLine { epoch: r.epoch, ce_loss: r.ce_loss, cal_entropy: r.cal_entropy, dev_f1: r.dev_f1 };
        writeln!(self.log, "{}", serde_json::to_string(&line)?)?;
        let timing = TimingLine { epoch: r.epoch, wall_ms: r.wall_ms };
        writeln!(self.timing, "{}", serde_json::to_string(&timing)?)?;
        save_checkpoint(current, &self.dir.join("last.ckpt"))?;
        if self.best_f1.is_none_or(|f| r.dev_f1 > f) {
            self.best_f1 = Some(r.dev_f1);
            save_checkpoint(best, &self.dir.join("best.ckpt"))?;
        }
        Ok(ControlFlow::Continue(()))
    }
}

/// Trains on an in-memory dataset and writes the run directory.
pub fn train_run(
    data: &Dataset,
    data_sha256: BTreeMap<String, String>,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<(TrainOutcome, TrainManifest)> {
    config.validate()?;
    data.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), config.to_toml())?;
    let mut writer = RunWriter {
        dir: out_dir,
        log: File::create(out_dir.join("train_log.jsonl"))?,
        timing: File::create(out_dir.join("timing.jsonl"))?,
        best_f1: None,
    };
    let outcome = train_with(data, config.tagger.to_config(config.train.seed), &config.train, &mut writer)?;
    let (best_epoch, best_dev_f1) = outcome
        .reports
        .iter()
        .fold((0, f64::NEG_INFINITY), |acc, r| if r.dev_f1 > acc.1 { (r.epoch, r.dev_f1) } else { acc });
    let manifest = TrainManifest {
        label: if config.train.lambda_cal == 0.0 { "baseline" } else { "calibrated" }.to_string(),
        config: config.clone(),
        data_sha256,
        epochs_run: outcome.reports.len(),
        best_epoch,
        best_dev_f1,
        last_dev_f1: outcome.reports.last().map_or(0.0, |r| r.dev_f1),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok((outcome, manifest))
}

pub(crate) fn load_data(data_dir: &Path) -> Result<(Dataset, BTreeMap<String, String>)> {
    let data = Dataset::load_dir(data_dir)?;
    let mut hashes = BTreeMap::new();
    for f in SPLIT_FILES {
        hashes.insert(f.to_string(), hash_file(&data_dir.join(f))?);
    }
    Ok((data, hashes))
}

/// Trains from a data directory; writes `best.ckpt`, `last.ckpt`,
/// `train_log.jsonl`, `timing.jsonl`, `config.toml` and `manifest.json`.
pub fn cmd_train(
    data_dir: &Path,
    config_path: Option<&Path>,
    out_dir: &Path,
    overrides: &TrainOverrides,
) -> Result<TrainManifest> {
    let mut config = match config_path {
        Some(p) => RunConfig::from_toml(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    let (data, hashes) = load_data(data_dir)?;
    Ok(train_run(&data, hashes, &config, out_dir)?.1)
}
