use std::fs;
use std::path::Path;

use slotunc::corpus::read_corpus_file;
use slotunc::tagger::load_checkpoint;
use slotunc::uncertainty::{select_threshold, Metric, Threshold};
use slotunc::{Error, Result};

/// Tunes θ on `dev_file` and writes the threshold record to `out_file`.
pub fn cmd_threshold(checkpoint: &Path, dev_file: &Path, metric: &Metric, out_file: &Path) -> Result<Threshold> {
    if !metric.kind.is_score_based() {
        return Err(Error::Config(format!("metric {} is a fixed rule and takes no threshold", metric.kind)));
    }
    let model = load_checkpoint(checkpoint)?;
    let dev = read_corpus_file(dev_file)?;
    if dev.iter().any(|u| u.has_unknown()) {
        return Err(Error::Data(format!("{} contains unknown spans; thresholds are tuned on in-domain data", dev_file.display())));
    }
    let t = select_threshold(&model, &dev, metric)?;
    if let Some(parent) = out_file.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut s = t.to_json()?;
    s.push('\n');
    fs::write(out_file, s)?;
    Ok(t)
}
