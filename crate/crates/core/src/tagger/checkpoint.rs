//! Versioned checkpoint files.
//!
//! Layout: a first line `#slotunc-checkpoint v<N>` followed by a JSON body
//! holding the tagger config, both vocabularies, the OOV word list and every
//! parameter as `(name, shape, data)`. Floats round-trip exactly.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, TaggerConfig, TaggerParams};
use crate::corpus::{LabelVocab, WordVocab};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &str = "#slotunc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Body {
    config: TaggerConfig,
    words: WordVocab,
    labels: LabelVocab,
    oov_vocab: BTreeSet<String>,
    params: Vec<ParamRecord>,
}

pub(crate) fn to_string(model: &Model) -> Result<String> {
    let body = Body {
        config: model.config.clone(),
        words: model.words.clone(),
        labels: model.labels.clone(),
        oov_vocab: model.oov_vocab.clone(),
        params: model
            .params
            .params()
            .into_iter()
            .map(|p| ParamRecord { name: p.name.clone(), shape: p.value.shape().to_vec(), data: p.value.data().to_vec() })
            .collect(),
    };
    let mut out = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n");
    out.push_str(&serde_json::to_string(&body)?);
    out.push('\n');
    Ok(out)
}

pub(crate) fn from_str(text: &str) -> Result<Model> {
    let (header, body) = text.split_once('\n').ok_or(Error::BadMagic)?;
    let version = header.strip_prefix(CHECKPOINT_MAGIC).and_then(|v| v.strip_prefix(" v")).ok_or(Error::BadMagic)?;
    let found: u32 = version.trim().parse().map_err(|_| Error::BadMagic)?;
    if found != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found, expected: CHECKPOINT_VERSION });
    }
    let body: Body = serde_json::from_str(body).map_err(|e| Error::Corrupt(e.to_string()))?;
    body.config.validate()?;
    if body.words.len() != body.config.vocab_size || body.labels.len() != body.config.num_labels {
        return Err(Error::Corrupt("vocabulary sizes disagree with the stored config".into()));
    }
    let mut params = TaggerParams::zeros(&body.config)?;
    let slots = params.params_mut();
    if slots.len() != body.params.len() {
        return Err(Error::Corrupt(format!("expected {} parameters, found {}", slots.len(), body.params.len())));
    }
    for (slot, rec) in slots.into_iter().zip(body.params) {
        if slot.name != rec.name || slot.value.shape() != rec.shape.as_slice() {
            return Err(Error::Corrupt(format!(
                "parameter {} {:?} does not match expected {} {:?}",
                rec.name,
                rec.shape,
                slot.name,
                slot.value.shape()
            )));
        }
        let t = Tensor::from_vec(&rec.shape, rec.data).map_err(|e| Error::Corrupt(e.to_string()))?;
        if !t.is_finite() {
            return Err(Error::Corrupt(format!("parameter {} holds non-finite values", rec.name)));
        }
        slot.value = t;
    }
    Ok(Model { config: body.config, words: body.words, labels: body.labels, oov_vocab: body.oov_vocab, params })
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let text = to_string(model)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    from_str(&fs::read_to_string(path)?)
}
