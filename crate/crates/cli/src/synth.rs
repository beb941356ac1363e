use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slotunc::corpus::{synth_corpus, ConceptStats, SynthConfig, SPLIT_FILES};
use slotunc::Result;

use crate::{hash_file, read_text, sha256_hex, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    /// Hash of the effective config, also saved as `synth_config.toml`.
    pub config_sha256: String,
    /// Per slot: hash of its in-domain and out-of-domain value lists.
    pub pool_sha256: BTreeMap<String, String>,
    pub files: BTreeMap<String, String>,
    pub utterances: BTreeMap<String, usize>,
    /// Unknown-concept statistics of the OOD test split.
    pub ood_concepts: ConceptStats,
}

fn pool_hash(ind: &[String], ood: &[String]) -> String {
    let text = format!("ind\n{}\nood\n{}\n", ind.join("\n"), ood.join("\n"));
    sha256_hex(text.as_bytes())
}

/// Generates the four splits into `out_dir`. Without a config file the
/// built-in benchmark is used; `seed` overrides the configured seed.
pub fn cmd_synth(config_path: Option<&Path>, out_dir: &Path, seed: Option<u64>) -> Result<SynthManifest> {
    let text = match config_path {
        Some(p) => read_text(p)?,
        None => SynthConfig::default_toml().to_string(),
    };
    let mut config = SynthConfig::from_toml(&text)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    let snapshot = toml::to_string(&config).expect("plain data serializes");
    let data = synth_corpus(&config)?;
    data.write_dir(out_dir)?;

    let mut files = BTreeMap::new();
    for f in SPLIT_FILES {
        files.insert(f.to_string(), hash_file(&out_dir.join(f))?);
    }
    let utterances = SPLIT_FILES
        .iter()
        .zip([&data.train, &data.dev, &data.test_ind, &data.test_ood])
        .map(|(f, s)| (f.to_string(), s.len()))
        .collect();
    let manifest = SynthManifest {
        seed: config.seed,
        config_sha256: sha256_hex(snapshot.as_bytes()),
        pool_sha256: config.slots.iter().map(|s| (s.name.clone(), pool_hash(&s.ind, &s.ood))).collect(),
        files,
        utterances,
        ood_concepts: ConceptStats::of(&data.test_ood)?,
    };
    fs::write(out_dir.join("synth_config.toml"), &snapshot)?;
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
