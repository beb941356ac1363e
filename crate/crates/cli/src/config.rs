use serde::{Deserialize, Serialize};
use slotunc::extraction::DEFAULT_NP_RELATIONS;
use slotunc::tagger::{CellKind, TaggerConfig};
use slotunc::training::TrainConfig;
use slotunc::uncertainty::Metric;
use slotunc::{Error, Result};

use crate::eval::EvalMode;

/// Tagger shape; vocabulary and label counts come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub cell: CellKind,
    pub scale: f64,
}

impl Default for TaggerSection {
    fn default() -> Self {
        let t = TaggerConfig::new(0, 0, 0);
        TaggerSection { embed_dim: t.embed_dim, hidden_dim: t.hidden_dim, cell: t.cell, scale: t.scale }
    }
}

impl TaggerSection {
    /// Initialization draws from the training seed.
    pub fn to_config(&self, seed: u64) -> TaggerConfig {
        TaggerConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_labels: 0,
            vocab_size: 0,
            cell: self.cell,
            seed,
            scale: self.scale,
        }
    }
}

/// The `train` command's config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tagger: TaggerSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let mut t = self.tagger.to_config(self.train.seed);
        // placeholders so the shape checks can run before the data is read
        t.num_labels = 2;
        t.vocab_size = 3;
        t.validate()
    }
}

/// One named row of a sweep: how to train and how to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub lambda_cal: f64,
    pub mode: EvalMode,
    /// Absent means plain tagging with nothing flagged.
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub with_syntax: bool,
    #[serde(default)]
    pub with_oov: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub a: String,
    pub b: String,
}

/// The `sweep` command's config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_seeds: usize,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default = "default_relations")]
    pub relations: Vec<String>,
    #[serde(rename = "variant")]
    pub variants: Vec<Variant>,
    /// Pairs to t-test; every pair when empty.
    #[serde(default, rename = "compare")]
    pub comparisons: Vec<Comparison>,
}

fn default_base_seed() -> u64 {
    1
}

fn default_relations() -> Vec<String> {
    DEFAULT_NP_RELATIONS.iter().map(|s| s.to_string()).collect()
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SweepConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds < 2 {
            return Err(Error::Config(format!("a sweep needs at least 2 seeds, got {}", self.n_seeds)));
        }
        self.run.validate()?;
        if self.variants.is_empty() {
            return Err(Error::Config("a sweep needs at least one variant".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for v in &self.variants {
            if !names.insert(v.name.as_str()) {
                return Err(Error::Config(format!("duplicate variant name {:?}", v.name)));
            }
            if !(v.lambda_cal >= 0.0 && v.lambda_cal.is_finite()) {
                return Err(Error::Config(format!("variant {}: lambda_cal must be non-negative", v.name)));
            }
        }
        for c in &self.comparisons {
            for n in [&c.a, &c.b] {
                if !names.contains(n.as_str()) {
                    return Err(Error::Config(format!("comparison names unknown variant {n:?}")));
                }
            }
        }
        Ok(())
    }

    /// Explicit comparisons, or every pair in declaration order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        if !self.comparisons.is_empty() {
            return self.comparisons.iter().map(|c| (c.a.clone(), c.b.clone())).collect();
        }
        let mut out = Vec::new();
        for (i, a) in self.variants.iter().enumerate() {
            for b in &self.variants[i + 1..] {
                out.push((a.name.clone(), b.name.clone()));
            }
        }
        out
    }
}
