//! Seeded template generator for in-distribution and unknown-concept corpora.
//!
//! Every template token is either a carrier word or a `{slot}` placeholder.
//! Carrier words attach to the template root (its verb) with `dep`; a slot
//! value's last word attaches to the root with `obj` and its other words
//! attach to the last word with `compound`. In the OOD split a subset of the
//! placeholders is filled from the OOD pool and labelled `B-/I-unknown`, with
//! the true slot type kept in the underlying column.

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{iob_spans, Dataset, Provenance, Utterance, UNKNOWN_TAG};
use crate::error::{Error, Result};

const DEFAULT_CONFIG: &str = include_str!("../../data/synth_default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test_ind: usize,
    pub test_ood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPool {
    pub name: String,
    /// In-distribution values, used by every split.
    pub ind: Vec<String>,
    /// Values substituted into the OOD test split only.
    pub ood: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    /// Whitespace-separated words and `{slot}` placeholders.
    pub text: String,
    /// Template position of the root word; must be a carrier.
    #[serde(default)]
    pub root: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Chance that each placeholder of an OOD utterance receives an OOD value.
    /// At least one placeholder always does.
    #[serde(default = "default_ood_slot_prob")]
    pub ood_slot_prob: f64,
    pub sizes: SplitSizes,
    pub slots: Vec<SlotPool>,
    pub templates: Vec<Template>,
}

fn default_ood_slot_prob() -> f64 {
    0.5
}

enum Piece {
    Word(String),
    Slot(usize),
}

struct Compiled {
    pieces: Vec<Piece>,
    root: usize,
}

impl SynthConfig {
    /// The built-in benchmark: 8 slot types over music, dining, travel,
    /// film, books and reminders.
    pub fn default_benchmark() -> Self {
        SynthConfig::from_toml(DEFAULT_CONFIG).expect("built-in synth config is valid")
    }

    pub fn default_toml() -> &'static str {
        DEFAULT_CONFIG
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }

    /// Carrier words of every template.
    pub fn carrier_words(&self) -> BTreeSet<String> {
        self.templates
            .iter()
            .flat_map(|t| t.text.split_whitespace())
            .filter(|w| !is_placeholder(w))
            .map(String::from)
            .collect()
    }

    /// Whether no OOD value shares a token with any IND value or carrier word.
    pub fn ood_tokens_disjoint(&self) -> bool {
        let mut seen: HashSet<String> = self.carrier_words().into_iter().collect();
        for s in &self.slots {
            seen.extend(s.ind.iter().flat_map(|v| v.split_whitespace()).map(String::from));
        }
        self.slots
            .iter()
            .flat_map(|s| s.ood.iter().flat_map(|v| v.split_whitespace()))
            .all(|w| !seen.contains(w))
    }

    fn compile(&self) -> Result<Vec<Compiled>> {
        let cfg_err = |m: String| Error::Config(m);
        if !(0.0..=1.0).contains(&self.ood_slot_prob) {
            return Err(cfg_err(format!("ood_slot_prob {} outside [0, 1]", self.ood_slot_prob)));
        }
        if self.sizes.train == 0 {
            return Err(cfg_err("train size must be positive".into()));
        }
        if self.slots.is_empty() || self.templates.is_empty() {
            return Err(cfg_err("need at least one slot and one template".into()));
        }
        let mut names = HashSet::new();
        for s in &self.slots {
            if s.name.is_empty() || s.name == UNKNOWN_TAG || s.name.chars().any(char::is_whitespace) {
                return Err(cfg_err(format!("invalid slot name {:?}", s.name)));
            }
            if !names.insert(s.name.as_str()) {
                return Err(cfg_err(format!("duplicate slot {}", s.name)));
            }
            if s.ind.is_empty() || s.ood.is_empty() {
                return Err(cfg_err(format!("slot {} has an empty value pool", s.name)));
            }
            for v in s.ind.iter().chain(&s.ood) {
                if v.split_whitespace().next().is_none() {
                    return Err(cfg_err(format!("slot {} has an empty value", s.name)));
                }
            }
            let ind: HashSet<Vec<&str>> = s.ind.iter().map(|v| v.split_whitespace().collect()).collect();
            if let Some(v) = s.ood.iter().find(|v| ind.contains(&v.split_whitespace().collect::<Vec<_>>())) {
                return Err(cfg_err(format!("slot {}: value {v:?} is in both the IND and OOD pools", s.name)));
            }
        }
        let mut out = Vec::with_capacity(self.templates.len());
        for t in &self.templates {
            let mut pieces = Vec::new();
            for w in t.text.split_whitespace() {
                if is_placeholder(w) {
                    let name = &w[1..w.len() - 1];
                    let idx = self
                        .slots
                        .iter()
                        .position(|s| s.name == name)
                        .ok_or_else(|| cfg_err(format!("template {:?} uses undefined slot {name}", t.text)))?;
                    pieces.push(Piece::Slot(idx));
                } else {
                    pieces.push(Piece::Word(w.to_string()));
                }
            }
            if !pieces.iter().any(|p| matches!(p, Piece::Slot(_))) {
                return Err(cfg_err(format!("template {:?} has no slot", t.text)));
            }
            if !matches!(pieces.get(t.root), Some(Piece::Word(_))) {
                return Err(cfg_err(format!("template {:?}: root {} is not a carrier word", t.text, t.root)));
            }
            out.push(Compiled { pieces, root: t.root });
        }
        Ok(out)
    }
}

fn is_placeholder(w: &str) -> bool {
    w.len() > 2 && w.starts_with('{') && w.ends_with('}')
}

/// Generates all four splits. Deterministic for a given config.
pub fn synth_corpus(config: &SynthConfig) -> Result<Dataset> {
    let templates = config.compile()?;
    let split = |stream: u64, n: usize, ood: bool| -> Result<Vec<Utterance>> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        (0..n).map(|_| generate(config, &templates, &mut rng, ood)).collect()
    };
    let ds = Dataset {
        train: split(0, config.sizes.train, false)?,
        dev: split(1, config.sizes.dev, false)?,
        test_ind: split(2, config.sizes.test_ind, false)?,
        test_ood: split(3, config.sizes.test_ood, true)?,
        provenance: Provenance { sources: vec!["synth".into()], generator_seed: Some(config.seed) },
    };
    ds.validate()?;
    Ok(ds)
}

fn generate(config: &SynthConfig, templates: &[Compiled], rng: &mut ChaCha8Rng, ood: bool) -> Result<Utterance> {
    let t = &templates[rng.random_range(0..templates.len())];
    let n_slots = t.pieces.iter().filter(|p| matches!(p, Piece::Slot(_))).count();
    let mut use_ood = vec![false; n_slots];
    if ood {
        for flag in use_ood.iter_mut() {
            *flag = rng.random_bool(config.ood_slot_prob);
        }
        if !use_ood.iter().any(|&f| f) {
            use_ood[rng.random_range(0..n_slots)] = true;
        }
    }

    // lay out tokens first so heads can refer to final positions
    struct Filled<'a> {
        words: Vec<&'a str>,
        slot: Option<(&'a str, bool)>,
    }
    let mut filled = Vec::with_capacity(t.pieces.len());
    let mut slot_k = 0;
    for piece in &t.pieces {
        match piece {
            Piece::Word(w) => filled.push(Filled { words: vec![w.as_str()], slot: None }),
            Piece::Slot(idx) => {
                let pool = &config.slots[*idx];
                let is_ood = use_ood[slot_k];
                slot_k += 1;
                let values = if is_ood { &pool.ood } else { &pool.ind };
                let v = &values[rng.random_range(0..values.len())];
                filled.push(Filled { words: v.split_whitespace().collect(), slot: Some((&pool.name, is_ood)) });
            }
        }
    }
    let mut start = Vec::with_capacity(filled.len());
    let mut pos = 0;
    for f in &filled {
        start.push(pos);
        pos += f.words.len();
    }
    let root_pos = start[t.root] + 1;

    let mut u = Utterance {
        tokens: Vec::with_capacity(pos),
        gold_labels: Vec::with_capacity(pos),
        dep_heads: Vec::with_capacity(pos),
        dep_rels: Vec::with_capacity(pos),
        underlying_labels: ood.then(|| Vec::with_capacity(pos)),
    };
    for (k, f) in filled.iter().enumerate() {
        match f.slot {
            None => {
                u.tokens.push(f.words[0].to_string());
                u.gold_labels.push("O".into());
                if k == t.root {
                    u.dep_heads.push(0);
                    u.dep_rels.push("root".into());
                } else {
                    u.dep_heads.push(root_pos);
                    u.dep_rels.push("dep".into());
                }
                if let Some(under) = u.underlying_labels.as_mut() {
                    under.push("O".into());
                }
            }
            Some((name, is_ood)) => {
                let last = start[k] + f.words.len();
                for (j, w) in f.words.iter().enumerate() {
                    let prefix = if j == 0 { "B" } else { "I" };
                    u.tokens.push(w.to_string());
                    let tag = if is_ood { UNKNOWN_TAG } else { name };
                    u.gold_labels.push(format!("{prefix}-{tag}"));
                    if j + 1 == f.words.len() {
                        u.dep_heads.push(root_pos);
                        u.dep_rels.push("obj".into());
                    } else {
                        u.dep_heads.push(last);
                        u.dep_rels.push("compound".into());
                    }
                    if let Some(under) = u.underlying_labels.as_mut() {
                        under.push(if is_ood { format!("{prefix}-{name}") } else { "O".into() });
                    }
                }
            }
        }
    }
    u.validate()?;
    Ok(u)
}

/// Unknown-concept statistics of an OOD split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptStats {
    pub utterances: usize,
    pub concepts: usize,
    pub concepts_per_utterance: f64,
    pub words_per_concept: f64,
}

impl ConceptStats {
    pub fn of(utterances: &[Utterance]) -> Result<Self> {
        let mut concepts = 0;
        let mut words = 0;
        for u in utterances {
            for s in iob_spans(&u.gold_labels)? {
                if s.tag == UNKNOWN_TAG {
                    concepts += 1;
                    words += s.len();
                }
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Ok(ConceptStats {
            utterances: utterances.len(),
            concepts,
            concepts_per_utterance: ratio(concepts, utterances.len()),
            words_per_concept: ratio(words, concepts),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_oov_vocab, build_vocabs, serialize_corpus};

    fn playlist_config() -> SynthConfig {
        SynthConfig {
            seed: 3,
            ood_slot_prob: 1.0,
            sizes: SplitSizes { train: 5, dev: 2, test_ind: 2, test_ood: 3 },
            slots: vec![SlotPool {
                name: "playlist".into(),
                ind: vec!["road trip".into()],
                ood: vec!["happy hours".into()],
            }],
            templates: vec![Template { text: "add {playlist} to my playlist".into(), root: 0 }],
        }
    }

    #[test]
    fn template_substitution() {
        let ds = synth_corpus(&playlist_config()).unwrap();
        let u = &ds.test_ood[0];
        assert_eq!(u.tokens, vec!["add", "happy", "hours", "to", "my", "playlist"]);
        assert_eq!(u.gold_labels, vec!["O", "B-unknown", "I-unknown", "O", "O", "O"]);
        assert_eq!(
            u.underlying_labels.as_deref().unwrap(),
            &["O", "B-playlist", "I-playlist", "O", "O", "O"]
        );
        // happy -compound-> hours -obj-> add
        assert_eq!(u.dep_heads, vec![0, 3, 1, 1, 1, 1]);
        assert_eq!(u.dep_rels, vec!["root", "compound", "obj", "dep", "dep", "dep"]);
        assert_eq!(ds.train[0].gold_labels, vec!["O", "B-playlist", "I-playlist", "O", "O", "O"]);
        assert!(ds.train.iter().all(|u| u.underlying_labels.is_none()));
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let cfg = SynthConfig::default_benchmark();
        let a = synth_corpus(&cfg).unwrap();
        let b = synth_corpus(&cfg).unwrap();
        for (x, y) in [(&a.train, &b.train), (&a.test_ood, &b.test_ood)] {
            assert_eq!(serialize_corpus(x), serialize_corpus(y));
        }
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(serialize_corpus(&synth_corpus(&other).unwrap().train), serialize_corpus(&a.train));
    }

    #[test]
    fn rejects_overlapping_or_empty_pools() {
        let mut cfg = playlist_config();
        cfg.slots[0].ood.push("road trip".into());
        assert!(matches!(synth_corpus(&cfg), Err(Error::Config(_))));
        let mut cfg = playlist_config();
        cfg.slots[0].ood.clear();
        assert!(matches!(synth_corpus(&cfg), Err(Error::Config(_))));
        let mut cfg = playlist_config();
        cfg.templates[0].root = 1;
        assert!(synth_corpus(&cfg).is_err());
    }

    #[test]
    fn default_benchmark_shape() {
        let cfg = SynthConfig::default_benchmark();
        assert_eq!(cfg.slots.len(), 8);
        assert!(cfg.ood_tokens_disjoint());
        let ds = synth_corpus(&cfg).unwrap();
        assert_eq!(
            (ds.train.len(), ds.dev.len(), ds.test_ind.len(), ds.test_ood.len()),
            (cfg.sizes.train, cfg.sizes.dev, cfg.sizes.test_ind, cfg.sizes.test_ood)
        );
        let (_, labels) = build_vocabs(&ds.train, 1).unwrap();
        assert_eq!(labels.len(), 1 + 2 * cfg.slots.len());
    }

    #[test]
    fn default_oov_vocab_is_carrier_words() {
        let cfg = SynthConfig::default_benchmark();
        let ds = synth_corpus(&cfg).unwrap();
        // recount: tokens outside any gold span, gathered span by span
        let mut recount = BTreeSet::new();
        for u in &ds.train {
            let spans = iob_spans(&u.gold_labels).unwrap();
            for (i, t) in u.tokens.iter().enumerate() {
                if !spans.iter().any(|s| s.start <= i && i <= s.end) {
                    recount.insert(t.clone());
                }
            }
        }
        let oov = build_oov_vocab(&ds.train);
        assert_eq!(oov, recount);
        assert_eq!(oov, cfg.carrier_words());
    }

    #[test]
    fn ood_values_never_seen_in_train() {
        let ds = synth_corpus(&SynthConfig::default_benchmark()).unwrap();
        let train_tokens: HashSet<&str> = ds.train.iter().flat_map(|u| u.tokens.iter().map(String::as_str)).collect();
        let ind_slot_tokens: HashSet<&str> = ds
            .train
            .iter()
            .flat_map(|u| u.tokens.iter().zip(&u.gold_labels))
            .filter(|(_, l)| l.as_str() != "O")
            .map(|(t, _)| t.as_str())
            .collect();
        let mut unknown_tokens = HashSet::new();
        for u in &ds.test_ood {
            assert!(u.has_unknown());
            for (t, l) in u.tokens.iter().zip(&u.gold_labels) {
                if l.ends_with(UNKNOWN_TAG) {
                    unknown_tokens.insert(t.as_str());
                }
            }
        }
        assert!(ind_slot_tokens.is_disjoint(&unknown_tokens));
        assert!(train_tokens.is_disjoint(&unknown_tokens));
    }

    #[test]
    fn concept_stats_in_realistic_range() {
        let ds = synth_corpus(&SynthConfig::default_benchmark()).unwrap();
        let stats = ConceptStats::of(&ds.test_ood).unwrap();
        assert!(stats.concepts_per_utterance >= 1.0);
        assert!((1.0..=4.0).contains(&stats.words_per_concept), "{stats:?}");
    }
}
