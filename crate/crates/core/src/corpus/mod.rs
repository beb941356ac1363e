//! Annotated utterances, vocabularies and datasets.

mod format;
pub(crate) mod iob;
mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{parse_corpus, read_corpus_file, serialize_corpus, write_corpus_file};
pub use iob::{iob_spans, repair_iob, spans_to_labels, validate_iob, Iob, Span, UNKNOWN_TAG};
pub use synth::{synth_corpus, ConceptStats, SlotPool, SplitSizes, SynthConfig, Template};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// One pre-tokenized utterance with gold labels and a dependency forest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub gold_labels: Vec<String>,
    /// 0 marks a root; otherwise the 1-based index of the head token.
    pub dep_heads: Vec<usize>,
    pub dep_rels: Vec<String>,
    /// The slot type hidden under each gold unknown span (OOD data only).
    pub underlying_labels: Option<Vec<String>>,
}

impl Utterance {
    /// Builds an utterance and checks every invariant.
    pub fn new(
        tokens: Vec<String>,
        gold_labels: Vec<String>,
        dep_heads: Vec<usize>,
        dep_rels: Vec<String>,
        underlying_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let u = Utterance { tokens, gold_labels, dep_heads, dep_rels, underlying_labels };
        u.validate()?;
        Ok(u)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(_, msg)| Error::Data(msg))
    }

    /// Children of every token, as 0-based indices.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (i, &h) in self.dep_heads.iter().enumerate() {
            if h > 0 {
                children[h - 1].push(i);
            }
        }
        children
    }

    pub fn gold_spans(&self) -> Result<Vec<Span>> {
        iob_spans(&self.gold_labels)
    }

    pub fn has_unknown(&self) -> bool {
        self.gold_labels.iter().any(|l| is_unknown_label(l))
    }

    /// Returns the offending token position (when there is one) with a message.
    pub(crate) fn check(&self) -> std::result::Result<(), (Option<usize>, String)> {
        let n = self.tokens.len();
        if n == 0 {
            return Err((None, "utterance has no tokens".into()));
        }
        if self.gold_labels.len() != n || self.dep_heads.len() != n || self.dep_rels.len() != n {
            return Err((None, "per-token columns differ in length".into()));
        }
        for (i, t) in self.tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err((Some(i), format!("token {t:?} is empty or contains whitespace")));
            }
        }
        for (i, r) in self.dep_rels.iter().enumerate() {
            if r.is_empty() || r.chars().any(char::is_whitespace) {
                return Err((Some(i), format!("relation {r:?} is empty or contains whitespace")));
            }
        }
        if let Some((i, msg)) = iob::first_violation(&self.gold_labels) {
            return Err((Some(i), msg));
        }
        for (i, &h) in self.dep_heads.iter().enumerate() {
            if h > n {
                return Err((Some(i), format!("head {h} out of range for {n} tokens")));
            }
            if h == i + 1 {
                return Err((Some(i), format!("token {} is its own head", i + 1)));
            }
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while self.dep_heads[cur] != 0 {
                cur = self.dep_heads[cur] - 1;
                steps += 1;
                if steps > n {
                    return Err((Some(start), format!("cyclic heads through token {}", start + 1)));
                }
            }
        }
        if let Some(under) = &self.underlying_labels {
            if under.len() != n {
                return Err((None, "underlying labels differ in length".into()));
            }
            if let Some((i, msg)) = iob::first_violation(under) {
                return Err((Some(i), format!("underlying labels: {msg}")));
            }
            for (i, (g, u)) in self.gold_labels.iter().zip(under).enumerate() {
                if is_unknown_label(g) != (u != "O") {
                    return Err((
                        Some(i),
                        format!("underlying label {u:?} must be non-O exactly where gold is unknown (gold {g:?})"),
                    ));
                }
                if is_unknown_label(u) {
                    return Err((Some(i), "underlying label cannot itself be unknown".into()));
                }
            }
        }
        Ok(())
    }
}

pub fn is_unknown_label(label: &str) -> bool {
    matches!(Iob::parse(label), Ok(Iob::Begin(UNKNOWN_TAG)) | Ok(Iob::Inside(UNKNOWN_TAG)))
}

/// Token vocabulary with `<pad>` at 0 and `<unk>` at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordVocab {
    pub fn new<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut v = WordVocab { words: Vec::new(), index: HashMap::new() };
        for w in [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()].into_iter().chain(words) {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    /// Index of `word`, or [`UNK_ID`] when it was never seen.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

impl TryFrom<Vec<String>> for WordVocab {
    type Error = String;

    fn try_from(words: Vec<String>) -> std::result::Result<Self, String> {
        if words.first().map(String::as_str) != Some(PAD_TOKEN) || words.get(1).map(String::as_str) != Some(UNK_TOKEN) {
            return Err("word vocabulary must start with the reserved entries".into());
        }
        let v = WordVocab::new(words.into_iter().skip(2));
        Ok(v)
    }
}

impl From<WordVocab> for Vec<String> {
    fn from(v: WordVocab) -> Self {
        v.words
    }
}

/// The K trainable IOB labels. Never contains the unknown tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    /// Orders labels as `O` first, then by tag with `B-` before `I-`.
    pub fn new<I: IntoIterator<Item = String>>(labels: I) -> Result<Self> {
        let mut set: BTreeSet<(String, String)> = BTreeSet::new();
        for l in labels {
            match Iob::parse(&l)? {
                Iob::Outside => {}
                Iob::Begin(UNKNOWN_TAG) | Iob::Inside(UNKNOWN_TAG) => {
                    return Err(Error::Data("the unknown tag cannot be a trained label".into()))
                }
                Iob::Begin(t) | Iob::Inside(t) => {
                    set.insert((t.to_string(), l.clone()));
                }
            }
        }
        let labels: Vec<String> = std::iter::once("O".to_string()).chain(set.into_iter().map(|(_, l)| l)).collect();
        Self::from_ordered(labels)
    }

    /// Keeps the given order; used when restoring a checkpoint.
    pub fn from_ordered(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            Iob::parse(l)?;
            if is_unknown_label(l) {
                return Err(Error::Data("the unknown tag cannot be a trained label".into()));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate label {l}")));
            }
        }
        if !index.contains_key("O") || labels.len() < 2 {
            return Err(Error::Data("label vocabulary needs O and at least one slot label".into()));
        }
        Ok(LabelVocab { labels, index })
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn outside_id(&self) -> usize {
        self.index["O"]
    }

    pub fn encode(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| self.id(l).ok_or_else(|| Error::Data(format!("label {l} not in the label vocabulary"))))
            .collect()
    }
}

impl TryFrom<Vec<String>> for LabelVocab {
    type Error = String;

    fn try_from(labels: Vec<String>) -> std::result::Result<Self, String> {
        LabelVocab::from_ordered(labels).map_err(|e| e.to_string())
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.labels
    }
}

/// Word vocabulary of tokens seen at least `min_count` times and the label
/// set of `train` (always including `O`). Unknown-tagged labels are skipped.
pub fn build_vocabs(train: &[Utterance], min_count: usize) -> Result<(WordVocab, LabelVocab)> {
    if train.is_empty() {
        return Err(Error::Data("cannot build vocabularies from an empty training set".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for u in train {
        for t in &u.tokens {
            let c = counts.entry(t).or_insert(0);
            if *c == 0 {
                order.push(t);
            }
            *c += 1;
        }
    }
    let words = WordVocab::new(order.into_iter().filter(|w| counts[w] >= min_count).map(String::from));
    let labels = LabelVocab::new(
        train
            .iter()
            .flat_map(|u| u.gold_labels.iter())
            .filter(|l| !is_unknown_label(l))
            .cloned(),
    )?;
    Ok((words, labels))
}

/// Tokens that occur at least once with gold label `O` in `train`.
pub fn build_oov_vocab(train: &[Utterance]) -> BTreeSet<String> {
    train
        .iter()
        .flat_map(|u| u.tokens.iter().zip(&u.gold_labels))
        .filter(|(_, l)| l.as_str() == "O")
        .map(|(t, _)| t.clone())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub generator_seed: Option<u64>,
}

/// The four splits every experiment reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test_ind: Vec<Utterance>,
    pub test_ood: Vec<Utterance>,
    pub provenance: Provenance,
}

pub const SPLIT_FILES: [&str; 4] = ["train.tsv", "dev.tsv", "test_ind.tsv", "test_ood.tsv"];

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        for (name, split) in [("train", &self.train), ("dev", &self.dev)] {
            for u in split {
                if u.underlying_labels.is_some() || u.has_unknown() {
                    return Err(Error::Data(format!("{name} split must not contain unknown concepts")));
                }
            }
        }
        for u in &self.test_ood {
            if u.has_unknown() && u.underlying_labels.is_none() {
                return Err(Error::Data("test_ood utterance with unknown spans lacks underlying labels".into()));
            }
        }
        Ok(())
    }

    /// Reads `train.tsv`, `dev.tsv`, `test_ind.tsv` and `test_ood.tsv`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let paths: Vec<PathBuf> = SPLIT_FILES.iter().map(|f| dir.join(f)).collect();
        let mut splits = Vec::with_capacity(4);
        for p in &paths {
            splits.push(read_corpus_file(p)?);
        }
        let test_ood = splits.pop().unwrap_or_default();
        let test_ind = splits.pop().unwrap_or_default();
        let dev = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        let ds = Dataset {
            train,
            dev,
            test_ind,
            test_ood,
            provenance: Provenance {
                sources: paths.iter().map(|p| p.display().to_string()).collect(),
                generator_seed: None,
            },
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (file, split) in SPLIT_FILES.iter().zip([&self.train, &self.dev, &self.test_ind, &self.test_ood]) {
            write_corpus_file(&dir.join(file), split)?;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn utt(tokens: &[&str], labels: &[&str]) -> Utterance {
        let n = tokens.len();
        // flat tree: everything hangs off the first token
        let heads = (0..n).map(|i| if i == 0 { 0 } else { 1 }).collect();
        let rels = (0..n).map(|i| if i == 0 { "root" } else { "dep" }.to_string()).collect();
        Utterance::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            labels.iter().map(|s| s.to_string()).collect(),
            heads,
            rels,
            None,
        )
        .unwrap()
    }

    #[test]
    fn vocab_enumeration() {
        let train = vec![utt(&["play", "jazz"], &["O", "B-genre"])];
        let (words, labels) = build_vocabs(&train, 1).unwrap();
        assert_eq!(words.words(), &["<pad>", "<unk>", "play", "jazz"]);
        assert_eq!(labels.labels(), &["O", "B-genre"]);
        assert_eq!(words.id("jazz"), 3);
        assert_eq!(words.id("blues"), UNK_ID);
    }

    #[test]
    fn min_count_prunes_singletons() {
        let train = vec![utt(&["play", "jazz"], &["O", "B-genre"])];
        let (words, _) = build_vocabs(&train, 2).unwrap();
        assert_eq!(words.words(), &["<pad>", "<unk>"]);
    }

    #[test]
    fn label_vocab_always_has_outside() {
        let train = vec![utt(&["jazz"], &["B-genre"])];
        let (_, labels) = build_vocabs(&train, 1).unwrap();
        assert_eq!(labels.labels(), &["O", "B-genre"]);
        assert!(LabelVocab::new(vec!["B-unknown".to_string()]).is_err());
        assert!(LabelVocab::from_ordered(vec!["O".into()]).is_err());
    }

    #[test]
    fn empty_train_rejected() {
        assert!(build_vocabs(&[], 1).is_err());
    }

    #[test]
    fn oov_vocab_set_definition() {
        let train = vec![utt(&["play", "jazz"], &["O", "B-genre"])];
        assert_eq!(build_oov_vocab(&train), BTreeSet::from(["play".to_string()]));
        let train = vec![utt(&["jazz", "now"], &["O", "O"]), utt(&["jazz"], &["B-genre"])];
        assert!(build_oov_vocab(&train).contains("jazz"));
    }

    #[test]
    fn invariants_enforced() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        // self loop
        assert!(Utterance::new(s(&["a"]), s(&["O"]), vec![1], s(&["root"]), None).is_err());
        // cycle 1 -> 2 -> 1
        assert!(Utterance::new(s(&["a", "b"]), s(&["O", "O"]), vec![2, 1], s(&["x", "y"]), None).is_err());
        // head out of range
        assert!(Utterance::new(s(&["a"]), s(&["O"]), vec![2], s(&["root"]), None).is_err());
        // underlying must be non-O exactly on unknown tokens
        assert!(Utterance::new(
            s(&["a", "b"]),
            s(&["B-unknown", "O"]),
            vec![0, 1],
            s(&["root", "dep"]),
            Some(s(&["B-x", "B-y"]))
        )
        .is_err());
        assert!(Utterance::new(
            s(&["a", "b"]),
            s(&["B-unknown", "O"]),
            vec![0, 1],
            s(&["root", "dep"]),
            Some(s(&["B-x", "O"]))
        )
        .is_ok());
    }

    #[test]
    fn vocab_serde_round_trip() {
        let train = vec![utt(&["play", "jazz"], &["O", "B-genre"])];
        let (words, labels) = build_vocabs(&train, 1).unwrap();
        let w: WordVocab = serde_json::from_str(&serde_json::to_string(&words).unwrap()).unwrap();
        let l: LabelVocab = serde_json::from_str(&serde_json::to_string(&labels).unwrap()).unwrap();
        assert_eq!(w, words);
        assert_eq!(l, labels);
    }
}
