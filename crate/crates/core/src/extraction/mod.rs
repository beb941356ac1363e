//! Turning flagged tokens into unknown-concept phrases.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{repair_iob, Utterance, UNKNOWN_TAG};
use crate::error::{Error, Result};

pub const DEFAULT_NP_RELATIONS: [&str; 4] = ["compound", "amod", "poss", "nmod:poss"];

/// Dependency relations that stay inside a noun phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpRelationSet {
    relations: BTreeSet<String>,
}

impl NpRelationSet {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(relations: I) -> Result<Self> {
        let relations: BTreeSet<String> = relations.into_iter().map(Into::into).collect();
        if relations.is_empty() {
            return Err(Error::Config("noun-phrase relation set is empty".into()));
        }
        Ok(NpRelationSet { relations })
    }

    pub fn contains(&self, rel: &str) -> bool {
        self.relations.contains(rel)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }
}

impl Default for NpRelationSet {
    fn default() -> Self {
        NpRelationSet::new(DEFAULT_NP_RELATIONS).expect("non-empty")
    }
}

/// One flag per token; `true` marks the token unknown.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UnknownMask {
    flags: Vec<bool>,
}

impl UnknownMask {
    pub fn new(flags: Vec<bool>) -> Self {
        UnknownMask { flags }
    }

    pub fn empty(n: usize) -> Self {
        UnknownMask { flags: vec![false; n] }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Elementwise OR.
    pub fn union(&self, other: &UnknownMask) -> Result<UnknownMask> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!("mask lengths {} and {} differ", self.len(), other.len())));
        }
        Ok(UnknownMask { flags: self.flags.iter().zip(&other.flags).map(|(a, b)| *a || *b).collect() })
    }

    pub fn is_subset_of(&self, other: &UnknownMask) -> bool {
        self.len() == other.len() && self.flags.iter().zip(&other.flags).all(|(a, b)| !a || *b)
    }
}

/// Grows each flagged token to its noun phrase: climb head links while the
/// current token's own relation is noun-phrase internal, then flag the
/// reached token and its whole subtree.
pub fn expand_syntax(mask: &UnknownMask, utterance: &Utterance, rels: &NpRelationSet) -> Result<UnknownMask> {
    let n = utterance.len();
    if mask.len() != n {
        return Err(Error::Shape(format!("mask has {} flags for {n} tokens", mask.len())));
    }
    let children = utterance.children();
    let mut out = mask.flags.clone();
    let mut roots = BTreeSet::new();
    for i in (0..n).filter(|&i| mask.flags[i]) {
        let mut cur = i;
        // acyclic by corpus invariants; the bound is a guard
        for _ in 0..n {
            let head = utterance.dep_heads[cur];
            if head == 0 || !rels.contains(&utterance.dep_rels[cur]) {
                break;
            }
            cur = head - 1;
        }
        roots.insert(cur);
    }
    let mut stack: Vec<usize> = roots.into_iter().collect();
    while let Some(t) = stack.pop() {
        out[t] = true;
        stack.extend(children[t].iter().copied());
    }
    Ok(UnknownMask { flags: out })
}

/// Replaces every maximal flagged run by `B-unknown I-unknown…`, keeps the
/// other predictions, and repairs I- tags orphaned by the replacement.
pub fn to_iob_unknown<S: AsRef<str>>(mask: &UnknownMask, predicted: &[S]) -> Result<Vec<String>> {
    if mask.len() != predicted.len() {
        return Err(Error::Shape(format!("mask has {} flags for {} labels", mask.len(), predicted.len())));
    }
    let mut out = Vec::with_capacity(predicted.len());
    for (i, (&flag, label)) in mask.flags.iter().zip(predicted).enumerate() {
        out.push(if !flag {
            label.as_ref().to_string()
        } else if i > 0 && mask.flags[i - 1] {
            format!("I-{UNKNOWN_TAG}")
        } else {
            format!("B-{UNKNOWN_TAG}")
        });
    }
    Ok(repair_iob(&out))
}
