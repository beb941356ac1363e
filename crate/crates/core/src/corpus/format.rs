//! Tab-separated column format, one token per line:
//!
//! ```text
//! # comment
//! 1   play    2   obj     O
//! 2   jazz    0   root    B-genre
//! ```
//!
//! Columns are index, token, head (0 = root), relation, gold label and, in
//! OOD files, the underlying label. Blank lines separate utterances.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Utterance;
use crate::error::{Error, Result};

struct Block {
    first_line: usize,
    lines: Vec<usize>,
    utt: Utterance,
    has_underlying: Option<bool>,
}

impl Block {
    fn new(first_line: usize) -> Self {
        Block {
            first_line,
            lines: Vec::new(),
            utt: Utterance {
                tokens: Vec::new(),
                gold_labels: Vec::new(),
                dep_heads: Vec::new(),
                dep_rels: Vec::new(),
                underlying_labels: None,
            },
            has_underlying: None,
        }
    }

    fn finish(self) -> Result<Utterance> {
        match self.utt.check() {
            Ok(()) => Ok(self.utt),
            Err((Some(i), msg)) => Err(Error::parse(self.lines[i], msg)),
            Err((None, msg)) => Err(Error::parse(self.first_line, msg)),
        }
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    let mut block: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(b) = block.take() {
                out.push(b.finish()?);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 && cols.len() != 6 {
            return Err(Error::parse(line_no, format!("expected 5 or 6 tab-separated columns, found {}", cols.len())));
        }
        let b = block.get_or_insert_with(|| Block::new(line_no));
        let position = b.utt.tokens.len() + 1;
        let index: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("token index {:?} is not an integer", cols[0])))?;
        if index != position {
            return Err(Error::parse(line_no, format!("token index {index} out of sequence (expected {position})")));
        }
        let head: usize = cols[2]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("head {:?} is not a non-negative integer", cols[2])))?;
        let underlying = cols.len() == 6;
        match b.has_underlying {
            None => b.has_underlying = Some(underlying),
            Some(prev) if prev != underlying => {
                return Err(Error::parse(line_no, "column count changes within an utterance"));
            }
            _ => {}
        }
        b.lines.push(line_no);
        b.utt.tokens.push(cols[1].to_string());
        b.utt.dep_heads.push(head);
        b.utt.dep_rels.push(cols[3].to_string());
        b.utt.gold_labels.push(cols[4].to_string());
        if underlying {
            b.utt.underlying_labels.get_or_insert_with(Vec::new).push(cols[5].to_string());
        }
    }
    if let Some(b) = block.take() {
        out.push(b.finish()?);
    }
    Ok(out)
}

pub fn serialize_corpus(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        for i in 0..u.len() {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                i + 1,
                u.tokens[i],
                u.dep_heads[i],
                u.dep_rels[i],
                u.gold_labels[i]
            );
            if let Some(under) = &u.underlying_labels {
                let _ = write!(out, "\t{}", under[i]);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

pub fn write_corpus_file(path: &Path, utterances: &[Utterance]) -> Result<()> {
    fs::write(path, serialize_corpus(utterances))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_field_mapping() {
        let u = parse_corpus("1\tplay\t2\tobj\tO\n2\tjazz\t0\troot\tB-genre\n").unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(u[0].tokens, vec!["play", "jazz"]);
        assert_eq!(u[0].dep_heads, vec![2, 0]);
        assert_eq!(u[0].dep_rels, vec!["obj", "root"]);
        assert_eq!(u[0].gold_labels, vec!["O", "B-genre"]);
        assert!(u[0].underlying_labels.is_none());
    }

    #[test]
    fn blocks_comments_and_underlying() {
        let text = "# header\n1\ta\t0\troot\tO\n\n\n1\tb\t0\troot\tB-unknown\tB-x\n2\tc\t1\tcompound\tI-unknown\tI-x\n";
        let u = parse_corpus(text).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u[1].underlying_labels.as_deref().unwrap(), &["B-x", "I-x"]);
    }

    fn err_line(text: &str) -> (usize, String) {
        match parse_corpus(text).unwrap_err() {
            Error::Parse { line, msg } => (line, msg),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let (line, msg) = err_line("1\tplay\t0\troot\tO\n2\tnow\t1\tdep\tI-time\n");
        assert_eq!(line, 2);
        assert!(msg.contains("I-time without opening B-"), "{msg}");

        let (line, _) = err_line("1\tplay\t0\troot\n");
        assert_eq!(line, 1);

        let (line, msg) = err_line("# c\n1\tplay\t0\troot\tO\n2\tnow\t7\tdep\tO\n");
        assert_eq!(line, 3);
        assert!(msg.contains("out of range"));

        let (line, msg) = err_line("1\ta\t2\tx\tO\n2\tb\t1\ty\tO\n");
        assert_eq!(line, 1);
        assert!(msg.contains("cyclic"));

        let (line, _) = err_line("1\ta\t0\tx\tO\n3\tb\t1\ty\tO\n");
        assert_eq!(line, 2);
    }

    fn utterance_strategy() -> impl Strategy<Value = Utterance> {
        (1usize..9)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec("[a-z']{1,6}", n),
                    prop::collection::vec((0u8..3, 0u8..2), n),
                    Just(n).prop_perturb(|n, mut rng| {
                        // random forest: nodes in a random order may only attach to earlier ones
                        let mut order: Vec<usize> = (0..n).collect();
                        for i in (1..n).rev() {
                            order.swap(i, rng.random_range(0..=i));
                        }
                        let mut heads = vec![0; n];
                        for k in 1..n {
                            let pick = rng.random_range(0..=k);
                            heads[order[k]] = if pick == k { 0 } else { order[pick] + 1 };
                        }
                        heads
                    }),
                    prop::collection::vec(prop::sample::select(vec!["root", "obj", "compound", "amod", "dep"]), n),
                    any::<bool>(),
                )
            })
            .prop_map(|(tokens, steps, heads, rels, ood)| {
                let mut labels: Vec<String> = Vec::new();
                let mut open: Option<&str> = None;
                for (kind, tag) in steps {
                    let tag = if ood { "unknown" } else { ["a", "b"][tag as usize] };
                    match (kind, open) {
                        (0, _) => {
                            labels.push("O".into());
                            open = None;
                        }
                        (1, Some(t)) => labels.push(format!("I-{t}")),
                        _ => {
                            labels.push(format!("B-{tag}"));
                            open = Some(tag);
                        }
                    }
                }
                let underlying = ood.then(|| labels.iter().map(|l| l.replace("unknown", "slot")).collect());
                Utterance {
                    tokens,
                    gold_labels: labels,
                    dep_heads: heads,
                    dep_rels: rels.into_iter().map(String::from).collect(),
                    underlying_labels: underlying,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip(utts in prop::collection::vec(utterance_strategy(), 1..4)) {
            for u in &utts {
                prop_assert!(u.validate().is_ok());
            }
            let parsed = parse_corpus(&serialize_corpus(&utts)).unwrap();
            prop_assert_eq!(parsed, utts);
        }
    }
}
