//! Strict IOB segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag used for spans the decision engine could not label.
pub const UNKNOWN_TAG: &str = "unknown";

/// A labelled phrase, `start..=end` in token positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub tag: String,
}

impl Span {
    pub fn new(start: usize, end: usize, tag: impl Into<String>) -> Self {
        Span { start, end, tag: tag.into() }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn same_extent(&self, other: &Span) -> bool {
        self.start == other.start && self.end == other.end
    }
}

/// One IOB label, borrowed from its string form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Iob<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Iob<'a> {
    pub fn parse(label: &'a str) -> Result<Self> {
        if label == "O" {
            return Ok(Iob::Outside);
        }
        match label.split_once('-') {
            Some(("B", tag)) if !tag.is_empty() => Ok(Iob::Begin(tag)),
            Some(("I", tag)) if !tag.is_empty() => Ok(Iob::Inside(tag)),
            _ => Err(Error::Iob(format!("malformed label {label:?}"))),
        }
    }

    pub fn tag(&self) -> Option<&'a str> {
        match *self {
            Iob::Outside => None,
            Iob::Begin(t) | Iob::Inside(t) => Some(t),
        }
    }
}

/// Returns the position of the first strict-IOB violation, if any.
pub(crate) fn first_violation<S: AsRef<str>>(labels: &[S]) -> Option<(usize, String)> {
    let mut open: Option<&str> = None;
    for (i, label) in labels.iter().enumerate() {
        match Iob::parse(label.as_ref()) {
            Err(e) => return Some((i, e.to_string())),
            Ok(Iob::Outside) => open = None,
            Ok(Iob::Begin(t)) => open = Some(t),
            Ok(Iob::Inside(t)) => match open {
                Some(o) if o == t => {}
                _ => return Some((i, format!("I-{t} without opening B-{t} at token {i}"))),
            },
        }
    }
    None
}

pub fn validate_iob<S: AsRef<str>>(labels: &[S]) -> Result<()> {
    match first_violation(labels) {
        Some((_, msg)) => Err(Error::Iob(msg)),
        None => Ok(()),
    }
}

/// Maximal spans of a strict-IOB sequence, ordered by start.
pub fn iob_spans<S: AsRef<str>>(labels: &[S]) -> Result<Vec<Span>> {
    validate_iob(labels)?;
    let mut spans: Vec<Span> = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        match Iob::parse(label.as_ref())? {
            Iob::Outside => {}
            Iob::Begin(t) => spans.push(Span::new(i, i, t)),
            Iob::Inside(_) => {
                // validated: the previous span is open and carries the same tag
                if let Some(last) = spans.last_mut() {
                    last.end = i;
                }
            }
        }
    }
    Ok(spans)
}

/// Inverse of [`iob_spans`] for `n` tokens.
pub fn spans_to_labels(spans: &[Span], n: usize) -> Vec<String> {
    let mut labels = vec!["O".to_string(); n];
    for s in spans {
        labels[s.start] = format!("B-{}", s.tag);
        for l in labels.iter_mut().take(s.end + 1).skip(s.start + 1) {
            *l = format!("I-{}", s.tag);
        }
    }
    labels
}

/// Rewrites every orphaned `I-x` (not preceded by `B-x`/`I-x`) as `B-x`,
/// which is how conlleval reads such sequences. Malformed labels become `O`.
pub fn repair_iob<S: AsRef<str>>(labels: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(labels.len());
    let mut open: Option<String> = None;
    for label in labels {
        let fixed = match Iob::parse(label.as_ref()) {
            Ok(Iob::Inside(t)) if open.as_deref() == Some(t) => label.as_ref().to_string(),
            Ok(Iob::Inside(t)) | Ok(Iob::Begin(t)) => {
                open = Some(t.to_string());
                format!("B-{t}")
            }
            Ok(Iob::Outside) | Err(_) => {
                open = None;
                "O".to_string()
            }
        };
        out.push(fixed);
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spans(labels: &[&str]) -> Vec<Span> {
        iob_spans(labels).unwrap()
    }

    #[test]
    fn basic_spans() {
        assert_eq!(spans(&["O", "B-time", "I-time"]), vec![Span::new(1, 2, "time")]);
        assert_eq!(spans(&["B-a", "B-a"]), vec![Span::new(0, 0, "a"), Span::new(1, 1, "a")]);
        assert!(spans(&["O", "O"]).is_empty());
    }

    #[test]
    fn orphan_inside_rejected() {
        let err = iob_spans(&["O", "I-time"]).unwrap_err();
        assert!(err.to_string().contains("I-time without opening B-"), "{err}");
        assert!(iob_spans(&["B-a", "I-b"]).is_err());
        assert!(iob_spans(&["X-a"]).is_err());
        assert!(iob_spans(&["B-"]).is_err());
    }

    #[test]
    fn repair_orphans() {
        assert_eq!(repair_iob(&["I-a", "I-a", "O", "I-b"]), vec!["B-a", "I-a", "O", "B-b"]);
        assert_eq!(repair_iob(&["B-a", "I-b"]), vec!["B-a", "B-b"]);
        assert_eq!(repair_iob(&["B-a", "I-a"]), vec!["B-a", "I-a"]);
    }

    pub(crate) fn strict_iob() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec((0u8..3, 0u8..3), 1..15).prop_map(|steps| {
            let tags = ["a", "b", "c"];
            let mut out: Vec<String> = Vec::new();
            let mut open: Option<&str> = None;
            for (kind, tag) in steps {
                let tag = tags[tag as usize];
                match (kind, open) {
                    (0, _) => {
                        out.push("O".into());
                        open = None;
                    }
                    (1, Some(o)) => out.push(format!("I-{o}")),
                    _ => {
                        out.push(format!("B-{tag}"));
                        open = Some(tag);
                    }
                }
            }
            out
        })
    }

    // Brute force: a triple (s, e, t) is a span iff labels[s] = B-t,
    // labels[s+1..=e] = I-t and labels[e+1] is not I-t.
    fn brute_force_spans(labels: &[String]) -> Vec<Span> {
        let n = labels.len();
        let mut tags: Vec<String> = labels.iter().filter_map(|l| l.get(2..).map(String::from)).collect();
        tags.sort();
        tags.dedup();
        let mut out = Vec::new();
        for s in 0..n {
            for e in s..n {
                for t in &tags {
                    let begins = labels[s] == format!("B-{t}");
                    let inside = (s + 1..=e).all(|k| labels[k] == format!("I-{t}"));
                    let closed = e + 1 == n || labels[e + 1] != format!("I-{t}");
                    if begins && inside && closed {
                        out.push(Span::new(s, e, t.clone()));
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn spans_match_brute_force(labels in strict_iob()) {
            prop_assert_eq!(iob_spans(&labels).unwrap(), brute_force_spans(&labels));
        }

        #[test]
        fn spans_round_trip(labels in strict_iob()) {
            let s = iob_spans(&labels).unwrap();
            prop_assert_eq!(spans_to_labels(&s, labels.len()), labels);
        }

        #[test]
        fn repair_is_identity_on_strict(labels in strict_iob()) {
            prop_assert_eq!(repair_iob(&labels), labels);
        }

        #[test]
        fn repair_yields_strict(raw in prop::collection::vec(prop::sample::select(vec!["O", "B-a", "I-a", "B-b", "I-b"]), 1..12)) {
            prop_assert!(validate_iob(&repair_iob(&raw)).is_ok());
        }
    }
}
