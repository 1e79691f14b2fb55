//! Keyword-coverage markup.
//!
//! The coverage step asks a language model to mark every visually groundable
//! phrase of a prompt with a running index, e.g.
//! `A {1}[red colored] {2}[dog].` or, with a type label,
//! `{3}[gecko, entity]`. This module parses that markup, checks that the
//! model did not rewrite the prompt, and maps each index back to the
//! whitespace-delimited words of the prompt.
//!
//! Grammar:
//!
//! ```text
//! annotated := (plain | marked)*
//! marked    := "{" DIGITS "}" "[" span-text "]"
//! ```
//!
//! `span-text` may contain anything except `]`, and may end in a kind
//! suffix `", " WORD+`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoverageError {
    #[error("unbalanced brackets: marker {{{index}}} at byte {at} has no closing ']'")]
    Unbalanced { index: String, at: usize },
    #[error("non-numeric keyword index {0:?}")]
    NonNumericIndex(String),
    #[error("duplicate keyword index {0}")]
    DuplicateIndex(u32),
    #[error(
        "keyword indices must run 1, 2, 3, ... left to right: expected {expected}, found {found}"
    )]
    OutOfOrder { expected: u32, found: u32 },
    #[error("keyword {0} has an empty span")]
    EmptySpan(u32),
    #[error("annotation rewrote the prompt: expected {expected:?}, got {got:?}")]
    PromptRewritten { expected: String, got: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSpan {
    pub index: u32,
    pub text: String,
    /// Type label, when the model supplied one.
    pub kind: Option<String>,
    /// Byte range of `text` inside the de-annotated prompt.
    pub range: Range<usize>,
}

impl KeywordSpan {
    pub fn kind(&self) -> &str {
        self.kind.as_deref().unwrap_or("other")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageAnnotation {
    pub annotated_text: String,
    pub plain_text: String,
    pub spans: Vec<KeywordSpan>,
}

fn is_kind_suffix(s: &str) -> bool {
    !s.is_empty()
        && s.split(' ')
            .all(|w| !w.is_empty() && w.chars().all(|c| c.is_ascii_alphabetic() || c == '_'))
}

fn split_kind(raw: &str) -> (&str, Option<&str>) {
    match raw.rsplit_once(", ") {
        Some((text, kind)) if !text.is_empty() && is_kind_suffix(kind) => (text, Some(kind)),
        _ => (raw, None),
    }
}

/// Returns `(index_text, bytes consumed up to and including "}[")` if a
/// marker opens at the start of `s`.
fn marker_head(s: &str) -> Option<(&str, usize)> {
    debug_assert!(s.starts_with('{'));
    let close = s.find('}')?;
    let inner = &s[1..close];
    if inner.contains(['{', '\n']) || !s[close + 1..].starts_with('[') {
        return None;
    }
    Some((inner, close + 2))
}

/// Parses markup without comparing it to a source prompt.
pub fn parse_markup(annotated: &str) -> Result<CoverageAnnotation, CoverageError> {
    let mut plain = String::with_capacity(annotated.len());
    let mut spans: Vec<KeywordSpan> = Vec::new();
    let mut rest = annotated;
    let mut consumed = 0;
    while let Some(pos) = rest.find('{') {
        plain.push_str(&rest[..pos]);
        let at = consumed + pos;
        let tail = &rest[pos..];
        let Some((index_text, head_len)) = marker_head(tail) else {
            plain.push('{');
            rest = &tail[1..];
            consumed = at + 1;
            continue;
        };
        if index_text.is_empty() || !index_text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(CoverageError::NonNumericIndex(index_text.to_owned()));
        }
        let index: u32 = index_text
            .parse()
            .map_err(|_| CoverageError::NonNumericIndex(index_text.to_owned()))?;
        let body = &tail[head_len..];
        let close = body.find(']').ok_or_else(|| CoverageError::Unbalanced {
            index: index_text.to_owned(),
            at,
        })?;
        let (text, kind) = split_kind(&body[..close]);
        if text.trim().is_empty() {
            return Err(CoverageError::EmptySpan(index));
        }
        let expected = spans.len() as u32 + 1;
        if index != expected {
            if spans.iter().any(|s| s.index == index) {
                return Err(CoverageError::DuplicateIndex(index));
            }
            return Err(CoverageError::OutOfOrder {
                expected,
                found: index,
            });
        }
        let start = plain.len();
        plain.push_str(text);
        spans.push(KeywordSpan {
            index,
            text: text.to_owned(),
            kind: kind.map(str::to_owned),
            range: start..plain.len(),
        });
        rest = &body[close + 1..];
        consumed = at + head_len + close + 1;
    }
    plain.push_str(rest);
    Ok(CoverageAnnotation {
        annotated_text: annotated.to_owned(),
        plain_text: plain,
        spans,
    })
}

/// Collapses whitespace runs to a single space and trims both ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses coverage markup and checks it against the prompt it was produced from.
pub fn parse_coverage(
    annotated: &str,
    original_prompt: &str,
) -> Result<CoverageAnnotation, CoverageError> {
    let cov = parse_markup(annotated)?;
    let expected = normalize_whitespace(original_prompt);
    let got = normalize_whitespace(&cov.plain_text);
    if expected != got {
        return Err(CoverageError::PromptRewritten { expected, got });
    }
    Ok(cov)
}

/// Removes all markers, keeping span text.
pub fn strip_markup(annotated: &str) -> Result<String, CoverageError> {
    parse_markup(annotated).map(|c| c.plain_text)
}

impl CoverageAnnotation {
    /// Renders the annotation back into markup.
    pub fn serialize(&self) -> String {
        let mut out = String::with_capacity(self.plain_text.len() + 8 * self.spans.len());
        let mut cursor = 0;
        for s in &self.spans {
            out.push_str(&self.plain_text[cursor..s.range.start]);
            let _ = write!(out, "{{{}}}[{}", s.index, s.text);
            if let Some(k) = &s.kind {
                let _ = write!(out, ", {k}");
            }
            out.push(']');
            cursor = s.range.end;
        }
        out.push_str(&self.plain_text[cursor..]);
        out
    }

    pub fn indices(&self) -> Vec<u32> {
        self.spans.iter().map(|s| s.index).collect()
    }

    pub fn span(&self, index: u32) -> Option<&KeywordSpan> {
        self.spans.iter().find(|s| s.index == index)
    }
}

/// A whitespace-delimited word. `core` excludes trailing punctuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub range: Range<usize>,
    pub core: Range<usize>,
}

pub fn words(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text
        .char_indices()
        .chain(std::iter::once((text.len(), ' ')))
    {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                let w = &text[s..i];
                let trimmed = w.trim_end_matches(|c: char| !c.is_alphanumeric());
                let core_end = if trimmed.is_empty() {
                    i
                } else {
                    s + trimmed.len()
                };
                out.push(Word {
                    range: s..i,
                    core: s..core_end,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    out
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn overlap(a: &Range<usize>, b: &Range<usize>) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

/// Maps each keyword index to the 0-based word positions it covers.
///
/// A word touched by several spans belongs to the one overlapping it most,
/// so the result is always a partition of the covered words.
pub fn map_keywords_to_words(cov: &CoverageAnnotation) -> BTreeMap<u32, Vec<usize>> {
    let mut map: BTreeMap<u32, Vec<usize>> =
        cov.spans.iter().map(|s| (s.index, Vec::new())).collect();
    for (pos, word) in words(&cov.plain_text).iter().enumerate() {
        let best = cov
            .spans
            .iter()
            .map(|s| (overlap(&word.core, &s.range), s.index))
            .filter(|(o, _)| *o > 0)
            .fold(None, |best: Option<(usize, u32)>, cand| match best {
                Some(b) if b.0 >= cand.0 => Some(b),
                _ => Some(cand),
            });
        if let Some((_, index)) = best {
            map.get_mut(&index).expect("index present").push(pos);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const C1_ANNOTATED: &str = "{1}[Portrait, style] of {2}[a, count] {3}[gecko, entity] {4}[wearing, activity] {5}[a, count] {6}[train conductor's hat, entity] and {7}[holding, entity] {8}[a, count] {9}[flag, entity] that has {10}[a yin-yang symbol, entity] on it. {11}[Woodcut, material].";
    pub(crate) const C1_PROMPT: &str = "Portrait of a gecko wearing a train conductor's hat and holding a flag that has a yin-yang symbol on it. Woodcut.";

    #[test]
    fn running_example_parses() {
        let cov = parse_coverage("A {1}[red colored] {2}[dog].", "A red colored dog.").unwrap();
        let got: Vec<_> = cov
            .spans
            .iter()
            .map(|s| (s.index, s.text.as_str(), s.kind()))
            .collect();
        assert_eq!(got, vec![(1, "red colored", "other"), (2, "dog", "other")]);
        assert_eq!(&cov.plain_text[cov.spans[0].range.clone()], "red colored");
    }

    #[test]
    fn single_span_covers_everything() {
        let cov = parse_coverage("{1}[cat]", "cat").unwrap();
        assert_eq!(cov.spans.len(), 1);
        assert_eq!(cov.spans[0].range, 0..3);
    }

    #[test]
    fn kinds_are_split_off() {
        let cov = parse_coverage(C1_ANNOTATED, C1_PROMPT).unwrap();
        let kinds: Vec<_> = cov.spans.iter().map(|s| s.kind()).collect();
        assert_eq!(
            kinds,
            [
                "style", "count", "entity", "activity", "count", "entity", "entity", "count",
                "entity", "entity", "material"
            ]
        );
        assert_eq!(cov.spans[5].text, "train conductor's hat");
        assert_eq!(cov.spans[9].text, "a yin-yang symbol");
        assert_eq!(cov.plain_text, C1_PROMPT);
    }

    #[test]
    fn keyword_word_mapping() {
        let cov = parse_coverage("A {1}[red colored] {2}[dog].", "A red colored dog.").unwrap();
        let m = map_keywords_to_words(&cov);
        assert_eq!(m[&1], vec![1, 2]);
        assert_eq!(m[&2], vec![3]);
        let cov = parse_coverage("{1}[cat]", "cat").unwrap();
        assert_eq!(map_keywords_to_words(&cov)[&1], vec![0]);
    }

    #[test]
    fn c1_word_mapping_matches_hand_count() {
        // Portrait(0) of(1) a(2) gecko(3) wearing(4) a(5) train(6) conductor's(7) hat(8)
        // and(9) holding(10) a(11) flag(12) that(13) has(14) a(15) yin-yang(16) symbol(17)
        // on(18) it.(19) Woodcut.(20)
        let cov = parse_coverage(C1_ANNOTATED, C1_PROMPT).unwrap();
        let m = map_keywords_to_words(&cov);
        let expected: BTreeMap<u32, Vec<usize>> = [
            (1, vec![0]),
            (2, vec![2]),
            (3, vec![3]),
            (4, vec![4]),
            (5, vec![5]),
            (6, vec![6, 7, 8]),
            (7, vec![10]),
            (8, vec![11]),
            (9, vec![12]),
            (10, vec![15, 16, 17]),
            (11, vec![20]),
        ]
        .into_iter()
        .collect();
        assert_eq!(m, expected);
    }

    #[test]
    fn whitespace_jitter_is_tolerated_but_rewrites_are_not() {
        assert!(parse_coverage("A  {1}[red colored]\n{2}[dog]. ", "A red colored dog.").is_ok());
        let err = parse_coverage("A {1}[crimson] {2}[dog].", "A red colored dog.").unwrap_err();
        assert!(matches!(err, CoverageError::PromptRewritten { .. }));
    }

    #[test]
    fn malformed_markup() {
        assert!(matches!(
            parse_markup("a {1}[cat"),
            Err(CoverageError::Unbalanced { .. })
        ));
        assert_eq!(
            parse_markup("{x}[cat]"),
            Err(CoverageError::NonNumericIndex("x".into()))
        );
        assert_eq!(
            parse_markup("{1}[cat] {1}[dog]"),
            Err(CoverageError::DuplicateIndex(1))
        );
        assert_eq!(
            parse_markup("{2}[cat] {1}[dog]"),
            Err(CoverageError::OutOfOrder {
                expected: 1,
                found: 2
            })
        );
        assert_eq!(parse_markup("{1}[ ]"), Err(CoverageError::EmptySpan(1)));
    }

    #[test]
    fn stray_braces_are_plain_text() {
        let cov = parse_markup("a {curly} {1}[brace]").unwrap();
        assert_eq!(cov.plain_text, "a {curly} brace");
        assert_eq!(cov.spans.len(), 1);
    }

    #[test]
    fn words_detach_trailing_punctuation() {
        let w = words("say \"hi!\" now.");
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].core, 10..13);
        assert_eq!(word_count("  a  b "), 2);
    }

    fn arb_markup() -> impl Strategy<Value = (String, String)> {
        let word = "[a-zA-Z0-9'\\-]{1,8}[.,!]?";
        let sep = prop_oneof![Just(" "), Just(" "), Just("  "), Just("\t")];
        prop::collection::vec((word, sep, 0u8..4, prop::option::of("[a-z]{3,8}")), 1..14).prop_map(
            |items| {
                let mut annotated = String::new();
                let mut plain = String::new();
                let mut index = 0;
                for (i, (w, sep, mark, kind)) in items.iter().enumerate() {
                    if i > 0 {
                        annotated.push_str(sep);
                        plain.push_str(sep);
                    }
                    if *mark == 0 {
                        index += 1;
                        annotated.push_str(&format!("{{{index}}}[{w}"));
                        if let Some(k) = kind {
                            annotated.push_str(&format!(", {k}"));
                        }
                        annotated.push(']');
                    } else {
                        annotated.push_str(w);
                    }
                    plain.push_str(w);
                }
                (annotated, plain)
            },
        )
    }

    proptest! {
        #[test]
        fn parse_then_strip_reproduces_prompt((annotated, plain) in arb_markup()) {
            let cov = parse_coverage(&annotated, &plain).unwrap();
            prop_assert_eq!(&cov.plain_text, &plain);
            prop_assert_eq!(cov.serialize(), annotated.clone());
            prop_assert_eq!(parse_markup(&cov.serialize()).unwrap(), cov.clone());
            let map = map_keywords_to_words(&cov);
            let mut seen = std::collections::HashSet::new();
            for positions in map.values() {
                prop_assert!(!positions.is_empty());
                prop_assert!(positions.windows(2).all(|w| w[1] == w[0] + 1));
                for p in positions {
                    prop_assert!(seen.insert(*p), "word {} claimed twice", p);
                }
            }
        }
    }
}
