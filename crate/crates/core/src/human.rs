//! Human annotation templates: payload schemas and score aggregation.
//!
//! Every absolute template maps a set of rater judgements to a score in
//! `[0, 1]`. Unsure atoms are dropped before scoring, so an item where every
//! judgement was unsure has no score (`None`) and must be skipped downstream.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::coverage::word_count;
use crate::records::{RatingRecord, TemplateKind, PAIR_SEPARATOR};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("payload.{field}: {message}")]
pub struct PayloadError {
    pub field: String,
    pub message: String,
}

impl PayloadError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        PayloadError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HumanError {
    #[error("no ratings to aggregate")]
    Empty,
    #[error("raters disagree on item length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LikertRating {
    Score(u8),
    Unsure,
}

impl LikertRating {
    /// Maps 1..=5 onto `[0, 1]`; unsure has no value.
    pub fn mapped(self) -> Option<f64> {
        match self {
            LikertRating::Score(v) => Some((f64::from(v) - 1.0) / 4.0),
            LikertRating::Unsure => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordLabel {
    Aligned,
    Unsure,
    NotAligned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordLevelRating {
    pub labels: Vec<WordLabel>,
}

impl WordLevelRating {
    /// Fraction of aligned words among the words the rater was sure about.
    pub fn score(&self) -> Option<f64> {
        let aligned = self
            .labels
            .iter()
            .filter(|l| **l == WordLabel::Aligned)
            .count();
        let not = self
            .labels
            .iter()
            .filter(|l| **l == WordLabel::NotAligned)
            .count();
        fraction(aligned, aligned + not)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsgAnswer {
    Yes,
    No,
    Invalid,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DsgAnswerSet {
    pub question_ids: Vec<String>,
    pub answers: Vec<DsgAnswer>,
}

impl DsgAnswerSet {
    /// Fraction of yes among answers that are neither invalid nor unsure.
    pub fn score(&self) -> Option<f64> {
        let yes = self
            .answers
            .iter()
            .filter(|a| **a == DsgAnswer::Yes)
            .count();
        let no = self.answers.iter().filter(|a| **a == DsgAnswer::No).count();
        fraction(yes, yes + no)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SxsVote {
    ImageA,
    ImageB,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SxsPayload {
    pub image_a: String,
    pub image_b: String,
    pub choice: SxsVote,
}

/// A typed annotation payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Likert(LikertRating),
    WordLevel(WordLevelRating),
    DsgH(DsgAnswerSet),
    Sxs(SxsPayload),
}

fn field<'a>(
    obj: &'a serde_json::Map<String, Value>,
    name: &str,
) -> Result<&'a Value, PayloadError> {
    obj.get(name)
        .ok_or_else(|| PayloadError::new(name, "missing"))
}

fn enum_list<T: for<'de> Deserialize<'de>>(v: &Value, name: &str) -> Result<Vec<T>, PayloadError> {
    let arr = v
        .as_array()
        .ok_or_else(|| PayloadError::new(name, "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            T::deserialize(x).map_err(|_| {
                PayloadError::new(format!("{name}[{i}]"), format!("unknown value {x}"))
            })
        })
        .collect()
}

fn string_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<String, PayloadError> {
    match field(obj, name)? {
        Value::String(s) if !s.is_empty() => Ok(s.clone()),
        _ => Err(PayloadError::new(name, "expected a non-empty string")),
    }
}

impl Payload {
    pub fn kind(&self) -> TemplateKind {
        match self {
            Payload::Likert(_) => TemplateKind::Likert,
            Payload::WordLevel(_) => TemplateKind::WordLevel,
            Payload::DsgH(_) => TemplateKind::DsgH,
            Payload::Sxs(_) => TemplateKind::Sxs,
        }
    }

    /// Parses and schema-checks a payload for the given template.
    pub fn from_value(kind: TemplateKind, v: &Value) -> Result<Payload, PayloadError> {
        let obj = v
            .as_object()
            .ok_or_else(|| PayloadError::new("", "expected an object"))?;
        match kind {
            TemplateKind::Likert => {
                let value = field(obj, "value")?;
                let rating = match value {
                    Value::String(s) if s == "unsure" => LikertRating::Unsure,
                    Value::Number(n) => match n.as_u64() {
                        Some(r @ 1..=5) => LikertRating::Score(r as u8),
                        _ => {
                            return Err(PayloadError::new(
                                "value",
                                format!("rating out of range: {n}"),
                            ))
                        }
                    },
                    other => {
                        return Err(PayloadError::new(
                            "value",
                            format!("expected 1-5 or \"unsure\", got {other}"),
                        ))
                    }
                };
                Ok(Payload::Likert(rating))
            }
            TemplateKind::WordLevel => {
                let labels = enum_list(field(obj, "labels")?, "labels")?;
                if labels.is_empty() {
                    return Err(PayloadError::new("labels", "empty"));
                }
                Ok(Payload::WordLevel(WordLevelRating { labels }))
            }
            TemplateKind::DsgH => {
                let ids = field(obj, "question_ids")?
                    .as_array()
                    .ok_or_else(|| PayloadError::new("question_ids", "expected an array"))?
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        x.as_str().map(str::to_owned).ok_or_else(|| {
                            PayloadError::new(format!("question_ids[{i}]"), "expected a string")
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let answers = enum_list(field(obj, "answers")?, "answers")?;
                if ids.len() != answers.len() {
                    return Err(PayloadError::new(
                        "answers",
                        format!("{} answers for {} questions", answers.len(), ids.len()),
                    ));
                }
                Ok(Payload::DsgH(DsgAnswerSet {
                    question_ids: ids,
                    answers,
                }))
            }
            TemplateKind::Sxs => {
                let image_a = string_field(obj, "image_a")?;
                let image_b = string_field(obj, "image_b")?;
                let choice = SxsVote::deserialize(field(obj, "choice")?).map_err(|_| {
                    PayloadError::new("choice", "expected image_a, image_b or unsure")
                })?;
                Ok(Payload::Sxs(SxsPayload {
                    image_a,
                    image_b,
                    choice,
                }))
            }
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Payload::Likert(LikertRating::Score(v)) => json!({ "value": v }),
            Payload::Likert(LikertRating::Unsure) => json!({ "value": "unsure" }),
            Payload::WordLevel(w) => json!({ "labels": w.labels }),
            Payload::DsgH(d) => json!({ "question_ids": d.question_ids, "answers": d.answers }),
            Payload::Sxs(s) => {
                json!({ "image_a": s.image_a, "image_b": s.image_b, "choice": s.choice })
            }
        }
    }

    /// Checks the parts of the payload that depend on the prompt text.
    pub fn check_against_prompt(&self, prompt_text: &str) -> Result<(), PayloadError> {
        if let Payload::WordLevel(w) = self {
            let words = word_count(prompt_text);
            if w.labels.len() != words {
                return Err(PayloadError::new(
                    "labels",
                    format!(
                        "{} labels but the prompt has {} words",
                        w.labels.len(),
                        words
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Checks a DSG(H) payload against the question ids the task carried.
    pub fn check_questions(&self, question_ids: &[String]) -> Result<(), PayloadError> {
        if let Payload::DsgH(d) = self {
            if d.question_ids != question_ids {
                return Err(PayloadError::new(
                    "question_ids",
                    format!("expected {:?}, got {:?}", question_ids, d.question_ids),
                ));
            }
        }
        Ok(())
    }
}

fn fraction(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn likert_score(ratings: &[LikertRating]) -> Result<Option<f64>, HumanError> {
    if ratings.is_empty() {
        return Err(HumanError::Empty);
    }
    Ok(mean_present(ratings.iter().map(|r| r.mapped())))
}

pub fn wl_score(per_rater: &[WordLevelRating]) -> Result<Option<f64>, HumanError> {
    let first = per_rater.first().ok_or(HumanError::Empty)?;
    for r in per_rater {
        if r.labels.len() != first.labels.len() {
            return Err(HumanError::LengthMismatch(
                first.labels.len(),
                r.labels.len(),
            ));
        }
    }
    Ok(mean_present(per_rater.iter().map(WordLevelRating::score)))
}

pub fn dsgh_score(per_rater: &[DsgAnswerSet]) -> Result<Option<f64>, HumanError> {
    let first = per_rater.first().ok_or(HumanError::Empty)?;
    for r in per_rater {
        if r.answers.len() != first.answers.len() {
            return Err(HumanError::LengthMismatch(
                first.answers.len(),
                r.answers.len(),
            ));
        }
    }
    Ok(mean_present(per_rater.iter().map(DsgAnswerSet::score)))
}

/// Strict-majority vote; anything short of a strict majority is unsure.
pub fn sxs_aggregate(votes: &[SxsVote]) -> Result<SxsVote, HumanError> {
    if votes.is_empty() {
        return Err(HumanError::Empty);
    }
    for choice in [SxsVote::ImageA, SxsVote::ImageB] {
        let n = votes.iter().filter(|v| **v == choice).count();
        if 2 * n > votes.len() {
            return Ok(choice);
        }
    }
    Ok(SxsVote::Unsure)
}

/// Aggregated human score for one (prompt, image) under one absolute template.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemScore {
    pub prompt_id: String,
    pub image_id: String,
    pub model_id: String,
    pub template: TemplateKind,
    pub raters: usize,
    pub score: Option<f64>,
}

/// Majority outcome for one side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SxsOutcome {
    pub prompt_id: String,
    pub image_a: String,
    pub image_b: String,
    pub model_a: String,
    pub model_b: String,
    pub votes: usize,
    pub outcome: SxsVote,
}

/// Groups records by (prompt, image, template) and aggregates each group.
/// Records whose payload does not parse are skipped.
pub fn aggregate_items(records: &[RatingRecord]) -> Vec<ItemScore> {
    let mut groups: BTreeMap<(String, String, TemplateKind), (String, Vec<Payload>)> =
        BTreeMap::new();
    for r in records.iter().filter(|r| r.template != TemplateKind::Sxs) {
        if let Ok(p) = r.payload() {
            groups
                .entry((r.prompt_id.clone(), r.image_id.clone(), r.template))
                .or_insert_with(|| (r.model_id.clone(), Vec::new()))
                .1
                .push(p);
        }
    }
    groups
        .into_iter()
        .filter_map(|((prompt_id, image_id, template), (model_id, payloads))| {
            let raters = payloads.len();
            let score = match template {
                TemplateKind::Likert => {
                    let v: Vec<_> = payloads
                        .into_iter()
                        .filter_map(|p| match p {
                            Payload::Likert(l) => Some(l),
                            _ => None,
                        })
                        .collect();
                    likert_score(&v).ok()?
                }
                TemplateKind::WordLevel => {
                    let v: Vec<_> = payloads
                        .into_iter()
                        .filter_map(|p| match p {
                            Payload::WordLevel(w) => Some(w),
                            _ => None,
                        })
                        .collect();
                    wl_score(&v).ok()?
                }
                TemplateKind::DsgH => {
                    let v: Vec<_> = payloads
                        .into_iter()
                        .filter_map(|p| match p {
                            Payload::DsgH(d) => Some(d),
                            _ => None,
                        })
                        .collect();
                    dsgh_score(&v).ok()?
                }
                TemplateKind::Sxs => unreachable!(),
            };
            Some(ItemScore {
                prompt_id,
                image_id,
                model_id,
                template,
                raters,
                score,
            })
        })
        .collect()
}

/// (prompt, image_a, image_b) -> (model_a, model_b, votes)
type SxsGroups = BTreeMap<(String, String, String), (String, String, Vec<SxsVote>)>;

pub fn aggregate_sxs(records: &[RatingRecord]) -> Vec<SxsOutcome> {
    let mut groups = SxsGroups::new();
    for r in records.iter().filter(|r| r.template == TemplateKind::Sxs) {
        if let Ok(Payload::Sxs(s)) = r.payload() {
            let (ma, mb) = r
                .model_id
                .split_once(PAIR_SEPARATOR)
                .map(|(a, b)| (a.to_owned(), b.to_owned()))
                .unwrap_or_else(|| (r.model_id.clone(), String::new()));
            groups
                .entry((r.prompt_id.clone(), s.image_a.clone(), s.image_b.clone()))
                .or_insert_with(|| (ma, mb, Vec::new()))
                .2
                .push(s.choice);
        }
    }
    groups
        .into_iter()
        .map(
            |((prompt_id, image_a, image_b), (model_a, model_b, votes))| SxsOutcome {
                prompt_id,
                image_a,
                image_b,
                model_a,
                model_b,
                votes: votes.len(),
                outcome: sxs_aggregate(&votes).expect("group is non-empty"),
            },
        )
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnsureRow {
    pub model_id: String,
    pub template: TemplateKind,
    /// Atomic judgements: words (WL), questions (DSG(H)), whole ratings otherwise.
    pub atoms: usize,
    pub unsure: usize,
    /// DSG(H) invalid answers, counted separately from unsure.
    pub invalid: usize,
}

impl UnsureRow {
    pub fn percent_unsure(&self) -> f64 {
        if self.atoms == 0 {
            0.0
        } else {
            100.0 * self.unsure as f64 / self.atoms as f64
        }
    }
}

impl fmt::Display for UnsureRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.2}%\t({} of {}, {} invalid)",
            self.model_id,
            self.template,
            self.percent_unsure(),
            self.unsure,
            self.atoms,
            self.invalid
        )
    }
}

/// Percentage of unsure atomic judgements per (model, template).
pub fn unsure_report(records: &[RatingRecord]) -> Vec<UnsureRow> {
    let mut rows: BTreeMap<(String, TemplateKind), UnsureRow> = BTreeMap::new();
    for r in records {
        let Ok(p) = r.payload() else { continue };
        let row = rows
            .entry((r.model_id.clone(), r.template))
            .or_insert_with(|| UnsureRow {
                model_id: r.model_id.clone(),
                template: r.template,
                atoms: 0,
                unsure: 0,
                invalid: 0,
            });
        match p {
            Payload::Likert(l) => {
                row.atoms += 1;
                row.unsure += usize::from(l == LikertRating::Unsure);
            }
            Payload::WordLevel(w) => {
                row.atoms += w.labels.len();
                row.unsure += w.labels.iter().filter(|l| **l == WordLabel::Unsure).count();
            }
            Payload::DsgH(d) => {
                row.atoms += d.answers.len();
                row.unsure += d
                    .answers
                    .iter()
                    .filter(|a| **a == DsgAnswer::Unsure)
                    .count();
                row.invalid += d
                    .answers
                    .iter()
                    .filter(|a| **a == DsgAnswer::Invalid)
                    .count();
            }
            Payload::Sxs(s) => {
                row.atoms += 1;
                row.unsure += usize::from(s.choice == SxsVote::Unsure);
            }
        }
    }
    rows.into_values().collect()
}
