//! Shared domain records and their line-delimited file formats.
//!
//! Three files are exchanged between the tools in this workspace, all JSON
//! Lines with fixed field names:
//!
//! * prompt sets: `id`, `text`, `source`, `skills`, `sub_skill`
//! * annotations: `prompt_id`, `image_id`, `model_id`, `rater_id`, `template`, `payload`
//! * metric results: `prompt_id`, `image_id`, `metric`, `score`, `details`
//!
//! Fields this version does not know about are kept in an `extra` map and
//! written back untouched.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::human::{self, Payload};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate prompt id {0:?}")]
    DuplicateId(String),
    #[error("{0}: file contains no records")]
    Empty(String),
    #[error("invalid record: {0}")]
    Invalid(String),
}

impl RecordError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        RecordError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Closed set of skill categories a prompt can be tagged with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillCategory {
    Entity,
    Attribute,
    Relation,
    Action,
    Spatial,
    Scale,
    Count,
    Color,
    Shape,
    TextureMaterial,
    Style,
    TextRendering,
    NamedEntity,
    LangComplexity,
    LangCompositional,
    Other,
}

impl SkillCategory {
    pub const ALL: [SkillCategory; 16] = [
        SkillCategory::Entity,
        SkillCategory::Attribute,
        SkillCategory::Relation,
        SkillCategory::Action,
        SkillCategory::Spatial,
        SkillCategory::Scale,
        SkillCategory::Count,
        SkillCategory::Color,
        SkillCategory::Shape,
        SkillCategory::TextureMaterial,
        SkillCategory::Style,
        SkillCategory::TextRendering,
        SkillCategory::NamedEntity,
        SkillCategory::LangComplexity,
        SkillCategory::LangCompositional,
        SkillCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillCategory::Entity => "entity",
            SkillCategory::Attribute => "attribute",
            SkillCategory::Relation => "relation",
            SkillCategory::Action => "action",
            SkillCategory::Spatial => "spatial",
            SkillCategory::Scale => "scale",
            SkillCategory::Count => "count",
            SkillCategory::Color => "color",
            SkillCategory::Shape => "shape",
            SkillCategory::TextureMaterial => "texture_material",
            SkillCategory::Style => "style",
            SkillCategory::TextRendering => "text_rendering",
            SkillCategory::NamedEntity => "named_entity",
            SkillCategory::LangComplexity => "lang_complexity",
            SkillCategory::LangCompositional => "lang_compositional",
            SkillCategory::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for SkillCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SkillTag {
    pub category: SkillCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl SkillTag {
    pub fn new(category: SkillCategory) -> Self {
        SkillTag {
            category,
            detail: None,
        }
    }

    pub fn with_detail(category: SkillCategory, detail: impl Into<String>) -> Self {
        SkillTag {
            category,
            detail: Some(detail.into()),
        }
    }
}

/// A benchmark prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub skills: Vec<SkillTag>,
    #[serde(default)]
    pub sub_skill: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PromptRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        PromptRecord {
            id: id.into(),
            text: text.into(),
            source: String::new(),
            skills: Vec::new(),
            sub_skill: None,
            extra: Map::new(),
        }
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::Invalid("prompt id is empty".into()));
        }
        if self.text.is_empty() {
            return Err(RecordError::Invalid(format!(
                "prompt {:?} has empty text",
                self.id
            )));
        }
        Ok(())
    }

    /// Distinct skill categories carried by this prompt, in sorted order.
    pub fn categories(&self) -> Vec<SkillCategory> {
        let mut cats: Vec<_> = self.skills.iter().map(|s| s.category).collect();
        cats.sort();
        cats.dedup();
        cats
    }
}

/// An opaque generated image. Never decoded here; only handed to backends.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Likert,
    WordLevel,
    DsgH,
    Sxs,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::Likert,
        TemplateKind::WordLevel,
        TemplateKind::DsgH,
        TemplateKind::Sxs,
    ];
    pub const ABSOLUTE: [TemplateKind; 3] = [
        TemplateKind::WordLevel,
        TemplateKind::Likert,
        TemplateKind::DsgH,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Likert => "likert",
            TemplateKind::WordLevel => "word_level",
            TemplateKind::DsgH => "dsg_h",
            TemplateKind::Sxs => "sxs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_raters() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub run_id: String,
    pub prompt_set_id: String,
    pub model_ids: Vec<String>,
    pub template_kinds: Vec<TemplateKind>,
    #[serde(default = "default_raters")]
    pub raters_per_item: u32,
}

impl EvalRun {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.raters_per_item < 1 {
            return Err(RecordError::Invalid(
                "raters_per_item must be at least 1".into(),
            ));
        }
        if self.template_kinds.is_empty() {
            return Err(RecordError::Invalid("template_kinds is empty".into()));
        }
        Ok(())
    }
}

/// One rater's judgement of one item under one template.
///
/// For side-by-side records `image_id` and `model_id` name both sides,
/// joined by [`PAIR_SEPARATOR`] (`"img_a|img_b"`, `"model_a|model_b"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub prompt_id: String,
    pub image_id: String,
    pub model_id: String,
    pub rater_id: String,
    pub template: TemplateKind,
    pub payload: Value,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

pub const PAIR_SEPARATOR: char = '|';

impl RatingRecord {
    pub fn payload(&self) -> Result<Payload, human::PayloadError> {
        Payload::from_value(self.template, &self.payload)
    }

    /// Both sides of a side-by-side record's `model_id`.
    pub fn model_pair(&self) -> Option<(&str, &str)> {
        self.model_id.split_once(PAIR_SEPARATOR)
    }
}

/// One metric score for one (prompt, image) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub prompt_id: String,
    pub image_id: String,
    pub metric: String,
    pub score: f64,
    #[serde(default)]
    pub details: Value,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Reads a JSON Lines file, skipping blank lines. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordError> {
    let file = File::open(path).map_err(|e| RecordError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RecordError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| RecordError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), RecordError> {
    let file = File::create(path).map_err(|e| RecordError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| RecordError::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| RecordError::io(path, e))?;
    }
    w.flush().map_err(|e| RecordError::io(path, e))
}

/// Loads and validates a prompt set, preserving file order.
pub fn load_prompt_set(path: &Path) -> Result<Vec<PromptRecord>, RecordError> {
    let file = File::open(path).map_err(|e| RecordError::io(path, e))?;
    let mut out: Vec<PromptRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RecordError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PromptRecord =
            serde_json::from_str(&line).map_err(|e| RecordError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        rec.validate().map_err(|e| RecordError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(RecordError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(RecordError::Empty(path.display().to_string()));
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<RatingRecord>, RecordError> {
    read_jsonl(path)
}

pub fn load_metric_results(path: &Path) -> Result<Vec<MetricRecord>, RecordError> {
    read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub counts: BTreeMap<TemplateKind, usize>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: TemplateKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }
}

/// Checks every line of an annotation file against the record and payload
/// schemas. Only an unreadable file is an error; everything else is reported.
///
/// When `prompts` is given, word-level label counts are also checked against
/// the prompt's word count.
pub fn validate_annotation_file(
    path: &Path,
    prompts: Option<&[PromptRecord]>,
) -> Result<ValidationReport, RecordError> {
    let file = File::open(path).map_err(|e| RecordError::io(path, e))?;
    let by_id: BTreeMap<&str, &PromptRecord> = prompts
        .unwrap_or(&[])
        .iter()
        .map(|p| (p.id.as_str(), p))
        .collect();
    let mut report = ValidationReport::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RecordError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut flag = |message: String| {
            report.violations.push(Violation {
                line: lineno,
                message,
            })
        };
        let rec: RatingRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                flag(format!("malformed record: {e}"));
                continue;
            }
        };
        report.records += 1;
        *report.counts.entry(rec.template).or_insert(0) += 1;
        match rec.payload() {
            Ok(payload) => {
                if let Some(prompt) = by_id.get(rec.prompt_id.as_str()) {
                    if let Err(e) = payload.check_against_prompt(&prompt.text) {
                        flag(e.to_string());
                    }
                }
                if let Payload::Sxs(sxs) = &payload {
                    let expected = format!("{}{}{}", sxs.image_a, PAIR_SEPARATOR, sxs.image_b);
                    if rec.image_id != expected {
                        flag(format!(
                            "sxs image_id {:?} does not name payload images {expected:?}",
                            rec.image_id
                        ));
                    }
                }
            }
            Err(e) => flag(e.to_string()),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_two_records_in_order() {
        let f = write_lines(&[
            r#"{"id":"p1","text":"a cat","source":"test","skills":[{"category":"entity"}]}"#,
            r#"{"id":"p2","text":"two dogs","source":"test","skills":[{"category":"count","detail":"simple"}],"sub_skill":"simple modifier"}"#,
        ]);
        let recs = load_prompt_set(f.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "p1");
        assert_eq!(recs[1].skills[0].detail.as_deref(), Some("simple"));
        assert_eq!(recs[1].sub_skill.as_deref(), Some("simple modifier"));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let f = write_lines(&[r#"{"id":"p1","text":"a"}"#, r#"{"id":"p1","text":"b"}"#]);
        match load_prompt_set(f.path()) {
            Err(RecordError::DuplicateId(id)) => assert_eq!(id, "p1"),
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[r#"{"id":"p1","text":"a"}"#, "{not json"]);
        match load_prompt_set(f.path()) {
            Err(RecordError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn empty_text_and_empty_file_rejected() {
        let f = write_lines(&[r#"{"id":"p1","text":""}"#]);
        assert!(matches!(
            load_prompt_set(f.path()),
            Err(RecordError::Malformed { line: 1, .. })
        ));
        let f = write_lines(&[]);
        assert!(matches!(
            load_prompt_set(f.path()),
            Err(RecordError::Empty(_))
        ));
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let line = r#"{"id":"p1","text":"a cat","source":"s","skills":[],"sub_skill":null,"future_field":{"x":1}}"#;
        let rec: PromptRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.extra["future_field"], json!({"x": 1}));
        let back: PromptRecord =
            serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn validation_of_empty_file_has_zero_counts() {
        let f = write_lines(&[]);
        let report = validate_annotation_file(f.path(), None).unwrap();
        assert_eq!(report.records, 0);
        assert!(report.counts.is_empty());
        assert!(report.is_clean());
    }

    #[test]
    fn likert_out_of_range_is_a_violation() {
        let f = write_lines(&[
            r#"{"prompt_id":"p1","image_id":"i1","model_id":"m","rater_id":"r","template":"likert","payload":{"value":6}}"#,
        ]);
        let report = validate_annotation_file(f.path(), None).unwrap();
        assert_eq!(report.count(TemplateKind::Likert), 1);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].message.contains("rating out of range"));
    }

    #[test]
    fn word_level_count_checked_against_prompt() {
        let f = write_lines(&[
            r#"{"prompt_id":"p1","image_id":"i1","model_id":"m","rater_id":"r","template":"word_level","payload":{"labels":["aligned","aligned"]}}"#,
        ]);
        let prompts = vec![PromptRecord::new("p1", "a red dog")];
        let report = validate_annotation_file(f.path(), Some(&prompts)).unwrap();
        assert_eq!(report.violations.len(), 1, "{report:?}");
        assert!(report.violations[0].message.contains("3"));
    }

    #[test]
    fn unreadable_file_is_an_error() {
        assert!(validate_annotation_file(Path::new("/nonexistent/ann.jsonl"), None).is_err());
    }

    #[test]
    fn eval_run_invariants() {
        let mut run = EvalRun {
            run_id: "r".into(),
            prompt_set_id: "p".into(),
            model_ids: vec!["m".into()],
            template_kinds: vec![TemplateKind::Likert],
            raters_per_item: 3,
        };
        assert!(run.validate().is_ok());
        run.raters_per_item = 0;
        assert!(run.validate().is_err());
        run.raters_per_item = 1;
        run.template_kinds.clear();
        assert!(run.validate().is_err());
        let parsed: EvalRun = serde_json::from_str(
            r#"{"run_id":"r","prompt_set_id":"p","model_ids":[],"template_kinds":["sxs"]}"#,
        )
        .unwrap();
        assert_eq!(parsed.raters_per_item, 3);
    }
}
