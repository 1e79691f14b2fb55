//! QA-based alignment scoring.
//!
//! The Gecko pipeline for one (prompt, image) pair:
//!
//! 1. ask the language model to index the visually groundable words of the
//!    prompt (coverage markup, see [`crate::coverage`]);
//! 2. ask it for one or two multiple-choice questions per indexed word;
//! 3. drop question/answer pairs the NLI model finds inconsistent with the
//!    prompt (consistency strictly below `r`);
//! 4. answer each remaining question against the image with the VQA model
//!    and average the per-question scores.
//!
//! Per-question scores are either 0/1 accuracy of the argmax choice or the
//! gold answer's share of the total choice likelihood.
//!
//! [`tifa_score`] is the plain QA baseline (single-pass questions, no
//! coverage, no filter, accuracy scoring) and [`embedding_score`] the
//! contrastive cosine baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::backends::{
    self, BackendError, EmbedInput, Embedder, GenRequest, NliScorer, TextGenerator,
    VqaDistribution, VqaModel,
};
use crate::coverage::{parse_coverage, CoverageAnnotation, CoverageError};
use crate::human::SxsVote;
use crate::records::{ImageRef, MetricRecord, PromptRecord};
use crate::templates;

pub const MAX_QAS_PER_KEYWORD: usize = 2;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("coverage markup rejected after {attempts} attempt(s): {last}")]
    Coverage { attempts: u32, last: CoverageError },
    #[error("malformed question output after {attempts} attempt(s): {message}")]
    MalformedQa { attempts: u32, message: String },
    #[error("questions missing for keyword indices {missing:?}")]
    CoverageIncomplete { missing: Vec<u32> },
    #[error("{0} questions but {1} answer distributions")]
    LengthMismatch(usize, usize),
    #[error("question {0}: all likelihoods are zero")]
    ZeroMass(String),
    #[error("question {qa_id}: {message}")]
    InvalidDistribution { qa_id: String, message: String },
    #[error("gold answer {gold:?} of question {qa_id} is not among the choices")]
    GoldNotInChoices { qa_id: String, gold: String },
    #[error("no questions to score")]
    NoQuestions,
    #[error("every question was removed by the NLI filter")]
    EmptyAfterFilter,
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub keyword_index: u32,
    pub question: String,
    pub choices: Vec<String>,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_consistency: Option<f64>,
}

impl QaPair {
    /// The NLI hypothesis for this pair; the premise is the prompt text.
    pub fn hypothesis(&self) -> String {
        format!("Q: {} A: {}", self.question, self.gold_answer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Accuracy of the argmax choice.
    #[serde(rename = "binary_eq1")]
    Binary,
    /// Gold likelihood over total likelihood.
    #[default]
    #[serde(rename = "normalized_eq2")]
    Normalized,
    /// Gold share of the summed negative log likelihoods. Kept only to
    /// reproduce the literal formula; it rewards low confidence in the gold.
    #[serde(rename = "nll_eq2")]
    NegLogLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyAfterFilter {
    Error,
    #[default]
    FallbackUnfiltered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeckoConfig {
    pub nli_threshold: f64,
    pub nli_filter: bool,
    pub scoring_mode: ScoringMode,
    pub empty_after_filter_policy: EmptyAfterFilter,
    /// Extra generation attempts when the model output cannot be parsed.
    pub retries: u32,
}

impl Default for GeckoConfig {
    fn default() -> Self {
        GeckoConfig {
            nli_threshold: 0.005,
            nli_filter: true,
            scoring_mode: ScoringMode::Normalized,
            empty_after_filter_policy: EmptyAfterFilter::FallbackUnfiltered,
            retries: 2,
        }
    }
}

impl GeckoConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(0.0..=1.0).contains(&self.nli_threshold) {
            return Err(MetricError::Config(format!(
                "nli_threshold {} outside [0, 1]",
                self.nli_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub qa_id: String,
    pub keyword_index: u32,
    pub predicted: String,
    pub correct: bool,
    pub per_choice_scores: Vec<f64>,
    pub question_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredQa {
    pub qa_id: String,
    pub nli_consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub prompt_id: String,
    pub image_id: String,
    pub metric_name: String,
    pub aggregate: f64,
    pub per_question: Vec<QuestionScore>,
    pub filtered_out: Vec<FilteredQa>,
    pub fallback_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<String>,
    #[serde(default)]
    pub questions: Vec<QaPair>,
}

impl MetricResult {
    pub fn to_record(&self) -> MetricRecord {
        MetricRecord {
            prompt_id: self.prompt_id.clone(),
            image_id: self.image_id.clone(),
            metric: self.metric_name.clone(),
            score: self.aggregate,
            details: serde_json::json!({
                "per_question": self.per_question,
                "filtered_out": self.filtered_out,
                "fallback_used": self.fallback_used,
                "coverage": self.coverage,
                "questions": self.questions,
            }),
            extra: Default::default(),
        }
    }
}

/// Asks the generator to index the groundable words of the prompt.
pub fn generate_keywords(
    gen: &dyn TextGenerator,
    prompt: &PromptRecord,
    retries: u32,
) -> Result<CoverageAnnotation, MetricError> {
    let filled = templates::fill(templates::COVERAGE, &[("prompt", &prompt.text)])
        .expect("bundled template");
    let req = GenRequest::new("coverage", &prompt.text, filled);
    let mut last = None;
    for attempt in 1..=retries + 1 {
        let out = backends::generate(gen, &req)?;
        match parse_coverage(out.trim(), &prompt.text) {
            Ok(cov) => return Ok(cov),
            Err(e) => {
                warn!(prompt_id = %prompt.id, attempt, error = %e, "coverage output rejected");
                last = Some(e);
            }
        }
    }
    Err(MetricError::Coverage {
        attempts: retries + 1,
        last: last.expect("at least one attempt"),
    })
}

#[derive(Debug, Default)]
struct RawQa {
    about: Option<u32>,
    question: String,
    choices: Option<Vec<String>>,
    answer: Option<String>,
}

/// (about index, question, choices, gold answer)
type QaBlock = (Option<u32>, String, Vec<String>, String);

fn finish(raw: RawQa) -> Result<QaBlock, String> {
    let choices = raw
        .choices
        .ok_or_else(|| format!("question {:?} has no Choices line", raw.question))?;
    let answer = raw
        .answer
        .ok_or_else(|| format!("question {:?} has no answer line", raw.question))?;
    if choices.len() < 2 {
        return Err(format!(
            "question {:?} has fewer than two choices",
            raw.question
        ));
    }
    let gold = choices
        .iter()
        .find(|c| c.eq_ignore_ascii_case(&answer))
        .ok_or_else(|| format!("answer {answer:?} is not among choices {choices:?}"))?
        .clone();
    Ok((raw.about, raw.question, choices, gold))
}

fn parse_about(rest: &str) -> Option<u32> {
    let rest = rest.trim().strip_prefix('{')?;
    let (digits, tail) = rest.split_once('}')?;
    if !matches!(tail.trim(), "" | ":") {
        return None;
    }
    digits.trim().parse().ok()
}

/// Parses `About {i}: / Q: / Choices: / A:` blocks. `About` lines are
/// optional in the grammar; callers decide whether they are required.
fn parse_qa_blocks(text: &str) -> Result<Vec<QaBlock>, String> {
    let mut out = Vec::new();
    let mut about = None;
    let mut pending: Option<RawQa> = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with("Description:") {
            break;
        }
        if let Some(rest) = line.strip_prefix("About") {
            if let Some(p) = pending.take() {
                out.push(finish(p)?);
            }
            about = Some(parse_about(rest).ok_or_else(|| format!("bad About line {line:?}"))?);
        } else if let Some(q) = line.strip_prefix("Q:") {
            if let Some(p) = pending.take() {
                out.push(finish(p)?);
            }
            pending = Some(RawQa {
                about,
                question: q.trim().to_owned(),
                ..Default::default()
            });
        } else if let Some(c) = line.strip_prefix("Choices:") {
            let p = pending.as_mut().ok_or("Choices line before any question")?;
            if p.choices.is_some() {
                return Err(format!("question {:?} has two Choices lines", p.question));
            }
            let choices: Vec<String> = c
                .split(',')
                .map(|s| s.trim().to_owned())
                .filter(|s| !s.is_empty())
                .collect();
            let mut seen = choices.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != choices.len() {
                return Err(format!("question {:?} repeats a choice", p.question));
            }
            p.choices = Some(choices);
        } else if let Some(a) = line.strip_prefix("A:") {
            let p = pending.as_mut().ok_or("answer line before any question")?;
            if p.choices.is_none() || p.answer.is_some() {
                return Err(format!(
                    "misplaced answer line for question {:?}",
                    p.question
                ));
            }
            p.answer = Some(a.trim().to_owned());
        }
    }
    if let Some(p) = pending {
        out.push(finish(p)?);
    }
    Ok(out)
}

enum QaParse {
    Ok(Vec<QaPair>),
    Malformed(String),
    Incomplete(Vec<u32>),
}

fn check_gecko_qas(text: &str, cov: &CoverageAnnotation) -> QaParse {
    let blocks = match parse_qa_blocks(text) {
        Ok(b) => b,
        Err(e) => return QaParse::Malformed(e),
    };
    let known = cov.indices();
    let mut per_index: BTreeMap<u32, usize> = BTreeMap::new();
    let mut qas = Vec::with_capacity(blocks.len());
    for (about, question, choices, gold) in blocks {
        let Some(index) = about else {
            return QaParse::Malformed(format!("question {question:?} is not under an About line"));
        };
        if !known.contains(&index) {
            return QaParse::Malformed(format!("About {{{index}}} names no keyword"));
        }
        let n = per_index.entry(index).or_default();
        *n += 1;
        if *n > MAX_QAS_PER_KEYWORD {
            return QaParse::Malformed(format!(
                "more than {MAX_QAS_PER_KEYWORD} questions for keyword {index}"
            ));
        }
        qas.push(QaPair {
            id: format!("{index}.{n}"),
            keyword_index: index,
            question,
            choices,
            gold_answer: gold,
            nli_consistency: None,
        });
    }
    let missing: Vec<u32> = known
        .into_iter()
        .filter(|i| !per_index.contains_key(i))
        .collect();
    if !missing.is_empty() {
        return QaParse::Incomplete(missing);
    }
    qas.sort_by_key(|q| q.keyword_index);
    QaParse::Ok(qas)
}

fn run_qa_generation(
    gen: &dyn TextGenerator,
    req: &GenRequest,
    retries: u32,
    check: impl Fn(&str) -> QaParse,
) -> Result<Vec<QaPair>, MetricError> {
    let mut last = QaParse::Malformed(String::new());
    for attempt in 1..=retries + 1 {
        let out = backends::generate(gen, req)?;
        match check(&out) {
            QaParse::Ok(qas) => return Ok(qas),
            other => {
                match &other {
                    QaParse::Malformed(m) => {
                        warn!(attempt, message = %m, "question output rejected")
                    }
                    QaParse::Incomplete(missing) => {
                        warn!(attempt, ?missing, "question output misses keywords")
                    }
                    QaParse::Ok(_) => unreachable!(),
                }
                last = other;
            }
        }
    }
    Err(match last {
        QaParse::Incomplete(missing) => MetricError::CoverageIncomplete { missing },
        QaParse::Malformed(message) => MetricError::MalformedQa {
            attempts: retries + 1,
            message,
        },
        QaParse::Ok(_) => unreachable!(),
    })
}

/// Generates one or two questions for every indexed keyword.
pub fn generate_qas(
    gen: &dyn TextGenerator,
    prompt_text: &str,
    cov: &CoverageAnnotation,
    retries: u32,
) -> Result<Vec<QaPair>, MetricError> {
    if cov.spans.is_empty() {
        return Err(MetricError::CoverageIncomplete {
            missing: Vec::new(),
        });
    }
    let annotated = cov.serialize();
    let filled = templates::fill(
        templates::QA,
        &[("prompt", prompt_text), ("annotated", &annotated)],
    )
    .expect("bundled template");
    let req = GenRequest::new("qa", &annotated, filled);
    run_qa_generation(gen, &req, retries, |out| check_gecko_qas(out, cov))
}

/// Single-pass question generation without keyword indexing.
pub fn generate_tifa_qas(
    gen: &dyn TextGenerator,
    prompt_text: &str,
    retries: u32,
) -> Result<Vec<QaPair>, MetricError> {
    let filled =
        templates::fill(templates::TIFA_QA, &[("prompt", prompt_text)]).expect("bundled template");
    let req = GenRequest::new("tifa_qa", prompt_text, filled);
    run_qa_generation(gen, &req, retries, |out| match parse_qa_blocks(out) {
        Err(e) => QaParse::Malformed(e),
        Ok(blocks) if blocks.is_empty() => QaParse::Malformed("no questions".into()),
        Ok(blocks) => QaParse::Ok(
            blocks
                .into_iter()
                .enumerate()
                .map(|(i, (_, question, choices, gold))| QaPair {
                    id: format!("t{}", i + 1),
                    keyword_index: i as u32 + 1,
                    question,
                    choices,
                    gold_answer: gold,
                    nli_consistency: None,
                })
                .collect(),
        ),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<QaPair>,
    pub removed: Vec<QaPair>,
}

/// Scores every pair with the NLI model and removes those strictly below
/// `threshold`. Order within each side follows the input.
pub fn filter_qas(
    nli: &dyn NliScorer,
    qas: &[QaPair],
    prompt_text: &str,
    threshold: f64,
) -> Result<FilterOutcome, MetricError> {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for qa in qas {
        let j = backends::nli_score(nli, prompt_text, &qa.hypothesis())?;
        let mut qa = qa.clone();
        qa.nli_consistency = Some(j.consistency);
        if j.consistency < threshold {
            debug!(qa_id = %qa.id, consistency = j.consistency, "filtered");
            removed.push(qa);
        } else {
            kept.push(qa);
        }
    }
    Ok(FilterOutcome { kept, removed })
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Scores one question against its answer distribution.
pub fn question_score(
    qa: &QaPair,
    dist: &VqaDistribution,
    mode: ScoringMode,
) -> Result<QuestionScore, MetricError> {
    let gold = dist
        .choices
        .iter()
        .position(|c| *c == qa.gold_answer)
        .ok_or_else(|| MetricError::GoldNotInChoices {
            qa_id: qa.id.clone(),
            gold: qa.gold_answer.clone(),
        })?;
    if dist.likelihoods.len() != dist.choices.len() {
        return Err(MetricError::InvalidDistribution {
            qa_id: qa.id.clone(),
            message: "likelihood and choice counts differ".into(),
        });
    }
    if dist.likelihoods.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(MetricError::InvalidDistribution {
            qa_id: qa.id.clone(),
            message: "likelihoods must be finite and non-negative".into(),
        });
    }
    let total: f64 = dist.likelihoods.iter().sum();
    if total <= 0.0 {
        return Err(MetricError::ZeroMass(qa.id.clone()));
    }
    let normalized: Vec<f64> = dist.likelihoods.iter().map(|l| l / total).collect();
    let best = argmax_first(&dist.likelihoods);
    let correct = best == gold;
    let (per_choice_scores, score) = match mode {
        ScoringMode::Binary => (normalized, if correct { 1.0 } else { 0.0 }),
        ScoringMode::Normalized => {
            let s = normalized[gold];
            (normalized, s)
        }
        ScoringMode::NegLogLikelihood => {
            if normalized.contains(&0.0) {
                return Err(MetricError::InvalidDistribution {
                    qa_id: qa.id.clone(),
                    message: "zero likelihood has no finite negative log likelihood".into(),
                });
            }
            let nll: Vec<f64> = normalized.iter().map(|p| -p.ln()).collect();
            let sum: f64 = nll.iter().sum();
            let shares: Vec<f64> = nll.iter().map(|x| x / sum).collect();
            let s = shares[gold];
            (shares, s)
        }
    };
    Ok(QuestionScore {
        qa_id: qa.id.clone(),
        keyword_index: qa.keyword_index,
        predicted: dist.choices[best].clone(),
        correct,
        per_choice_scores,
        question_score: score,
    })
}

pub fn question_scores(
    qas: &[QaPair],
    dists: &[VqaDistribution],
    mode: ScoringMode,
) -> Result<Vec<QuestionScore>, MetricError> {
    if qas.len() != dists.len() {
        return Err(MetricError::LengthMismatch(qas.len(), dists.len()));
    }
    if qas.is_empty() {
        return Err(MetricError::NoQuestions);
    }
    qas.iter()
        .zip(dists)
        .map(|(q, d)| question_score(q, d, mode))
        .collect()
}

fn mean_score(scores: &[QuestionScore]) -> f64 {
    scores.iter().map(|s| s.question_score).sum::<f64>() / scores.len() as f64
}

/// Fraction of questions whose argmax choice is the gold answer.
pub fn score_binary(qas: &[QaPair], dists: &[VqaDistribution]) -> Result<f64, MetricError> {
    question_scores(qas, dists, ScoringMode::Binary).map(|s| mean_score(&s))
}

/// Mean over questions of the gold answer's likelihood share.
pub fn score_normalized(qas: &[QaPair], dists: &[VqaDistribution]) -> Result<f64, MetricError> {
    question_scores(qas, dists, ScoringMode::Normalized).map(|s| mean_score(&s))
}

fn answer_all(
    vqa: &dyn VqaModel,
    image: &ImageRef,
    qas: &[QaPair],
) -> Result<Vec<VqaDistribution>, MetricError> {
    qas.iter()
        .map(|qa| {
            backends::vqa_answer(vqa, image, &qa.question, &qa.choices).map_err(MetricError::from)
        })
        .collect()
}

/// Runs the full pipeline. `nli` may be `None` only when filtering is off.
pub fn gecko_score(
    gen: &dyn TextGenerator,
    nli: Option<&dyn NliScorer>,
    vqa: &dyn VqaModel,
    prompt: &PromptRecord,
    image: &ImageRef,
    cfg: &GeckoConfig,
) -> Result<MetricResult, MetricError> {
    cfg.validate()?;
    let cov = generate_keywords(gen, prompt, cfg.retries)?;
    let qas = generate_qas(gen, &prompt.text, &cov, cfg.retries)?;
    let (scored, filtered_out, fallback_used, questions) = if cfg.nli_filter {
        let nli = nli.ok_or_else(|| {
            MetricError::Config("NLI filtering is on but no NLI backend is configured".into())
        })?;
        let outcome = filter_qas(nli, &qas, &prompt.text, cfg.nli_threshold)?;
        let filtered: Vec<FilteredQa> = outcome
            .removed
            .iter()
            .map(|q| FilteredQa {
                qa_id: q.id.clone(),
                nli_consistency: q.nli_consistency.expect("scored by filter"),
            })
            .collect();
        let mut all: Vec<QaPair> = outcome
            .kept
            .iter()
            .chain(&outcome.removed)
            .cloned()
            .collect();
        all.sort_by(|a, b| {
            a.keyword_index
                .cmp(&b.keyword_index)
                .then_with(|| a.id.cmp(&b.id))
        });
        if outcome.kept.is_empty() {
            match cfg.empty_after_filter_policy {
                EmptyAfterFilter::Error => return Err(MetricError::EmptyAfterFilter),
                EmptyAfterFilter::FallbackUnfiltered => {
                    warn!(prompt_id = %prompt.id, "NLI filter removed every question; scoring the unfiltered set");
                    (all.clone(), filtered, true, all)
                }
            }
        } else {
            (outcome.kept, filtered, false, all)
        }
    } else {
        (qas.clone(), Vec::new(), false, qas)
    };
    let dists = answer_all(vqa, image, &scored)?;
    let per_question = question_scores(&scored, &dists, cfg.scoring_mode)?;
    Ok(MetricResult {
        prompt_id: prompt.id.clone(),
        image_id: image.id.clone(),
        metric_name: "gecko".into(),
        aggregate: mean_score(&per_question),
        per_question,
        filtered_out,
        fallback_used,
        coverage: Some(cov.annotated_text),
        questions,
    })
}

/// Plain QA baseline: one generation pass, no filter, accuracy scoring.
pub fn tifa_score(
    gen: &dyn TextGenerator,
    vqa: &dyn VqaModel,
    prompt: &PromptRecord,
    image: &ImageRef,
    retries: u32,
) -> Result<MetricResult, MetricError> {
    let qas = generate_tifa_qas(gen, &prompt.text, retries)?;
    let dists = answer_all(vqa, image, &qas)?;
    let per_question = question_scores(&qas, &dists, ScoringMode::Binary)?;
    Ok(MetricResult {
        prompt_id: prompt.id.clone(),
        image_id: image.id.clone(),
        metric_name: "tifa".into(),
        aggregate: mean_score(&per_question),
        per_question,
        filtered_out: Vec::new(),
        fallback_used: false,
        coverage: None,
        questions: qas,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingScore {
    pub score: f64,
    pub truncated: bool,
}

/// Cosine similarity between the prompt (cut to `limit` tokens) and the image.
pub fn embedding_score(
    emb: &dyn Embedder,
    prompt_text: &str,
    image: &ImageRef,
    limit: usize,
) -> Result<EmbeddingScore, MetricError> {
    let t = backends::embed(emb, &EmbedInput::Text(prompt_text.to_owned()), limit)?;
    let i = backends::embed(emb, &EmbedInput::Image(image.clone()), limit)?;
    Ok(EmbeddingScore {
        score: cosine(&t.values, &i.values)?,
        truncated: t.truncated,
    })
}

/// Prefers the image with the higher score; differences within `tie_epsilon` are unsure.
pub fn sxs_predict(score_a: f64, score_b: f64, tie_epsilon: f64) -> SxsVote {
    if (score_a - score_b).abs() <= tie_epsilon {
        SxsVote::Unsure
    } else if score_a > score_b {
        SxsVote::ImageA
    } else {
        SxsVote::ImageB
    }
}
