//! Narrow interfaces to the external model capabilities.
//!
//! Four capabilities are needed by the metric pipeline and the prompt-set
//! tooling: text generation, NLI consistency scoring, visual question
//! answering and text/image embedding. Each has a deterministic mock, a
//! record/replay fixture store and an HTTP client; which one is used is
//! decided by the URI scheme in the backend config (`mock:`, `record:`,
//! `http(s):`).
//!
//! VQA backends return raw per-choice likelihoods. Normalisation happens in
//! the metric, never here.

mod config;
mod http;
mod limit;
mod mock;
mod replay;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::ImageRef;

pub use config::{BackendConfig, Backends, BackendsConfig};
pub use http::HttpBackend;
pub use limit::Limited;
pub use mock::{
    mock_tokens, ConstantNli, EchoNli, HashEmbedder, ScriptedGenerator, TableAnswer, TableEmbedder,
    TableMiss, TableNli, TableVqa, UniformVqa,
};
pub use replay::{fixture_key, FixtureLog, Recorded};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend refused the request: {0}")]
    Refused(String),
    #[error("backend answered with unknown choice {0:?}")]
    UnknownChoice(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no fixture for {0}")]
    MissingFixture(String),
    #[error("backend config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenRequest {
    pub template_id: String,
    /// The text substituted into the template (usually the prompt under test).
    pub subject: String,
    pub filled_prompt: String,
    pub max_output_chars: usize,
    pub deterministic: bool,
    /// Distinguishes repeated samples of the same prompt.
    #[serde(default)]
    pub sample: u32,
}

impl GenRequest {
    pub fn new(template_id: &str, subject: &str, filled_prompt: String) -> Self {
        GenRequest {
            template_id: template_id.to_owned(),
            subject: subject.to_owned(),
            filled_prompt,
            max_output_chars: 4096,
            deterministic: true,
            sample: 0,
        }
    }

    /// The `i`-th independent sample of this request.
    pub fn sampled(mut self, i: u32) -> Self {
        self.sample = i;
        self.deterministic = false;
        self
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.filled_prompt.is_empty() {
            return Err(BackendError::InvalidRequest(
                "filled_prompt is empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliJudgement {
    pub premise: String,
    pub hypothesis: String,
    pub consistency: f64,
}

impl NliJudgement {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.consistency) {
            return Err(BackendError::InvalidResponse(format!(
                "consistency {} outside [0, 1]",
                self.consistency
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaDistribution {
    pub question: String,
    pub choices: Vec<String>,
    pub likelihoods: Vec<f64>,
}

impl VqaDistribution {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.choices.len() < 2 {
            return Err(BackendError::InvalidResponse(
                "fewer than two choices".into(),
            ));
        }
        if self.likelihoods.len() != self.choices.len() {
            return Err(BackendError::InvalidResponse(format!(
                "{} likelihoods for {} choices",
                self.likelihoods.len(),
                self.choices.len()
            )));
        }
        if self.likelihoods.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(BackendError::InvalidResponse(
                "likelihoods must be finite and non-negative".into(),
            ));
        }
        if !self.likelihoods.iter().any(|l| *l > 0.0) {
            return Err(BackendError::InvalidResponse(
                "all likelihoods are zero".into(),
            ));
        }
        Ok(())
    }

    /// Checks that the distribution is over exactly `choices`, in order.
    fn check_choices(&self, choices: &[String]) -> Result<(), BackendError> {
        if let Some(unknown) = self.choices.iter().find(|c| !choices.contains(c)) {
            return Err(BackendError::UnknownChoice(unknown.clone()));
        }
        if self.choices != choices {
            return Err(BackendError::InvalidResponse(format!(
                "choices {:?} do not match requested {:?}",
                self.choices, choices
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub modality: Modality,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedInput {
    Text(String),
    Image(ImageRef),
}

impl EmbedInput {
    pub fn modality(&self) -> Modality {
        match self {
            EmbedInput::Text(_) => Modality::Text,
            EmbedInput::Image(_) => Modality::Image,
        }
    }
}

pub trait TextGenerator: Send + Sync {
    fn generate(&self, req: &GenRequest) -> Result<String, BackendError>;
}

pub trait NliScorer: Send + Sync {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliJudgement, BackendError>;
}

pub trait VqaModel: Send + Sync {
    fn vqa_answer(
        &self,
        image: &ImageRef,
        question: &str,
        choices: &[String],
    ) -> Result<VqaDistribution, BackendError>;
}

pub trait Embedder: Send + Sync {
    /// Embeds text (cut to the first `limit` tokens) or an image.
    fn embed(&self, input: &EmbedInput, limit: usize) -> Result<EmbeddingVector, BackendError>;
}

/// Runs the request checks shared by every implementation, then the call,
/// then the response checks.
pub fn generate(backend: &dyn TextGenerator, req: &GenRequest) -> Result<String, BackendError> {
    req.validate()?;
    backend.generate(req)
}

pub fn nli_score(
    backend: &dyn NliScorer,
    premise: &str,
    hypothesis: &str,
) -> Result<NliJudgement, BackendError> {
    if premise.is_empty() || hypothesis.is_empty() {
        return Err(BackendError::InvalidRequest(
            "premise and hypothesis must be non-empty".into(),
        ));
    }
    let j = backend.nli_score(premise, hypothesis)?;
    j.validate()?;
    Ok(j)
}

pub fn vqa_answer(
    backend: &dyn VqaModel,
    image: &ImageRef,
    question: &str,
    choices: &[String],
) -> Result<VqaDistribution, BackendError> {
    if choices.len() < 2 {
        return Err(BackendError::InvalidRequest(
            "at least two choices are required".into(),
        ));
    }
    let d = backend.vqa_answer(image, question, choices)?;
    d.check_choices(choices)?;
    d.validate()?;
    Ok(d)
}

pub fn embed(
    backend: &dyn Embedder,
    input: &EmbedInput,
    limit: usize,
) -> Result<EmbeddingVector, BackendError> {
    if limit == 0 {
        return Err(BackendError::InvalidRequest(
            "truncation limit must be positive".into(),
        ));
    }
    let v = backend.embed(input, limit)?;
    if v.values.iter().any(|x| !x.is_finite()) {
        return Err(BackendError::InvalidResponse(
            "embedding has non-finite values".into(),
        ));
    }
    Ok(v)
}

impl<T: TextGenerator + ?Sized> TextGenerator for Arc<T> {
    fn generate(&self, req: &GenRequest) -> Result<String, BackendError> {
        (**self).generate(req)
    }
}

impl<T: NliScorer + ?Sized> NliScorer for Arc<T> {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliJudgement, BackendError> {
        (**self).nli_score(premise, hypothesis)
    }
}

impl<T: VqaModel + ?Sized> VqaModel for Arc<T> {
    fn vqa_answer(
        &self,
        image: &ImageRef,
        question: &str,
        choices: &[String],
    ) -> Result<VqaDistribution, BackendError> {
        (**self).vqa_answer(image, question, choices)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn embed(&self, input: &EmbedInput, limit: usize) -> Result<EmbeddingVector, BackendError> {
        (**self).embed(input, limit)
    }
}
