//! Deterministic stand-ins for the model backends. Same input, same output.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{
    BackendError, EmbedInput, Embedder, EmbeddingVector, GenRequest, Modality, NliJudgement,
    NliScorer, TextGenerator, VqaDistribution, VqaModel,
};
use crate::records::ImageRef;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BackendError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
}

/// Answers generation requests from a fixed table.
///
/// A request is looked up by its full filled prompt first, then by
/// `template_id:subject`, then by the bare subject (the raw text substituted
/// into the template).
#[derive(Debug, Default)]
pub struct ScriptedGenerator {
    table: HashMap<String, String>,
    calls: AtomicUsize,
}

impl ScriptedGenerator {
    pub fn new<K: Into<String>, V: Into<String>>(
        entries: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        ScriptedGenerator {
            table: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Loads a JSON object mapping keys to responses.
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let table: HashMap<String, String> = read_json(path)?;
        Ok(ScriptedGenerator::new(table))
    }

    pub fn insert(&mut self, key: impl Into<String>, response: impl Into<String>) {
        self.table.insert(key.into(), response.into());
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl TextGenerator for ScriptedGenerator {
    fn generate(&self, req: &GenRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.table
            .get(&req.filled_prompt)
            .or_else(|| {
                self.table
                    .get(&format!("{}:{}", req.template_id, req.subject))
            })
            .or_else(|| self.table.get(&req.subject))
            .cloned()
            .ok_or_else(|| {
                BackendError::MissingFixture(format!("scripted response for {:?}", req.subject))
            })
    }
}

/// Consistency 1.0 when the hypothesis is a substring of the premise, else 0.0.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoNli;

impl NliScorer for EchoNli {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliJudgement, BackendError> {
        Ok(NliJudgement {
            premise: premise.to_owned(),
            hypothesis: hypothesis.to_owned(),
            consistency: if premise.contains(hypothesis) {
                1.0
            } else {
                0.0
            },
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantNli(pub f64);

impl NliScorer for ConstantNli {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliJudgement, BackendError> {
        Ok(NliJudgement {
            premise: premise.to_owned(),
            hypothesis: hypothesis.to_owned(),
            consistency: self.0,
        })
    }
}

/// Looks consistency scores up by hypothesis.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct TableNli {
    #[serde(default)]
    pub scores: HashMap<String, f64>,
    /// Score for hypotheses missing from the table; a miss is an error when unset.
    #[serde(default)]
    pub default: Option<f64>,
}

impl TableNli {
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        read_json(path)
    }
}

impl NliScorer for TableNli {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliJudgement, BackendError> {
        let consistency = self
            .scores
            .get(hypothesis)
            .copied()
            .or(self.default)
            .ok_or_else(|| BackendError::MissingFixture(format!("nli score for {hypothesis:?}")))?;
        Ok(NliJudgement {
            premise: premise.to_owned(),
            hypothesis: hypothesis.to_owned(),
            consistency,
        })
    }
}

/// Equal likelihood for every choice.
#[derive(Debug, Default, Clone, Copy)]
pub struct UniformVqa;

impl VqaModel for UniformVqa {
    fn vqa_answer(
        &self,
        _image: &ImageRef,
        question: &str,
        choices: &[String],
    ) -> Result<VqaDistribution, BackendError> {
        let p = 1.0 / choices.len() as f64;
        Ok(VqaDistribution {
            question: question.to_owned(),
            choices: choices.to_vec(),
            likelihoods: vec![p; choices.len()],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TableAnswer {
    /// One-hot on this choice.
    Choice(String),
    /// Raw likelihoods, aligned with the requested choices.
    Likelihoods(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMiss {
    #[default]
    Error,
    Uniform,
}

/// Answers looked up by image id and question. Image id `"*"` matches any image.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct TableVqa {
    #[serde(default)]
    pub answers: HashMap<String, HashMap<String, TableAnswer>>,
    #[serde(default)]
    pub on_miss: TableMiss,
}

impl TableVqa {
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        read_json(path)
    }

    pub fn insert(&mut self, image_id: &str, question: &str, answer: TableAnswer) {
        self.answers
            .entry(image_id.to_owned())
            .or_default()
            .insert(question.to_owned(), answer);
    }
}

impl VqaModel for TableVqa {
    fn vqa_answer(
        &self,
        image: &ImageRef,
        question: &str,
        choices: &[String],
    ) -> Result<VqaDistribution, BackendError> {
        let hit = self
            .answers
            .get(&image.id)
            .and_then(|m| m.get(question))
            .or_else(|| self.answers.get("*").and_then(|m| m.get(question)));
        let likelihoods = match hit {
            Some(TableAnswer::Choice(c)) => {
                if !choices.contains(c) {
                    return Err(BackendError::UnknownChoice(c.clone()));
                }
                choices
                    .iter()
                    .map(|x| if x == c { 1.0 } else { 0.0 })
                    .collect()
            }
            Some(TableAnswer::Likelihoods(l)) => l.clone(),
            None => match self.on_miss {
                TableMiss::Uniform => return UniformVqa.vqa_answer(image, question, choices),
                TableMiss::Error => {
                    return Err(BackendError::MissingFixture(format!(
                        "vqa answer for image {:?}, question {question:?}",
                        image.id
                    )))
                }
            },
        };
        Ok(VqaDistribution {
            question: question.to_owned(),
            choices: choices.to_vec(),
            likelihoods,
        })
    }
}

/// Splits text into word and punctuation tokens, the way the mock embedders count length.
pub fn mock_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = None;
        for (i, c) in chunk.char_indices() {
            if c.is_alphanumeric() {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&chunk[s..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&chunk[s..]);
        }
    }
    out
}

fn truncate_text(text: &str, limit: usize) -> (String, bool) {
    let tokens = mock_tokens(text);
    let truncated = tokens.len() > limit;
    (tokens[..tokens.len().min(limit)].join(" "), truncated)
}

/// Unit basis vectors chosen by hashing the (truncated) content.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 64 }
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, input: &EmbedInput, limit: usize) -> Result<EmbeddingVector, BackendError> {
        let (content, truncated) = match input {
            EmbedInput::Text(t) => truncate_text(t, limit),
            EmbedInput::Image(img) => (img.id.clone(), false),
        };
        let digest = Sha256::digest(content.as_bytes());
        let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut values = vec![0.0; self.dim];
        values[(h % self.dim as u64) as usize] = 1.0;
        Ok(EmbeddingVector {
            values,
            modality: input.modality(),
            truncated,
        })
    }
}

/// Fixed vectors keyed by truncated text and by image id.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct TableEmbedder {
    #[serde(default)]
    pub text: HashMap<String, Vec<f64>>,
    #[serde(default)]
    pub image: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        read_json(path)
    }
}

impl Embedder for TableEmbedder {
    fn embed(&self, input: &EmbedInput, limit: usize) -> Result<EmbeddingVector, BackendError> {
        let (values, truncated) = match input {
            EmbedInput::Text(t) => {
                let (cut, truncated) = truncate_text(t, limit);
                let v = self
                    .text
                    .get(t)
                    .or_else(|| self.text.get(&cut))
                    .ok_or_else(|| {
                        BackendError::MissingFixture(format!("text embedding for {t:?}"))
                    })?;
                (v.clone(), truncated)
            }
            EmbedInput::Image(img) => (
                self.image
                    .get(&img.id)
                    .ok_or_else(|| {
                        BackendError::MissingFixture(format!("image embedding for {:?}", img.id))
                    })?
                    .clone(),
                false,
            ),
        };
        Ok(EmbeddingVector {
            values,
            modality: match input {
                EmbedInput::Text(_) => Modality::Text,
                EmbedInput::Image(_) => Modality::Image,
            },
            truncated,
        })
    }
}
