use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};
use ureq::Agent;

use super::{
    BackendError, EmbedInput, Embedder, EmbeddingVector, GenRequest, NliJudgement, NliScorer,
    TextGenerator, VqaDistribution, VqaModel,
};
use crate::records::ImageRef;

/// JSON-over-HTTP client for a model server exposing `/generate`, `/nli`,
/// `/vqa` and `/embed`.
///
/// Transport failures, 5xx and 429 responses are retried with exponential
/// backoff; any other non-2xx status is returned as `Refused` at once.
pub struct HttpBackend {
    base_url: String,
    agent: Agent,
    token: Option<String>,
    retries: u32,
    backoff: Duration,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Deserialize)]
struct NliResponse {
    consistency: f64,
}

#[derive(Deserialize)]
struct VqaResponse {
    #[serde(default)]
    choices: Option<Vec<String>>,
    likelihoods: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    values: Vec<f64>,
    #[serde(default)]
    truncated: bool,
}

impl HttpBackend {
    pub fn new(
        base_url: &str,
        token: Option<String>,
        retries: u32,
        backoff: Duration,
        timeout: Duration,
    ) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_owned(),
            agent,
            token,
            retries,
            backoff,
        }
    }

    fn post<T: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Value,
    ) -> Result<T, BackendError> {
        let url = format!("{}{path}", self.base_url);
        let payload = serde_json::to_string(body).expect("request bodies serialize");
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let wait = self.backoff * 2u32.saturating_pow(attempt - 2);
                debug!(%url, attempt, ?wait, "retrying");
                std::thread::sleep(wait);
            }
            let mut req = self
                .agent
                .post(&url)
                .header("content-type", "application/json");
            if let Some(t) = &self.token {
                req = req.header("authorization", &format!("Bearer {t}"));
            }
            match req.send(payload.as_str()) {
                Err(e) => {
                    warn!(%url, attempt, error = %e, "transport error");
                    last = e.to_string();
                }
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| BackendError::InvalidResponse(format!("reading body: {e}")));
                    if (200..300).contains(&status) {
                        let text = text?;
                        return serde_json::from_str(&text)
                            .map_err(|e| BackendError::InvalidResponse(format!("{url}: {e}")));
                    }
                    let text = text.unwrap_or_default();
                    if status >= 500 || status == 429 {
                        warn!(%url, attempt, status, "retryable status");
                        last = format!("status {status}: {text}");
                    } else {
                        return Err(BackendError::Refused(format!("status {status}: {text}")));
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last,
        })
    }
}

impl TextGenerator for HttpBackend {
    fn generate(&self, req: &GenRequest) -> Result<String, BackendError> {
        let body = serde_json::to_value(req).expect("request serializes");
        let r: GenerateResponse = self.post("/generate", &body)?;
        Ok(r.text)
    }
}

impl NliScorer for HttpBackend {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliJudgement, BackendError> {
        let r: NliResponse = self.post(
            "/nli",
            &json!({"premise": premise, "hypothesis": hypothesis}),
        )?;
        Ok(NliJudgement {
            premise: premise.to_owned(),
            hypothesis: hypothesis.to_owned(),
            consistency: r.consistency,
        })
    }
}

impl VqaModel for HttpBackend {
    fn vqa_answer(
        &self,
        image: &ImageRef,
        question: &str,
        choices: &[String],
    ) -> Result<VqaDistribution, BackendError> {
        let r: VqaResponse = self.post(
            "/vqa",
            &json!({"image": image, "question": question, "choices": choices}),
        )?;
        Ok(VqaDistribution {
            question: question.to_owned(),
            choices: r.choices.unwrap_or_else(|| choices.to_vec()),
            likelihoods: r.likelihoods,
        })
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, input: &EmbedInput, limit: usize) -> Result<EmbeddingVector, BackendError> {
        let r: EmbedResponse = self.post("/embed", &json!({"input": input, "limit": limit}))?;
        Ok(EmbeddingVector {
            values: r.values,
            modality: input.modality(),
            truncated: r.truncated,
        })
    }
}
