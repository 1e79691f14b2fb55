//! Record/replay fixture store.
//!
//! Each line of a fixture file is `{key, capability, request, response}`.
//! The key is the sha256 of the capability name and the request parts, so
//! lookups do not depend on how the request happens to be serialized.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{
    BackendError, EmbedInput, Embedder, EmbeddingVector, GenRequest, NliJudgement, NliScorer,
    TextGenerator, VqaDistribution, VqaModel,
};
use crate::records::ImageRef;

pub fn fixture_key(capability: &str, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(capability.as_bytes());
    for p in parts {
        h.update([0x1f]);
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixtureEntry {
    key: String,
    capability: String,
    request: Value,
    response: Value,
}

/// In-memory index over a JSONL fixture file, with append support.
#[derive(Debug)]
pub struct FixtureLog {
    path: PathBuf,
    entries: Mutex<HashMap<String, Value>>,
}

impl FixtureLog {
    /// Opens a fixture file. A missing file is treated as empty.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path)
                .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line =
                    line.map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| {
                    BackendError::Config(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                entries.insert(entry.key, entry.response);
            }
        }
        Ok(FixtureLog {
            path: path.to_owned(),
            entries: Mutex::new(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(key)
            .cloned()
    }

    pub fn append(
        &self,
        key: &str,
        capability: &str,
        request: Value,
        response: Value,
    ) -> Result<(), BackendError> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        if entries.contains_key(key) {
            return Ok(());
        }
        let entry = FixtureEntry {
            key: key.to_owned(),
            capability: capability.to_owned(),
            request,
            response: response.clone(),
        };
        let line = serde_json::to_string(&entry).expect("fixture entries serialize");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", self.path.display())))?;
        writeln!(file, "{line}")
            .map_err(|e| BackendError::Config(format!("{}: {e}", self.path.display())))?;
        entries.insert(key.to_owned(), response);
        Ok(())
    }
}

/// Serves responses from a fixture log. With an inner backend, misses are
/// forwarded and the answer is appended to the log; without one, a miss is
/// a `MissingFixture` error.
pub struct Recorded<B> {
    log: Arc<FixtureLog>,
    inner: Option<B>,
}

impl<B> Recorded<B> {
    pub fn replay(log: Arc<FixtureLog>) -> Self {
        Recorded { log, inner: None }
    }

    pub fn recording(log: Arc<FixtureLog>, inner: B) -> Self {
        Recorded {
            log,
            inner: Some(inner),
        }
    }

    fn lookup<T, F>(
        &self,
        capability: &str,
        parts: &[&str],
        request: Value,
        call: F,
    ) -> Result<T, BackendError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&B) -> Result<T, BackendError>,
    {
        let key = fixture_key(capability, parts);
        if let Some(v) = self.log.get(&key) {
            return serde_json::from_value(v)
                .map_err(|e| BackendError::InvalidResponse(format!("fixture {key}: {e}")));
        }
        let inner = self
            .inner
            .as_ref()
            .ok_or_else(|| BackendError::MissingFixture(format!("{capability} request {key}")))?;
        let out = call(inner)?;
        let response = serde_json::to_value(&out).expect("responses serialize");
        self.log.append(&key, capability, request, response)?;
        Ok(out)
    }
}

impl<B: TextGenerator> TextGenerator for Recorded<B> {
    fn generate(&self, req: &GenRequest) -> Result<String, BackendError> {
        let sample = req.sample.to_string();
        self.lookup(
            "generation",
            &[&req.template_id, &req.filled_prompt, &sample],
            serde_json::to_value(req).expect("request serializes"),
            |b| b.generate(req),
        )
    }
}

impl<B: NliScorer> NliScorer for Recorded<B> {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliJudgement, BackendError> {
        self.lookup(
            "nli",
            &[premise, hypothesis],
            serde_json::json!({"premise": premise, "hypothesis": hypothesis}),
            |b| b.nli_score(premise, hypothesis),
        )
    }
}

impl<B: VqaModel> VqaModel for Recorded<B> {
    fn vqa_answer(
        &self,
        image: &ImageRef,
        question: &str,
        choices: &[String],
    ) -> Result<VqaDistribution, BackendError> {
        let joined = choices.join("\u{1e}");
        self.lookup(
            "vqa",
            &[&image.id, question, &joined],
            serde_json::json!({"image": image, "question": question, "choices": choices}),
            |b| b.vqa_answer(image, question, choices),
        )
    }
}

impl<B: Embedder> Embedder for Recorded<B> {
    fn embed(&self, input: &EmbedInput, limit: usize) -> Result<EmbeddingVector, BackendError> {
        let limit_s = limit.to_string();
        let (kind, content) = match input {
            EmbedInput::Text(t) => ("text", t.as_str()),
            EmbedInput::Image(img) => ("image", img.id.as_str()),
        };
        self.lookup(
            "embedding",
            &[kind, content, &limit_s],
            serde_json::json!({"input": input, "limit": limit}),
            |b| b.embed(input, limit),
        )
    }
}
