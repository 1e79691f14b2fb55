use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BackendError, ConstantNli, EchoNli, Embedder, FixtureLog, HashEmbedder, HttpBackend, Limited,
    NliScorer, Recorded, ScriptedGenerator, TableEmbedder, TableNli, TableVqa, TextGenerator,
    UniformVqa, VqaModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// `mock:...`, `record:<path>` or an `http(s)://` base URL.
    pub uri: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// With a `record:` uri, misses are sent here and appended to the fixture file.
    #[serde(default)]
    pub record_inner: Option<String>,
}

fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    8
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_timeout_secs() -> u64 {
    60
}

impl BackendConfig {
    pub fn new(uri: impl Into<String>) -> Self {
        BackendConfig {
            uri: uri.into(),
            auth_token_env: None,
            retries: default_retries(),
            parallelism: default_parallelism(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
            record_inner: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub generation: Option<BackendConfig>,
    pub nli: Option<BackendConfig>,
    pub vqa: Option<BackendConfig>,
    pub embedding: Option<BackendConfig>,
}

/// The set of live backends built from a [`BackendsConfig`].
#[derive(Clone, Default)]
pub struct Backends {
    pub generation: Option<Arc<dyn TextGenerator>>,
    pub nli: Option<Arc<dyn NliScorer>>,
    pub vqa: Option<Arc<dyn VqaModel>>,
    pub embedding: Option<Arc<dyn Embedder>>,
}

fn missing(what: &str) -> BackendError {
    BackendError::Config(format!("no {what} backend configured"))
}

impl Backends {
    /// Builds every configured backend. Relative mock and fixture paths are
    /// resolved against `base_dir`.
    pub fn build(cfg: &BackendsConfig, base_dir: &Path) -> Result<Self, BackendError> {
        Ok(Backends {
            generation: cfg
                .generation
                .as_ref()
                .map(|c| build_generator(c, base_dir))
                .transpose()?,
            nli: cfg
                .nli
                .as_ref()
                .map(|c| build_nli(c, base_dir))
                .transpose()?,
            vqa: cfg
                .vqa
                .as_ref()
                .map(|c| build_vqa(c, base_dir))
                .transpose()?,
            embedding: cfg
                .embedding
                .as_ref()
                .map(|c| build_embedder(c, base_dir))
                .transpose()?,
        })
    }

    pub fn generation(&self) -> Result<&dyn TextGenerator, BackendError> {
        self.generation
            .as_deref()
            .ok_or_else(|| missing("generation"))
    }

    pub fn nli(&self) -> Result<&dyn NliScorer, BackendError> {
        self.nli.as_deref().ok_or_else(|| missing("nli"))
    }

    pub fn vqa(&self) -> Result<&dyn VqaModel, BackendError> {
        self.vqa.as_deref().ok_or_else(|| missing("vqa"))
    }

    pub fn embedding(&self) -> Result<&dyn Embedder, BackendError> {
        self.embedding
            .as_deref()
            .ok_or_else(|| missing("embedding"))
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

fn http(cfg: &BackendConfig) -> Result<HttpBackend, BackendError> {
    let token =
        match &cfg.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
    Ok(HttpBackend::new(
        &cfg.uri,
        token,
        cfg.retries,
        Duration::from_millis(cfg.backoff_ms),
        Duration::from_secs(cfg.timeout_secs),
    ))
}

fn is_http(uri: &str) -> bool {
    uri.starts_with("http://") || uri.starts_with("https://")
}

fn unsupported(capability: &str, uri: &str) -> BackendError {
    BackendError::Config(format!("unsupported {capability} backend uri {uri:?}"))
}

/// Wraps `inner` in a fixture store when the uri is `record:<path>`.
fn recorded<T: ?Sized>(
    cfg: &BackendConfig,
    base: &Path,
    path: &str,
    build_inner: impl Fn(&BackendConfig, &Path) -> Result<Arc<T>, BackendError>,
) -> Result<Recorded<Arc<T>>, BackendError> {
    let log = Arc::new(FixtureLog::open(&resolve(base, path))?);
    match &cfg.record_inner {
        None => Ok(Recorded::replay(log)),
        Some(inner_uri) => {
            if inner_uri.starts_with("record:") {
                return Err(BackendError::Config(
                    "record_inner cannot itself be a record: uri".into(),
                ));
            }
            let inner_cfg = BackendConfig {
                uri: inner_uri.clone(),
                record_inner: None,
                ..cfg.clone()
            };
            Ok(Recorded::recording(log, build_inner(&inner_cfg, base)?))
        }
    }
}

pub fn build_generator(
    cfg: &BackendConfig,
    base: &Path,
) -> Result<Arc<dyn TextGenerator>, BackendError> {
    let uri = cfg.uri.as_str();
    let n = cfg.parallelism;
    Ok(if let Some(path) = uri.strip_prefix("mock:script:") {
        Arc::new(ScriptedGenerator::from_file(&resolve(base, path))?)
    } else if let Some(path) = uri.strip_prefix("record:") {
        Arc::new(recorded(cfg, base, path, build_generator)?)
    } else if is_http(uri) {
        Arc::new(Limited::new(http(cfg)?, n))
    } else {
        return Err(unsupported("generation", uri));
    })
}

pub fn build_nli(cfg: &BackendConfig, base: &Path) -> Result<Arc<dyn NliScorer>, BackendError> {
    let uri = cfg.uri.as_str();
    Ok(if uri == "mock:echo" {
        Arc::new(EchoNli)
    } else if let Some(v) = uri.strip_prefix("mock:const:") {
        let v: f64 = v
            .parse()
            .map_err(|_| BackendError::Config(format!("bad constant in {uri:?}")))?;
        Arc::new(ConstantNli(v))
    } else if let Some(path) = uri.strip_prefix("mock:table:") {
        Arc::new(TableNli::from_file(&resolve(base, path))?)
    } else if let Some(path) = uri.strip_prefix("record:") {
        Arc::new(recorded(cfg, base, path, build_nli)?)
    } else if is_http(uri) {
        Arc::new(Limited::new(http(cfg)?, cfg.parallelism))
    } else {
        return Err(unsupported("nli", uri));
    })
}

pub fn build_vqa(cfg: &BackendConfig, base: &Path) -> Result<Arc<dyn VqaModel>, BackendError> {
    let uri = cfg.uri.as_str();
    Ok(if uri == "mock:uniform" {
        Arc::new(UniformVqa)
    } else if let Some(path) = uri.strip_prefix("mock:table:") {
        Arc::new(TableVqa::from_file(&resolve(base, path))?)
    } else if let Some(path) = uri.strip_prefix("record:") {
        Arc::new(recorded(cfg, base, path, build_vqa)?)
    } else if is_http(uri) {
        Arc::new(Limited::new(http(cfg)?, cfg.parallelism))
    } else {
        return Err(unsupported("vqa", uri));
    })
}

pub fn build_embedder(cfg: &BackendConfig, base: &Path) -> Result<Arc<dyn Embedder>, BackendError> {
    let uri = cfg.uri.as_str();
    Ok(if uri == "mock:hash" {
        Arc::new(HashEmbedder::default())
    } else if let Some(dim) = uri.strip_prefix("mock:hash:") {
        let dim: usize = dim
            .parse()
            .ok()
            .filter(|d| *d > 0)
            .ok_or_else(|| BackendError::Config(format!("bad dimension in {uri:?}")))?;
        Arc::new(HashEmbedder { dim })
    } else if let Some(path) = uri.strip_prefix("mock:table:") {
        Arc::new(TableEmbedder::from_file(&resolve(base, path))?)
    } else if let Some(path) = uri.strip_prefix("record:") {
        Arc::new(recorded(cfg, base, path, build_embedder)?)
    } else if is_http(uri) {
        Arc::new(Limited::new(http(cfg)?, cfg.parallelism))
    } else {
        return Err(unsupported("embedding", uri));
    })
}
