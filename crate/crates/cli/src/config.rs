use std::path::{Path, PathBuf};

use alignkit_core::backends::BackendsConfig;
use alignkit_core::metric::GeckoConfig;
use alignkit_core::records::{read_jsonl, ImageRef};
use alignkit_service::ServiceConfig;
use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::error::{record_error, CliError};

fn default_token_limit() -> usize {
    77
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSettings {
    /// Prompt tokens kept by the embedding baseline.
    #[serde(default = "default_token_limit")]
    pub token_limit: usize,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        EmbeddingSettings {
            token_limit: default_token_limit(),
        }
    }
}

/// The TOML run configuration: `[backends.*]`, `[metric]`, `[embedding]`, `[service]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub metric: GeckoConfig,
    #[serde(default)]
    pub embedding: EmbeddingSettings,
    #[serde(default)]
    pub service: Option<ServiceConfig>,
}

impl RunConfig {
    /// Parses the file and returns it with the directory relative paths resolve against.
    pub fn load(path: &Path) -> Result<(RunConfig, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::input)?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(CliError::input)?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_owned)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, base))
    }
}

/// One line of the image manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub prompt_id: String,
    pub image_id: String,
    pub uri: String,
    pub model_id: String,
}

impl ImageEntry {
    pub fn image(&self) -> ImageRef {
        ImageRef {
            id: self.image_id.clone(),
            uri: self.uri.clone(),
            model_id: self.model_id.clone(),
        }
    }
}

pub(crate) fn load_images(path: &Path) -> Result<Vec<ImageEntry>, CliError> {
    let images: Vec<ImageEntry> = read_jsonl(path).map_err(record_error)?;
    let mut seen = std::collections::HashSet::new();
    for img in &images {
        if !seen.insert((&img.prompt_id, &img.image_id)) {
            return Err(CliError::validation(anyhow::anyhow!(
                "{}: image {} listed twice for prompt {}",
                path.display(),
                img.image_id,
                img.prompt_id
            )));
        }
    }
    Ok(images)
}
