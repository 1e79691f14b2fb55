use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

fn default_bind() -> String {
    "127.0.0.1:8080".to_owned()
}

fn default_lease_secs() -> u64 {
    1800
}

/// The `[service]` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Append-only JSONL file holding every campaign and submission.
    pub event_log: PathBuf,
    /// Directory served under `/media/`.
    #[serde(default)]
    pub media_dir: Option<PathBuf>,
    /// Bearer token allowed to create campaigns and export results.
    pub admin_token: String,
    /// Rater id to bearer token.
    #[serde(default)]
    pub raters: BTreeMap<String, String>,
    /// How long a handed-out task stays reserved for its rater.
    #[serde(default = "default_lease_secs")]
    pub lease_secs: u64,
}

impl ServiceConfig {
    pub fn lease(&self) -> Duration {
        Duration::from_secs(self.lease_secs)
    }

    /// Makes relative paths relative to `base` (normally the config file's directory).
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.event_log);
        if let Some(dir) = self.media_dir.as_mut() {
            fix(dir);
        }
        self
    }
}
