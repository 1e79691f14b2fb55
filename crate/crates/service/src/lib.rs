//! HTTP service for collecting human ratings.
//!
//! Campaigns are lists of items (a prompt with one image, or two for
//! side-by-side); raters pull tasks, submit payloads in the annotation
//! schema of `alignkit_core::human`, and the campaign owner exports the
//! accepted ratings as an ordinary annotation file.

mod api;
mod config;
pub mod store;

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use store::{
    Campaign, CampaignSpec, ItemSpec, Progress, Store, StoreError, SubmitAck, Task, TaskQuestion,
};

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

/// Opens the event log and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let store = Arc::new(Store::open(&cfg.event_log, cfg.lease())?);
    let app = router(AppState::new(store, &cfg), cfg.media_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: cfg.bind.clone(),
            source,
        })?;
    tracing::info!(addr = %cfg.bind, "annotation service listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}
