use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::config::ServiceConfig;
use crate::store::{CampaignSpec, Store, StoreError};

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    admin_token: Arc<str>,
    /// bearer token -> rater id
    raters: Arc<HashMap<String, String>>,
}

impl AppState {
    pub fn new(store: Arc<Store>, cfg: &ServiceConfig) -> Self {
        AppState {
            store,
            admin_token: cfg.admin_token.as_str().into(),
            raters: Arc::new(
                cfg.raters
                    .iter()
                    .map(|(r, t)| (t.clone(), r.clone()))
                    .collect(),
            ),
        }
    }
}

pub fn router(state: AppState, media_dir: Option<&Path>) -> Router {
    let mut app = Router::new()
        .route("/campaigns", post(create_campaign))
        .route("/campaigns/{id}/export", get(export))
        .route("/campaigns/{id}/progress", get(progress))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{item_id}/submit", post(submit))
        .with_state(state);
    if let Some(dir) = media_dir {
        app = app.nest_service("/media", ServeDir::new(dir));
    }
    app
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            StoreError::UnknownCampaign(_) | StoreError::UnknownItem(_) => {
                (StatusCode::NOT_FOUND, "not_found")
            }
            StoreError::InvalidCampaign(_) => (StatusCode::BAD_REQUEST, "invalid_campaign"),
            StoreError::CampaignExists(_) => (StatusCode::CONFLICT, "campaign_exists"),
            StoreError::Schema(p) => {
                return ApiError {
                    status: StatusCode::UNPROCESSABLE_ENTITY,
                    code: "schema",
                    message,
                    field: Some(p.field.clone()),
                }
            }
            StoreError::PayloadConflict { .. } => (StatusCode::CONFLICT, "payload_conflict"),
            StoreError::OverSubscribed { .. } => (StatusCode::CONFLICT, "over_subscribed"),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                tracing::error!(error = %e, "store failure");
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
        };
        ApiError::new(status, code, message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(f) = self.field {
            body["field"] = Value::String(f);
        }
        (self.status, Json(body)).into_response()
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn unauthorized() -> ApiError {
    ApiError::new(
        StatusCode::UNAUTHORIZED,
        "unauthorized",
        "missing or unknown bearer token",
    )
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    match bearer(headers) {
        Some(t) if t == &*state.admin_token => Ok(()),
        _ => Err(unauthorized()),
    }
}

/// Checks that the bearer token belongs to `rater`.
fn require_rater(state: &AppState, headers: &HeaderMap, rater: &str) -> Result<(), ApiError> {
    let owner = bearer(headers)
        .and_then(|t| state.raters.get(t))
        .ok_or_else(unauthorized)?;
    if owner != rater {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!("token does not belong to rater {rater:?}"),
        ));
    }
    Ok(())
}

async fn create_campaign(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<CampaignSpec>, JsonRejection>,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let Json(spec) = body?;
    let store = Arc::clone(&state.store);
    let (campaign, created) = tokio::task::spawn_blocking(move || store.create_campaign(spec))
        .await
        .expect("store task panicked")?;
    let status = if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    let items: Vec<&str> = campaign.items.iter().map(|i| i.item_id.as_str()).collect();
    Ok((
        status,
        Json(json!({ "campaign_id": campaign.id, "items": items, "created": created })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct NextQuery {
    rater: String,
}

async fn next_task(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<NextQuery>,
) -> Result<Response, ApiError> {
    require_rater(&state, &headers, &q.rater)?;
    Ok(match state.store.next_task(&q.rater) {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitBody {
    rater: String,
    payload: Value,
}

async fn submit(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(item_id): UrlPath<String>,
    body: Result<Json<SubmitBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    require_rater(&state, &headers, &body.rater)?;
    let store = Arc::clone(&state.store);
    let ack =
        tokio::task::spawn_blocking(move || store.submit(&item_id, &body.rater, body.payload))
            .await
            .expect("store task panicked")?;
    Ok(Json(ack).into_response())
}

async fn export(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    require_admin(&state, &headers)?;
    let records = state.store.export(&id)?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).expect("records serialize"));
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn progress(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let token = bearer(&headers).ok_or_else(unauthorized)?;
    if token != &*state.admin_token && !state.raters.contains_key(token) {
        return Err(unauthorized());
    }
    Ok(Json(state.store.progress(&id)?).into_response())
}
