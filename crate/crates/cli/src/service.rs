//! Read-only HTTP service over one loaded snapshot.
//!
//! | route | query | document |
//! |---|---|---|
//! | `GET /healthz` | | `ok` |
//! | `GET /apps` | | app list |
//! | `GET /apps/{id}/graph` | `format=structured\|dot` | app subgraph |
//! | `GET /apps/{id}/sle` | `layer=` (required) | layer SLE windows |
//! | `GET /apps/{id}/rca` | `from=`, `to=` | RCA report |
//! | `GET /apps/{id}/paths` | `src=`, `dst=` (ranks, required) | path traces and volumes |
//!
//! Errors are `{"error": <category>, "message": ..}` with 404 for unknown
//! apps and 400 for bad queries. Anything else is a 500 carrying only the
//! category and an incident id; the detail goes to stderr.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::Deserialize;
use serde_json::json;

use assure_core::depgraph::GraphFormat;
use assure_core::ErrorCategory;

use crate::docs::{parse_format, parse_layer, parse_time, AppError, Document, Workspace};

type RcaKey = (String, Option<String>, Option<String>);

struct Shared {
    workspace: Workspace,
    rca_cache: Mutex<HashMap<RcaKey, Document>>,
    incidents: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(workspace: Workspace) -> Self {
        AppState(Arc::new(Shared { workspace, rca_cache: Mutex::new(HashMap::new()), incidents: AtomicU64::new(0) }))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/apps", get(apps))
        .route("/apps/{id}/graph", get(graph))
        .route("/apps/{id}/sle", get(sle))
        .route("/apps/{id}/rca", get(rca))
        .route("/apps/{id}/paths", get(paths))
        .with_state(state)
}

pub async fn serve(state: AppState, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn status_of(category: ErrorCategory) -> StatusCode {
    match category {
        ErrorCategory::UnknownApp | ErrorCategory::NotFound => StatusCode::NOT_FOUND,
        ErrorCategory::Usage | ErrorCategory::InvalidSpec => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn respond(state: &AppState, result: Result<Document, AppError>) -> Response {
    match result {
        Ok(doc) => ([(header::CONTENT_TYPE, doc.content_type())], doc.render()).into_response(),
        Err(e) => {
            let status = status_of(e.category);
            let body = if status == StatusCode::INTERNAL_SERVER_ERROR {
                let id = format!("inc-{:06}", state.0.incidents.fetch_add(1, Ordering::Relaxed) + 1);
                eprintln!("{id}: {e}");
                json!({ "error": e.category.as_str(), "id": id })
            } else {
                json!({ "error": e.category.as_str(), "message": e.message })
            };
            (status, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
        }
    }
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, AppError> {
    q.map(|Query(v)| v).map_err(|e| AppError::usage(e.body_text()))
}

/// Runs blocking analysis off the async workers.
async fn compute<F>(state: AppState, f: F) -> Response
where
    F: FnOnce(&Shared) -> Result<Document, AppError> + Send + 'static,
{
    let s = state.clone();
    let result = tokio::task::spawn_blocking(move || f(&s.0))
        .await
        .unwrap_or_else(|e| Err(AppError::new(ErrorCategory::Internal, format!("worker failed: {e}"))));
    respond(&state, result)
}

async fn apps(State(state): State<AppState>) -> Response {
    let doc = state.0.workspace.apps();
    respond(&state, Ok(doc))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphQuery {
    format: Option<String>,
}

async fn graph(State(state): State<AppState>, Path(id): Path<String>, q: Result<Query<GraphQuery>, QueryRejection>) -> Response {
    compute(state, move |s| {
        let format = match query(q)?.format {
            Some(f) => parse_format(&f)?,
            None => GraphFormat::Structured,
        };
        s.workspace.graph(Some(&id), format)
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SleQuery {
    layer: String,
}

async fn sle(State(state): State<AppState>, Path(id): Path<String>, q: Result<Query<SleQuery>, QueryRejection>) -> Response {
    compute(state, move |s| {
        let layer = parse_layer(&query(q)?.layer)?;
        s.workspace.sle(layer, Some(&id))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RcaQuery {
    from: Option<String>,
    to: Option<String>,
}

async fn rca(State(state): State<AppState>, Path(id): Path<String>, q: Result<Query<RcaQuery>, QueryRejection>) -> Response {
    compute(state, move |s| {
        let q = query(q)?;
        let from = q.from.as_deref().map(parse_time).transpose()?;
        let to = q.to.as_deref().map(parse_time).transpose()?;
        let key = (id, q.from, q.to);
        if let Some(doc) = s.rca_cache.lock().expect("cache lock").get(&key) {
            return Ok(doc.clone());
        }
        let doc = s.workspace.rca(&key.0, from, to)?;
        s.rca_cache.lock().expect("cache lock").insert(key, doc.clone());
        Ok(doc)
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsQuery {
    src: u32,
    dst: u32,
    format: Option<String>,
}

async fn paths(State(state): State<AppState>, Path(id): Path<String>, q: Result<Query<PathsQuery>, QueryRejection>) -> Response {
    compute(state, move |s| {
        let q = query(q)?;
        let format = match q.format {
            Some(f) => parse_format(&f)?,
            None => GraphFormat::Structured,
        };
        s.workspace.paths(&id, q.src, q.dst, format)
    })
    .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use assure_core::config::Config;
    use assure_core::model::{TelemetrySnapshot, Topology};

    #[tokio::test]
    async fn internal_errors_hide_detail() {
        let state = AppState::new(Workspace::new(TelemetrySnapshot::empty(Topology::default()), &Config::default()));
        let resp = respond(&state, Err(AppError::new(ErrorCategory::Inconsistent, "qp 7 secret detail")));
        assert_eq!(resp.status(), StatusCode::INTERNAL_SERVER_ERROR);
        let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v, json!({ "error": "inconsistent", "id": "inc-000001" }));
    }
}
