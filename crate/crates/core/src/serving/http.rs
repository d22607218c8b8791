use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use super::nrt::{CatalogEvent, Clock, NrtPipeline, Window, WindowBuffer};
use crate::error::Result;

const CHANNEL_CAPACITY: usize = 4096;

#[derive(Clone)]
struct AppState {
    pipeline: Arc<NrtPipeline>,
    events: mpsc::Sender<CatalogEvent>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EventBody {
    One(CatalogEvent),
    Many(Vec<CatalogEvent>),
}

#[derive(Debug, Deserialize)]
struct ScoreQuery {
    item_id: u64,
    keyphrase_id: u64,
}

#[derive(Debug, Serialize)]
struct Health<'a> {
    status: &'static str,
    model_version: &'a str,
    records: usize,
}

async fn post_events(State(state): State<AppState>, Json(body): Json<EventBody>) -> Response {
    let events = match body {
        EventBody::One(e) => vec![e],
        EventBody::Many(v) => v,
    };
    let n = events.len();
    for e in events {
        if state.events.send(e).await.is_err() {
            return (StatusCode::SERVICE_UNAVAILABLE, "event pipeline stopped").into_response();
        }
    }
    (StatusCode::ACCEPTED, Json(serde_json::json!({ "accepted": n }))).into_response()
}

async fn get_score(State(state): State<AppState>, Query(q): Query<ScoreQuery>) -> Response {
    match state.pipeline.get(q.item_id, q.keyphrase_id) {
        Some(r) => Json(r).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn healthz(State(state): State<AppState>) -> Response {
    Json(Health {
        status: "ok",
        model_version: state.pipeline.model_version(),
        records: state.pipeline.store_len(),
    })
    .into_response()
}

async fn windows(State(state): State<AppState>) -> Response {
    Json(serde_json::json!({
        "windows": state.pipeline.reports(),
        "dead_letters": state.pipeline.dead_letters(),
    }))
    .into_response()
}

async fn apply(pipeline: &Arc<NrtPipeline>, window: Window) {
    let p = Arc::clone(pipeline);
    match tokio::task::spawn_blocking(move || p.process_window(&window)).await {
        Ok(Ok(r)) => tracing::debug!(?r, "window applied"),
        Ok(Err(e)) => tracing::error!(error = %e, "window failed"),
        Err(e) => tracing::error!(error = %e, "window task panicked"),
    }
}

async fn run_windows(
    pipeline: Arc<NrtPipeline>,
    mut rx: mpsc::Receiver<CatalogEvent>,
    mut buffer: WindowBuffer,
    clock: Arc<dyn Clock>,
) {
    let tick = Duration::from_millis((buffer.window_ms() / 4).max(1));
    let mut ticker = tokio::time::interval(tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Some(ev) => {
                    if let Some(w) = buffer.push(ev, clock.now_ms()) {
                        apply(&pipeline, w).await;
                    }
                }
                None => {
                    if let Some(w) = buffer.flush() {
                        apply(&pipeline, w).await;
                    }
                    return;
                }
            },
            _ = ticker.tick() => {
                if let Some(w) = buffer.poll(clock.now_ms()) {
                    apply(&pipeline, w).await;
                }
            }
        }
    }
}

/// Builds the HTTP router and spawns the windowing task that feeds
/// `pipeline`. The task ends once the router (and every clone of its
/// state) is dropped.
pub fn service(pipeline: Arc<NrtPipeline>, window_ms: u64, clock: Arc<dyn Clock>) -> Result<(Router, JoinHandle<()>)> {
    let buffer = WindowBuffer::new(window_ms)?;
    let (tx, rx) = mpsc::channel(CHANNEL_CAPACITY);
    let handle = tokio::spawn(run_windows(Arc::clone(&pipeline), rx, buffer, clock));
    let router = Router::new()
        .route("/events", post(post_events))
        .route("/scores", get(get_score))
        .route("/healthz", get(healthz))
        .route("/windows", get(windows))
        .with_state(AppState { pipeline, events: tx });
    Ok((router, handle))
}
