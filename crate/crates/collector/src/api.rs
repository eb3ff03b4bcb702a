//! HTTP control API and live server-sent event stream.

use std::convert::Infallible;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::error::CollectorError;
use crate::service::{AnnotateRequest, Collector, StartRequest, StreamEvent};

pub fn router(collector: Collector) -> Router {
    Router::new()
        .route("/session/start", post(start))
        .route("/session/{id}/annotate", post(annotate))
        .route("/session/{id}/stop", post(stop))
        .route("/status", get(status))
        .route("/stream", get(live_stream))
        .with_state(collector)
}

pub struct ApiError(CollectorError);

impl From<CollectorError> for ApiError {
    fn from(e: CollectorError) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(CollectorError::Core(cabin_core::Error::Validation(e.body_text())))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match &self.0 {
            CollectorError::State(_) => StatusCode::CONFLICT,
            CollectorError::NotFound(_) => StatusCode::NOT_FOUND,
            CollectorError::Config(_) => StatusCode::BAD_REQUEST,
            CollectorError::Core(cabin_core::Error::Validation(_) | cabin_core::Error::Schema(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            CollectorError::Transport(_) => StatusCode::BAD_GATEWAY,
            CollectorError::Core(_) | CollectorError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "error": self.0.kind(), "message": self.0.to_string() });
        (code, Json(body)).into_response()
    }
}

async fn start(State(c): State<Collector>, body: Option<Json<serde_json::Value>>) -> Result<impl IntoResponse, ApiError> {
    let req: StartRequest = match body {
        Some(Json(v)) => serde_json::from_value(v).map_err(|e| CollectorError::Core(cabin_core::Error::Validation(e.to_string())))?,
        None => StartRequest::default(),
    };
    let session_id = c.start_session(req).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session_id }))))
}

async fn annotate(
    State(c): State<Collector>,
    Path(id): Path<String>,
    body: Result<Json<AnnotateRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let annotation = c.annotate(&id, req).await?;
    Ok(Json(annotation))
}

async fn stop(State(c): State<Collector>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(c.stop_session(&id).await?))
}

async fn status(State(c): State<Collector>) -> impl IntoResponse {
    Json(c.status())
}

/// One initial status event, then every event from connection time onward.
/// A consumer that falls behind the broadcast buffer is disconnected.
pub fn event_stream(c: &Collector) -> impl Stream<Item = StreamEvent> + Send + 'static {
    let rx = c.subscribe();
    let initial = StreamEvent::Status(Box::new(c.status()));
    let rest = stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(event) => Some((event, rx)),
            Err(RecvError::Lagged(n)) => {
                tracing::warn!(missed = n, "live stream consumer too slow, disconnecting");
                None
            }
            Err(RecvError::Closed) => None,
        }
    });
    futures::StreamExt::chain(stream::iter([initial]), rest)
}

async fn live_stream(State(c): State<Collector>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let events = futures::StreamExt::map(event_stream(&c), |e| Ok(Event::default().event(e.name()).data(e.data_json())));
    Sse::new(events).keep_alive(KeepAlive::default())
}
