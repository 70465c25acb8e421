//! JSON-over-HTTP front end for a [`RagEngine`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{Any, CorsLayer};

use super::{AnswerError, AskOptions, RagEngine};
use crate::error::Error;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskBody {
    pub query: String,
    #[serde(default)]
    pub products: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveBody {
    pub query: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub products: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub index_size: usize,
    pub projection_version: u32,
}

struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidInput(_) | Error::EmptyInput(_) => StatusCode::BAD_REQUEST,
            Error::Transport(_) | Error::FixtureMiss(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            body: json!({ "error": e.to_string() }),
        }
    }
}

impl From<AnswerError> for ApiError {
    fn from(e: AnswerError) -> Self {
        let mut api = ApiError::from(e.error);
        if let Some(partial) = e.partial {
            api.body["partial"] = serde_json::to_value(&*partial).unwrap_or_default();
        }
        api
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: json!({ "error": format!("worker failed: {e}") }),
    }
}

async fn ask(State(engine): State<Arc<RagEngine>>, Json(body): Json<AskBody>) -> Result<Response, ApiError> {
    // Completion is blocking I/O; keep it off the async workers.
    let bundle = tokio::task::spawn_blocking(move || {
        let opts = AskOptions {
            products: body.products,
            k: None,
        };
        engine.answer_with(&body.query, &opts)
    })
    .await
    .map_err(join_error)??;
    Ok(Json(bundle).into_response())
}

async fn retrieve(
    State(engine): State<Arc<RagEngine>>,
    Json(body): Json<RetrieveBody>,
) -> Result<Response, ApiError> {
    if body.k == Some(0) {
        return Err(Error::InvalidInput("k must be positive".into()).into());
    }
    let opts = AskOptions {
        products: body.products,
        k: body.k,
    };
    let retrieval = tokio::task::spawn_blocking(move || engine.retrieve(&body.query, &opts))
        .await
        .map_err(join_error)??;
    Ok(Json(retrieval).into_response())
}

async fn health(State(engine): State<Arc<RagEngine>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        index_size: engine.index().len(),
        projection_version: engine.index().projection_version(),
    })
}

async fn catalog(State(engine): State<Arc<RagEngine>>) -> Json<serde_json::Value> {
    let products: Vec<&str> = engine.catalog().map(|c| c.product_names().collect()).unwrap_or_default();
    Json(json!({ "products": products }))
}

/// CORS for the given UI origins; an empty list allows any origin.
pub fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let parsed: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    if parsed.is_empty() {
        layer.allow_origin(Any)
    } else {
        layer.allow_origin(parsed)
    }
}

pub fn router(engine: Arc<RagEngine>, origins: &[String]) -> Router {
    Router::new()
        .route("/ask", post(ask))
        .route("/retrieve", post(retrieve))
        .route("/health", get(health))
        .route("/catalog", get(catalog))
        .layer(cors(origins))
        .with_state(engine)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<RagEngine>, addr: SocketAddr, origins: &[String]) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine, origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
