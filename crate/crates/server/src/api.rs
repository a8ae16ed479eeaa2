//! JSON-over-HTTP endpoints.
//!
//! | method | path               | body / query                                  |
//! |--------|--------------------|-----------------------------------------------|
//! | POST   | `/api/classify`    | `{sender?, subject?, body}` or `{ocr_table}`  |
//! | POST   | `/api/submit`      | `{sender?, subject?, body}`                   |
//! | GET    | `/api/search`      | `?q=...&n=10`                                 |
//! | GET    | `/api/trends`      |                                               |
//! | GET    | `/api/alerts`      |                                               |
//! | GET    | `/api/emails/{id}` |                                               |
//!
//! Failures are `{stage, message}` objects.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use phishbowl::email_model::EmailContent;
use phishbowl::platform::{ClassifyInput, PipelineError, Platform, Stage};
use phishbowl::vector_bowl::RecordId;

pub const DEFAULT_SEARCH_RESULTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub stage: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, stage: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                stage: stage.into(),
                message: message.into(),
            },
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match e.stage {
            Stage::Validation => StatusCode::BAD_REQUEST,
            Stage::Ocr | Stage::Convert => StatusCode::UNPROCESSABLE_ENTITY,
            Stage::Anonymize | Stage::Verdict | Stage::Embed => StatusCode::BAD_GATEWAY,
            Stage::Bowl | Stage::Ensemble | Stage::Trend => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.stage.to_string(), e.message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::validation(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::validation(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Either text fields or an OCR word table, never both.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    pub sender: Option<String>,
    pub subject: Option<String>,
    pub body: Option<String>,
    pub ocr_table: Option<String>,
}

impl ClassifyRequest {
    pub fn into_input(self) -> Result<ClassifyInput, ApiError> {
        let has_text = self.sender.is_some() || self.subject.is_some() || self.body.is_some();
        match (has_text, self.ocr_table) {
            (true, Some(_)) => Err(ApiError::validation(
                "send either text fields or ocr_table, not both",
            )),
            (false, Some(table)) => Ok(ClassifyInput::OcrTable(table)),
            (_, None) => {
                let body = self
                    .body
                    .ok_or_else(|| ApiError::validation("body or ocr_table is required"))?;
                Ok(ClassifyInput::Text(EmailContent {
                    sender: self.sender,
                    subject: self.subject,
                    body,
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub sender: Option<String>,
    pub subject: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SearchQuery {
    pub q: String,
    pub n: Option<usize>,
}

type Shared = Arc<Platform>;

pub fn router(platform: Shared) -> Router {
    Router::new()
        .route("/api/classify", post(classify))
        .route("/api/submit", post(submit))
        .route("/api/search", get(search))
        .route("/api/trends", get(trends))
        .route("/api/alerts", get(alerts))
        .route("/api/emails/{id}", get(email))
        .with_state(platform)
}

/// Runs pipeline work off the async executor.
async fn blocking<T, F>(platform: Shared, work: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Platform) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || work(&platform))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn classify(
    State(platform): State<Shared>,
    request: Result<Json<ClassifyRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let input = request?.0.into_input()?;
    let outcome = blocking(platform, move |p| Ok(p.classify(input)?)).await?;
    Ok(Json(outcome).into_response())
}

async fn submit(
    State(platform): State<Shared>,
    request: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = request?;
    let content = EmailContent {
        sender: req.sender,
        subject: req.subject,
        body: req.body,
    };
    let outcome = blocking(platform, move |p| Ok(p.submit(&content)?)).await?;
    Ok((StatusCode::CREATED, Json(outcome)).into_response())
}

async fn search(
    State(platform): State<Shared>,
    query: Result<Query<SearchQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let n = q.n.unwrap_or(DEFAULT_SEARCH_RESULTS);
    let results = blocking(platform, move |p| Ok(p.search(&q.q, n)?)).await?;
    Ok(Json(results).into_response())
}

async fn trends(State(platform): State<Shared>) -> Result<Response, ApiError> {
    let groups = blocking(platform, |p| Ok(p.trends())).await?;
    Ok(Json(groups).into_response())
}

async fn alerts(State(platform): State<Shared>) -> Result<Response, ApiError> {
    let alerts = blocking(platform, |p| Ok(p.alerts())).await?;
    Ok(Json(alerts).into_response())
}

async fn email(State(platform): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::validation(format!("email id {id:?} is not a number")))?;
    let view = blocking(platform, move |p| {
        p.email(RecordId(id))
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "lookup", format!("no email with id {id}")))
    })
    .await?;
    Ok(Json(view).into_response())
}

/// Serves `router` on `addr` until Ctrl-C.
pub async fn serve(platform: Shared, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, router(platform))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
