#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use phishbowl::anonymizer::MockAnonymizer;
use phishbowl::client::ChatClient;
use phishbowl::gpt_analyzer::HeuristicVerdictClient;
use phishbowl::ocr_extract::OcrConfig;
use phishbowl::platform::{Clients, ManualClock, PipelineSettings, Platform};
use phishbowl::trend_alerts::TrendTracker;
use phishbowl::vector_bowl::{HashedEmbedder, PhishBowl, DEFAULT_HASHED_DIMENSION};
use phishbowl_server::api;

pub fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 4, 7, 8, 30, 0).unwrap()
}

pub struct Harness {
    pub platform: Arc<Platform>,
    pub clock: Arc<ManualClock>,
    pub router: Router,
}

/// In-memory platform with the hashed embedder, mock anonymizer and `analyst`.
pub fn harness_with(analyst: Arc<dyn ChatClient>, settings: PipelineSettings) -> Harness {
    let clock = Arc::new(ManualClock::new(start()));
    let platform = Arc::new(
        Platform::new(
            settings,
            OcrConfig::default(),
            PhishBowl::in_memory(DEFAULT_HASHED_DIMENSION),
            TrendTracker::new(settings.trend).unwrap(),
            Clients {
                anonymizer: Arc::new(MockAnonymizer),
                analyst,
                embedder: Arc::new(HashedEmbedder::default()),
                clock: clock.clone(),
            },
        )
        .unwrap(),
    );
    let router = api::router(platform.clone());
    Harness {
        platform,
        clock,
        router,
    }
}

pub fn harness() -> Harness {
    harness_with(Arc::new(HeuristicVerdictClient), PipelineSettings::default())
}

impl Harness {
    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut builder = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                builder = builder.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let response = self.router.clone().oneshot(builder.body(body).unwrap()).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }
}

pub fn ocr_fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/ocr")
        .join(name);
    std::fs::read_to_string(path).unwrap()
}
