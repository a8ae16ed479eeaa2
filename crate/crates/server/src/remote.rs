//! Blocking adapters for OpenAI-style chat-completion and embedding endpoints.

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use serde::Deserialize;
use serde_json::json;

use phishbowl::client::{ChatClient, ClientError};
use phishbowl::vector_bowl::EmbeddingClient;

fn http_client(timeout: Duration) -> Result<Client, ClientError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ClientError(format!("building HTTP client: {e}")))
}

fn authorize(request: RequestBuilder, token: Option<&str>) -> RequestBuilder {
    match token {
        Some(token) => request.bearer_auth(token),
        None => request,
    }
}

fn send<T: for<'de> Deserialize<'de>>(request: RequestBuilder) -> Result<T, ClientError> {
    let response = request.send().map_err(|e| ClientError(format!("request failed: {e}")))?;
    let status = response.status();
    if !status.is_success() {
        let body = response.text().unwrap_or_default();
        let snippet: String = body.chars().take(200).collect();
        return Err(ClientError(format!("endpoint returned {status}: {snippet}")));
    }
    response
        .json()
        .map_err(|e| ClientError(format!("malformed response: {e}")))
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

/// Sends each prompt as a single user message at temperature 0.
#[derive(Debug, Clone)]
pub struct RemoteChatClient {
    http: Client,
    url: String,
    model: String,
    token: Option<String>,
}

impl RemoteChatClient {
    pub fn new(url: impl Into<String>, model: impl Into<String>, token: Option<String>, timeout: Duration) -> Result<Self, ClientError> {
        Ok(RemoteChatClient {
            http: http_client(timeout)?,
            url: url.into(),
            model: model.into(),
            token,
        })
    }
}

impl ChatClient for RemoteChatClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let request = authorize(self.http.post(&self.url).json(&body), self.token.as_deref());
        let response: ChatResponse = send(request)?;
        response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError("response has no message content".into()))
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    http: Client,
    url: String,
    model: String,
    token: Option<String>,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        token: Option<String>,
        dimension: usize,
        timeout: Duration,
    ) -> Result<Self, ClientError> {
        Ok(RemoteEmbedder {
            http: http_client(timeout)?,
            url: url.into(),
            model: model.into(),
            token,
            dimension,
        })
    }
}

impl EmbeddingClient for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let body = json!({ "model": self.model, "input": text });
        let request = authorize(self.http.post(&self.url).json(&body), self.token.as_deref());
        let response: EmbeddingResponse = send(request)?;
        let vector = response
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| ClientError("response has no embedding".into()))?;
        if vector.len() != self.dimension {
            return Err(ClientError(format!(
                "embedding has dimension {}, configured {}",
                vector.len(),
                self.dimension
            )));
        }
        Ok(vector)
    }
}
