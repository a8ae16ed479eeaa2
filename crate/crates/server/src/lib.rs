//! HTTP service and CLI plumbing around the phish-bowl pipeline.

pub mod api;
pub mod config;
pub mod remote;

use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;

use phishbowl::anonymizer::MockAnonymizer;
use phishbowl::client::ChatClient;
use phishbowl::gpt_analyzer::HeuristicVerdictClient;
use phishbowl::platform::{Clients, Clock, Platform};
use phishbowl::trend_alerts::TrendTracker;
use phishbowl::vector_bowl::{EmbeddingClient, HashedEmbedder, PhishBowl};

use crate::config::{ChatKind, EmbedderKind, PlatformConfig, RemoteEndpoints, ENV_CHAT_URL, ENV_EMBEDDINGS_URL};
use crate::remote::{RemoteChatClient, RemoteEmbedder};

/// Builds the embedder and chat clients selected by `config`.
pub fn build_clients(
    config: &PlatformConfig,
    endpoints: &RemoteEndpoints,
    clock: Arc<dyn Clock>,
) -> anyhow::Result<Clients> {
    let timeout = Duration::from_secs(config.chat.timeout_secs.max(1));
    let embedder: Arc<dyn EmbeddingClient> = match config.embedder.kind {
        EmbedderKind::Hashed => Arc::new(HashedEmbedder::new(config.embedder.dimension)),
        EmbedderKind::Remote => {
            let url = endpoints
                .embeddings_url
                .clone()
                .with_context(|| format!("{ENV_EMBEDDINGS_URL} must be set for the remote embedder"))?;
            Arc::new(RemoteEmbedder::new(
                url,
                config.embedder.model.clone(),
                endpoints.token.clone(),
                config.embedder.dimension,
                timeout,
            )?)
        }
    };
    let (anonymizer, analyst): (Arc<dyn ChatClient>, Arc<dyn ChatClient>) = match config.chat.kind {
        ChatKind::Mock => (Arc::new(MockAnonymizer), Arc::new(HeuristicVerdictClient)),
        ChatKind::Remote => {
            let url = endpoints
                .chat_url
                .clone()
                .with_context(|| format!("{ENV_CHAT_URL} must be set for the remote chat client"))?;
            let client = Arc::new(RemoteChatClient::new(
                url,
                config.chat.model.clone(),
                endpoints.token.clone(),
                timeout,
            )?);
            (client.clone(), client)
        }
    };
    Ok(Clients {
        anonymizer,
        analyst,
        embedder,
        clock,
    })
}

/// Opens the persistent bowl and alert log and wires up the pipeline.
pub fn open_platform(config: &PlatformConfig, clients: Clients) -> anyhow::Result<Platform> {
    config.validate()?;
    let bowl = PhishBowl::open(&config.bowl_path, config.embedder.dimension)
        .with_context(|| format!("opening bowl {}", config.bowl_path.display()))?;
    let trends = TrendTracker::with_alert_log(config.trend, &config.alert_log_path)
        .with_context(|| format!("opening alert log {}", config.alert_log_path.display()))?;
    Ok(Platform::new(
        config.pipeline_settings(),
        config.ocr.clone(),
        bowl,
        trends,
        clients,
    )?)
}
