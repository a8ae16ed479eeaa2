//! Platform configuration file and environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use phishbowl::email_model::ConverterConfig;
use phishbowl::ensemble::EnsembleConfig;
use phishbowl::ocr_extract::OcrConfig;
use phishbowl::platform::PipelineSettings;
use phishbowl::trend_alerts::TrendConfig;
use phishbowl::vector_bowl::{BowlConfig, DEFAULT_HASHED_DIMENSION};

pub const ENV_CHAT_URL: &str = "PHISHBOWL_CHAT_URL";
pub const ENV_EMBEDDINGS_URL: &str = "PHISHBOWL_EMBEDDINGS_URL";
pub const ENV_API_TOKEN: &str = "PHISHBOWL_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hashed,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    /// Model name sent to a remote embeddings endpoint.
    pub model: String,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hashed,
            dimension: DEFAULT_HASHED_DIMENSION,
            model: "text-embedding-3-small".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub kind: ChatKind,
    pub model: String,
    pub timeout_secs: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            kind: ChatKind::Mock,
            model: "gpt-4o".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub listen: SocketAddr,
    pub bowl_path: PathBuf,
    pub alert_log_path: PathBuf,
    pub embedder: EmbedderConfig,
    pub chat: ChatConfig,
    pub ocr: OcrConfig,
    pub converter: ConverterConfig,
    pub bowl: BowlConfig,
    pub ensemble: EnsembleConfig,
    pub trend: TrendConfig,
    pub anonymize_attempts: usize,
    pub verdict_attempts: usize,
    pub label_in_embedding: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        let pipeline = PipelineSettings::default();
        PlatformConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            bowl_path: PathBuf::from("phishbowl-data/bowl.jsonl"),
            alert_log_path: PathBuf::from("phishbowl-data/alerts.jsonl"),
            embedder: EmbedderConfig::default(),
            chat: ChatConfig::default(),
            ocr: OcrConfig::default(),
            converter: pipeline.converter,
            bowl: pipeline.bowl,
            ensemble: pipeline.ensemble,
            trend: pipeline.trend,
            anonymize_attempts: pipeline.anonymize_attempts,
            verdict_attempts: pipeline.verdict_attempts,
            label_in_embedding: pipeline.label_in_embedding,
        }
    }
}

impl PlatformConfig {
    pub fn from_toml(raw: &str) -> anyhow::Result<Self> {
        let config: PlatformConfig = toml::from_str(raw)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, resolving relative data paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config =
            Self::from_toml(&raw).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(dir) = path.parent() {
            config.bowl_path = dir.join(&config.bowl_path);
            config.alert_log_path = dir.join(&config.alert_log_path);
        }
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.embedder.dimension == 0 {
            bail!("embedder.dimension must be positive");
        }
        if self.anonymize_attempts == 0 || self.verdict_attempts == 0 {
            bail!("attempt counts must be at least 1");
        }
        let settings = self.pipeline_settings();
        settings.converter.validate()?;
        settings.bowl.validate()?;
        settings.ensemble.validate()?;
        settings.trend.validate()?;
        self.ocr.validate()?;
        Ok(())
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        PipelineSettings {
            converter: self.converter,
            bowl: self.bowl,
            ensemble: self.ensemble,
            trend: self.trend,
            anonymize_attempts: self.anonymize_attempts,
            verdict_attempts: self.verdict_attempts,
            label_in_embedding: self.label_in_embedding,
        }
    }
}

/// Endpoint and credentials for remote clients, read from the environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteEndpoints {
    pub chat_url: Option<String>,
    pub embeddings_url: Option<String>,
    pub token: Option<String>,
}

impl RemoteEndpoints {
    pub fn from_env() -> Self {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.trim().is_empty());
        RemoteEndpoints {
            chat_url: var(ENV_CHAT_URL),
            embeddings_url: var(ENV_EMBEDDINGS_URL),
            token: var(ENV_API_TOKEN),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use phishbowl::email_model::TruncationStrategy;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PlatformConfig::from_toml("").unwrap(), PlatformConfig::default());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let raw = r#"
            listen = "0.0.0.0:9000"
            bowl_path = "data/bowl.jsonl"

            [embedder]
            kind = "hashed"
            dimension = 512

            [converter]
            strategy = "content_end"
            token_limit = 256

            [bowl]
            k = 5

            [trend]
            t_alert = 40.0
        "#;
        let c = PlatformConfig::from_toml(raw).unwrap();
        assert_eq!(c.listen.port(), 9000);
        assert_eq!(c.embedder.dimension, 512);
        assert_eq!(c.converter.strategy, TruncationStrategy::ContentEnd);
        assert_eq!(c.converter.tokens_per_char, 0.2815);
        assert_eq!(c.bowl.k, 5);
        assert_eq!(c.bowl.lambda, 0.5);
        assert_eq!(c.trend.t_alert, 40.0);
        assert_eq!(c.trend.k_alert, 0.5);
        assert_eq!(c.chat.kind, ChatKind::Mock);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PlatformConfig::from_toml("lisen = \"x\"").is_err());
        assert!(PlatformConfig::from_toml("[trend]\nk_alert = 1.5").is_err());
        assert!(PlatformConfig::from_toml("[bowl]\nk = 0").is_err());
        assert!(PlatformConfig::from_toml("[embedder]\nkind = \"magic\"").is_err());
    }

    #[test]
    fn example_file_spells_out_the_defaults() {
        let raw = include_str!("../../../phishbowl.example.toml");
        assert_eq!(PlatformConfig::from_toml(raw).unwrap(), PlatformConfig::default());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phishbowl.toml");
        std::fs::write(&path, "bowl_path = \"state/bowl.jsonl\"\n").unwrap();
        let c = PlatformConfig::load(&path).unwrap();
        assert_eq!(c.bowl_path, dir.path().join("state/bowl.jsonl"));
    }
}
