//! JSON configuration shared by every subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use rolecast_core::gateway::{MockMode, MockProvider, MockScript, OpenAiCompatProvider};
use rolecast_core::metrics::{Embedder, HashingEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use rolecast_core::{ChatProvider, Gateway, MemoryConfig, PromptVariant, ProviderConfig, RetryPolicy};
use serde::{Deserialize, Serialize};

pub const DEFAULT_UI_ORIGIN: &str = "http://localhost:5173";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub provider: ProviderConfig,
    /// When set, a scripted mock replaces the HTTP provider.
    pub mock_script: Option<PathBuf>,
    /// Seed for keyed mock selection.
    pub seed: u64,
    pub embedding: EmbeddingConfig,
    pub memory: MemoryConfig,
    pub variant: PromptVariant,
    pub server: ServerConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            provider: ProviderConfig::default(),
            mock_script: None,
            seed: 0,
            embedding: EmbeddingConfig::default(),
            memory: MemoryConfig::default(),
            variant: PromptVariant::Full,
            server: ServerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingConfig {
    /// Offline bag-of-words embedder.
    #[default]
    Hashing,
    Remote(RemoteEmbedderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    /// Allowed browser origins; `"*"` allows any.
    pub cors_origins: Vec<String>,
    /// Where session journals live. Sessions are not journaled when unset.
    pub journal_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            cors_origins: vec![DEFAULT_UI_ORIGIN.into()],
            journal_dir: Some(PathBuf::from("journals")),
        }
    }
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.mock_script.is_none() {
            self.provider.validate()?;
        }
        if self.memory.threshold_tokens == 0 {
            bail!("memory.threshold_tokens must be positive");
        }
        Ok(())
    }

    /// The configured provider: the mock when a script is set, otherwise the
    /// OpenAI-compatible HTTP client. Keyed selection is the default mock
    /// mode so results do not depend on request order.
    pub fn provider(&self) -> anyhow::Result<Arc<dyn ChatProvider>> {
        match &self.mock_script {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading mock script {}", path.display()))?;
                let script = MockScript::from_json(&text)
                    .with_context(|| format!("parsing mock script {}", path.display()))?;
                Ok(Arc::new(MockProvider::with_seed(script, MockMode::Keyed, self.seed)))
            }
            None => Ok(Arc::new(OpenAiCompatProvider::from_config(&self.provider)?)),
        }
    }

    pub fn gateway(&self) -> anyhow::Result<Gateway> {
        let policy = if self.mock_script.is_some() { RetryPolicy::none() } else { self.provider.retry_policy() };
        Ok(Gateway::new(self.provider()?, policy, self.provider.generation()))
    }

    pub fn embedder(&self) -> anyhow::Result<Arc<dyn Embedder>> {
        Ok(match &self.embedding {
            EmbeddingConfig::Hashing => Arc::new(HashingEmbedder::default()),
            EmbeddingConfig::Remote(cfg) => Arc::new(RemoteEmbedder::from_config(cfg)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: AppConfig = serde_json::from_str(r#"{"variant": "raw", "server": {"port": 9000}}"#).unwrap();
        assert_eq!(cfg.variant, PromptVariant::Raw);
        assert_eq!(cfg.server.port, 9000);
        assert_eq!(cfg.server.cors_origins, vec![DEFAULT_UI_ORIGIN.to_owned()]);
        assert_eq!(cfg.memory, MemoryConfig::default());
        assert_eq!(cfg.embedding, EmbeddingConfig::Hashing);
    }

    #[test]
    fn remote_embedding_is_tagged() {
        let cfg: AppConfig =
            serde_json::from_str(r#"{"embedding": {"kind": "remote", "model_name": "e5"}}"#).unwrap();
        match cfg.embedding {
            EmbeddingConfig::Remote(r) => assert_eq!(r.model_name, "e5"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_threshold_rejected() {
        let cfg: AppConfig = serde_json::from_str(r#"{"memory": {"threshold_tokens": 0}}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
