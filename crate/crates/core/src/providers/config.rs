use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::judge::LlmJudge;
use super::mock::{FixtureSearch, MockEmbedder, MockGenerator, MockJudge, PatternTable};
use super::{EmbeddingProvider, Providers};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

/// Provider section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Seed for every mock provider.
    pub seed: Option<u64>,
    /// Mock entity pattern table (`surface<TAB>type` lines); built-in if unset.
    pub patterns: Option<PathBuf>,
    /// Fixture search index directory for the mock search provider.
    pub search_index: Option<PathBuf>,
    /// Base URL of a chat-completion/embedding style API.
    pub endpoint: Option<String>,
    /// Search endpoint answering `GET ?kind=&q=&limit=` with a document list.
    pub search_endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub model: String,
    pub embedding_model: String,
    pub image_embedding_model: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            seed: Some(42),
            patterns: None,
            search_index: None,
            endpoint: None,
            search_endpoint: None,
            api_key_env: "GRAPHRAG_API_KEY".into(),
            model: "gpt-4o".into(),
            embedding_model: "text-embedding-3-small".into(),
            image_embedding_model: None,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_ms: 250,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProviderKind::Mock if self.seed.is_none() => {
                Err(Error::Config("providers.seed is required for mock providers".into()))
            }
            ProviderKind::Http if self.endpoint.as_deref().unwrap_or("").is_empty() => Err(
                Error::Config("providers.endpoint is required for http providers".into()),
            ),
            _ if self.max_attempts == 0 => {
                Err(Error::Config("providers.max_attempts must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Instantiates every provider from one configuration.
pub fn build_providers(cfg: &ProviderConfig) -> Result<Providers> {
    cfg.validate()?;
    match cfg.kind {
        ProviderKind::Mock => {
            let seed = cfg.seed.expect("validated");
            let embed: Arc<dyn EmbeddingProvider> = Arc::new(MockEmbedder::new(seed));
            let patterns = match &cfg.patterns {
                Some(p) => PatternTable::parse(
                    &std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                ),
                None => PatternTable::builtin(),
            };
            let search = match &cfg.search_index {
                Some(dir) => FixtureSearch::load(dir, embed.clone())?,
                None => FixtureSearch::empty(embed.clone()),
            };
            Ok(Providers {
                embed,
                generate: Arc::new(MockGenerator::with_patterns(seed, patterns)),
                search: Arc::new(search),
                judge: Arc::new(MockJudge::new()),
            })
        }
        #[cfg(feature = "http")]
        ProviderKind::Http => {
            use super::http::{HttpClient, HttpEmbedder, HttpGenerator, HttpSearch};
            let client = HttpClient::from_config(cfg)?;
            let generate = Arc::new(HttpGenerator::new(client.clone(), cfg.model.clone()));
            let search: Arc<dyn super::SearchProvider> = match &cfg.search_endpoint {
                Some(url) => Arc::new(HttpSearch::new(client.clone(), url.clone())),
                None => Arc::new(FixtureSearch::empty(Arc::new(HttpEmbedder::new(
                    client.clone(),
                    cfg.embedding_model.clone(),
                    cfg.image_embedding_model.clone(),
                )))),
            };
            Ok(Providers {
                embed: Arc::new(HttpEmbedder::new(
                    client,
                    cfg.embedding_model.clone(),
                    cfg.image_embedding_model.clone(),
                )),
                generate: generate.clone(),
                search,
                judge: Arc::new(LlmJudge::new(generate)),
            })
        }
        #[cfg(not(feature = "http"))]
        ProviderKind::Http => {
            let _ = LlmJudge::new;
            Err(Error::Config(
                "http providers require the `http` feature".into(),
            ))
        }
    }
}
