//! Run configuration loaded from TOML. Every section is optional and falls
//! back to its defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use graphrag_core::agents::AgentConfig;
use graphrag_core::graph::LeidenConfig;
use graphrag_core::kg_extract::{DedupConfig, DEFAULT_MAX_TRIPLES};
use graphrag_core::pipeline::{BuildConfig, ChunkingConfig};
use graphrag_core::providers::ProviderConfig;
use graphrag_core::retrieve::RetrieveConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    pub max_triples: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            max_triples: DEFAULT_MAX_TRIPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Chunks retrieved by the flat baseline.
    pub flat_top_k: usize,
    /// Score answers with the configured judge as well.
    pub judge: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            flat_top_k: 5,
            judge: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub providers: ProviderConfig,
    pub chunking: ChunkingConfig,
    pub extraction: ExtractionConfig,
    pub dedup: DedupConfig,
    pub community: LeidenConfig,
    pub retrieve: RetrieveConfig,
    pub agents: AgentConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    /// Reads `path` and resolves provider file paths against its directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut().filter(|q| q.is_relative()) {
                *q = base.join(&*q);
            }
        };
        resolve(&mut cfg.providers.patterns);
        resolve(&mut cfg.providers.search_index);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.providers.validate()?;
        self.build().validate()?;
        self.retrieve.validate()?;
        self.agents.validate()?;
        if self.eval.flat_top_k == 0 {
            return Err(CliError::Config("eval.flat_top_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> BuildConfig {
        BuildConfig {
            chunking: self.chunking,
            max_triples: self.extraction.max_triples,
            dedup: self.dedup,
            community: self.community,
        }
    }
}

#[cfg(test)]
mod tests {
    use graphrag_core::ErrorClass;

    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.chunking.window, 1024);
        assert_eq!(cfg.dedup.tau_sim, 0.9);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[retrieve]\ntop_kk = 3\n").unwrap_err();
        assert!(err.to_string().contains("top_kk"), "{err}");
        let err = RunConfig::parse("[retriever]\n").unwrap_err();
        assert!(err.to_string().contains("retriever"), "{err}");
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        for text in [
            "[chunking]\nstride = 0",
            "[community]\nresolution = 0.0",
            "[dedup]\ntau_str = 1.5",
            "[agents]\ntop_k = 0",
            "[eval]\nflat_top_k = 0",
        ] {
            let cfg = RunConfig::parse(text).unwrap();
            assert_eq!(cfg.validate().unwrap_err().class(), ErrorClass::Config, "{text}");
        }
    }

    #[test]
    fn relative_provider_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[providers]\nsearch_index = \"search\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.providers.search_index, Some(dir.path().join("search")));
    }
}
