//! Startup configuration shared by every command.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rcdiag_core::rules::default_ruleset;
use serde::{Deserialize, Serialize};

use crate::agents::AgentEnv;
use crate::io::{self, IoError};

pub const SEED_VAR: &str = "ENGINE_SEED";
pub const DEFAULT_PORT: u16 = 8700;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("port {0} outside 1024..=65535")]
    PortOutOfRange(u32),
    #[error("catalog not found: {0}")]
    MissingCatalog(PathBuf),
    #[error("{SEED_VAR}={0:?} is not an unsigned integer")]
    BadSeed(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot create {path}: {source}")]
    CreateDir { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub catalog_path: PathBuf,
    /// Default rule set when absent.
    pub rules_path: Option<PathBuf>,
    pub planner_url: Option<String>,
    pub seed: u64,
    pub timeout_ms: u64,
    /// Final workflow states; `data_dir/runs` when absent.
    pub out_dir: Option<PathBuf>,
}

impl EngineConfig {
    pub fn new(catalog_path: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            port: DEFAULT_PORT,
            data_dir: data_dir.into(),
            catalog_path: catalog_path.into(),
            rules_path: None,
            planner_url: None,
            seed: 0,
            timeout_ms: crate::cpa::DEFAULT_TIMEOUT.as_millis() as u64,
            out_dir: None,
        }
    }

    pub fn check_port(port: u32) -> Result<u16, ConfigError> {
        if (1024..=65535).contains(&port) {
            Ok(port as u16)
        } else {
            Err(ConfigError::PortOutOfRange(port))
        }
    }

    /// Seed after applying an `ENGINE_SEED` value, if one is set.
    pub fn seed_with_override(&self, env_value: Option<&str>) -> Result<u64, ConfigError> {
        match env_value {
            None => Ok(self.seed),
            Some(v) => v.trim().parse().map_err(|_| ConfigError::BadSeed(v.into())),
        }
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.seed = self.seed_with_override(std::env::var(SEED_VAR).ok().as_deref())?;
        Ok(())
    }

    /// Checks the invariants and creates the working directories.
    pub fn validate(&self) -> Result<(), ConfigError> {
        Self::check_port(self.port.into())?;
        if !self.catalog_path.is_file() {
            return Err(ConfigError::MissingCatalog(self.catalog_path.clone()));
        }
        for dir in [Some(&self.data_dir), self.out_dir.as_ref()].into_iter().flatten() {
            std::fs::create_dir_all(dir).map_err(|source| ConfigError::CreateDir { path: dir.clone(), source })?;
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| self.data_dir.join("runs"))
    }

    pub fn agent_env(&self) -> Result<AgentEnv, ConfigError> {
        if !self.catalog_path.is_file() {
            return Err(ConfigError::MissingCatalog(self.catalog_path.clone()));
        }
        let catalog = io::load_catalog_file(&self.catalog_path)?;
        let rules = match &self.rules_path {
            Some(p) => io::load_rules_file(p)?,
            None => default_ruleset(),
        };
        Ok(AgentEnv { catalog: Arc::new(catalog), rules: Arc::new(rules), data_dir: self.data_dir.clone(), seed: self.seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn port_bounds() {
        assert!(EngineConfig::check_port(1023).is_err());
        assert_eq!(EngineConfig::check_port(1024).unwrap(), 1024);
        assert_eq!(EngineConfig::check_port(65535).unwrap(), 65535);
        assert!(EngineConfig::check_port(65536).is_err());
    }

    #[test]
    fn seed_override() {
        let c = EngineConfig { seed: 3, ..EngineConfig::new("c.json", "d") };
        assert_eq!(c.seed_with_override(None).unwrap(), 3);
        assert_eq!(c.seed_with_override(Some("42")).unwrap(), 42);
        assert!(c.seed_with_override(Some("x")).is_err());
    }

    #[test]
    fn missing_catalog_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let c = EngineConfig::new(dir.path().join("none.json"), dir.path().join("data"));
        assert!(matches!(c.validate(), Err(ConfigError::MissingCatalog(_))));
    }
}
