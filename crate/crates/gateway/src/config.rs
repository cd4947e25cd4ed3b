//! Service configuration: one TOML file, then `OPTIN_*` environment overrides.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! registry_path = "var/registry.log"
//! ledger_path = "var/ledger.log"
//! admin_token = "…"   # optional; guards rights-holder creation
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use optin_core::engine::OptInEngine;
use optin_core::ledger::{Ledger, LedgerError};
use optin_core::registry::{Registry, RegistryError};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub listen: Option<String>,
    pub registry_path: Option<PathBuf>,
    pub ledger_path: Option<PathBuf>,
    pub admin_token: Option<String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?;
                toml::from_str(&text).map_err(|source| ConfigError::Parse { path: p.into(), source })?
            }
            None => Config::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        Ok(config)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get("OPTIN_LISTEN") {
            self.listen = Some(v);
        }
        if let Some(v) = get("OPTIN_REGISTRY") {
            self.registry_path = Some(v.into());
        }
        if let Some(v) = get("OPTIN_LEDGER") {
            self.ledger_path = Some(v.into());
        }
        if let Some(v) = get("OPTIN_ADMIN_TOKEN") {
            self.admin_token = Some(v);
        }
    }

    pub fn listen(&self) -> &str {
        self.listen.as_deref().unwrap_or(DEFAULT_LISTEN)
    }

    /// Defaults to `<registry>.ledger` next to a file registry.
    pub fn ledger_path(&self) -> Option<PathBuf> {
        self.ledger_path.clone().or_else(|| {
            self.registry_path.as_ref().map(|r| {
                let mut p = r.as_os_str().to_owned();
                p.push(".ledger");
                PathBuf::from(p)
            })
        })
    }

    /// Opens the configured stores; both are in memory when no paths are set.
    pub fn open_engine(&self) -> Result<OptInEngine, ConfigError> {
        let ledger = Arc::new(match self.ledger_path() {
            Some(p) => Ledger::open(&p)?,
            None => Ledger::in_memory(),
        });
        let registry = match &self.registry_path {
            Some(p) => Registry::open(p)?,
            None => Registry::in_memory(),
        };
        Ok(OptInEngine::new(Arc::new(registry.with_ledger(ledger.clone())), ledger))
    }
}
