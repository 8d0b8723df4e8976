//! Service configuration: a TOML file with environment overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use statechat_core::lm::{HttpBackend, HttpConfig, LmBackend, ScriptedBackend};

use crate::store::{InstanceStore, MemoryStore, SqliteStore, StoreError};

/// Store path selecting the in-process [`MemoryStore`].
pub const MEMORY_STORE: &str = ":memory:";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {var}: {value:?}")]
    Env { var: &'static str, value: String },
    #[error("the scripted backend needs a script file")]
    MissingScript,
    #[error("cannot load script {path}: {reason}")]
    Script { path: PathBuf, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Address to listen on, e.g. `127.0.0.1:8080`.
    pub bind: String,
    /// SQLite file, or `:memory:` for a non-persistent store.
    pub store: String,
    pub backend: BackendKind,
    /// Script file for the scripted backend.
    pub script: Option<PathBuf>,
    pub http: HttpConfig,
    /// Reject `/create` when an instance with the same name exists.
    pub unique_names: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            store: "statechat.db".into(),
            backend: BackendKind::Http,
            script: None,
            http: HttpConfig::default(),
            unique_names: false,
        }
    }
}

fn parse_bool(var: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Env {
            var,
            value: value.to_owned(),
        }),
    }
}

impl ServiceConfig {
    /// Reads `path` if given, then applies `STATECHAT_*` variables from the
    /// process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_owned(),
                    source,
                })?;
                toml::from_str(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    /// Overrides fields from `STATECHAT_*` variables. The LM API key is read
    /// by the HTTP backend itself.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        for (key, value) in vars {
            let value: String = value.into();
            match key.as_ref() {
                "STATECHAT_BIND" => self.bind = value,
                "STATECHAT_STORE" => self.store = value,
                "STATECHAT_BACKEND" => {
                    self.backend = match value.as_str() {
                        "scripted" => BackendKind::Scripted,
                        "http" => BackendKind::Http,
                        _ => {
                            return Err(ConfigError::Env {
                                var: "STATECHAT_BACKEND",
                                value,
                            })
                        }
                    }
                }
                "STATECHAT_SCRIPT" => self.script = Some(value.into()),
                "STATECHAT_LM_URL" => self.http.base_url = value,
                "STATECHAT_LM_MODEL" => self.http.model = Some(value),
                "STATECHAT_UNIQUE_NAMES" => {
                    self.unique_names = parse_bool("STATECHAT_UNIQUE_NAMES", &value)?
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn open_store(&self) -> Result<Arc<dyn InstanceStore>, ConfigError> {
        if self.store == MEMORY_STORE {
            Ok(Arc::new(MemoryStore::new()))
        } else {
            Ok(Arc::new(SqliteStore::open(&self.store)?))
        }
    }

    pub fn build_backend(&self) -> Result<Arc<dyn LmBackend>, ConfigError> {
        match self.backend {
            BackendKind::Http => Ok(Arc::new(HttpBackend::new(self.http.clone()))),
            BackendKind::Scripted => {
                let path = self.script.as_ref().ok_or(ConfigError::MissingScript)?;
                let backend = ScriptedBackend::from_file(path).map_err(|e| ConfigError::Script {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                Ok(Arc::new(backend))
            }
        }
    }
}
