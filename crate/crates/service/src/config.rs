use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Overrides `port` from the config file.
pub const PORT_ENV: &str = "DIAL_PORT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub workspace: PathBuf,
    pub host: String,
    pub port: u16,
    /// Threads serving HTTP requests. Training and segmentation use the
    /// workspace's own worker count.
    pub http_workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            workspace: PathBuf::from("."),
            host: "127.0.0.1".into(),
            port: 8080,
            http_workers: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {0}: {1}")]
    Parse(PathBuf, String),
    #[error("{PORT_ENV}={0} is not a port number")]
    BadPort(String),
}

impl ServiceConfig {
    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| ConfigError::Parse(path.to_path_buf(), e))
    }

    pub fn apply_env(mut self, port: Option<&str>) -> Result<Self, ConfigError> {
        if let Some(p) = port {
            self.port = p
                .trim()
                .parse()
                .map_err(|_| ConfigError::BadPort(p.to_string()))?;
        }
        Ok(self)
    }

    pub fn from_env(self) -> Result<Self, ConfigError> {
        let port = std::env::var(PORT_ENV).ok();
        self.apply_env(port.as_deref())
    }
}
