use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";
pub const DEFAULT_DATA_DIR: &str = "rbac-data";
pub const TOKEN_ENV: &str = "RBAC_API_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid listen address {0:?}")]
    Listen(String),
    #[error("port must be between 1 and 65535")]
    Port,
    #[error("{0} and {1} must be different paths")]
    SamePath(&'static str, &'static str),
    #[error("retention must be at least 1")]
    Retention,
}

/// On-disk form. Every field is optional; missing ones take defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub listen: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
    pub snapshot_interval_seconds: Option<u64>,
    pub anomaly_log: Option<PathBuf>,
    pub api_token: Option<String>,
    pub retention: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub snapshot_dir: PathBuf,
    /// 0 disables periodic snapshots.
    pub snapshot_interval_seconds: u64,
    pub anomaly_log: PathBuf,
    /// Admin endpoints are closed when unset.
    pub api_token: Option<String>,
    pub retention: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub listen: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub snapshot_interval_seconds: Option<u64>,
    pub api_token: Option<String>,
}

impl ServiceConfig {
    pub fn resolve(file: ConfigFile, over: Overrides) -> Result<Self, ConfigError> {
        let listen_text = over
            .listen
            .or(file.listen)
            .unwrap_or_else(|| DEFAULT_LISTEN.to_string());
        let listen: SocketAddr = listen_text.parse().map_err(|_| ConfigError::Listen(listen_text.clone()))?;
        if listen.port() == 0 {
            return Err(ConfigError::Port);
        }
        let data_dir = over
            .data_dir
            .or(file.data_dir)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
        let snapshot_dir = file.snapshot_dir.unwrap_or_else(|| data_dir.join("snapshots"));
        let anomaly_log = file.anomaly_log.unwrap_or_else(|| data_dir.join("anomalies.log"));
        let api_token = over
            .api_token
            .or(file.api_token)
            .or_else(|| std::env::var(TOKEN_ENV).ok())
            .filter(|t| !t.is_empty());
        let retention = file.retention.unwrap_or(rbac_core::backup::DEFAULT_RETENTION);
        if retention == 0 {
            return Err(ConfigError::Retention);
        }
        let cfg = Self {
            listen,
            data_dir,
            snapshot_dir,
            snapshot_interval_seconds: over
                .snapshot_interval_seconds
                .or(file.snapshot_interval_seconds)
                .unwrap_or(0),
            anomaly_log,
            api_token,
            retention,
        };
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<(), ConfigError> {
        let named = [
            ("data-dir", &self.data_dir),
            ("snapshot-dir", &self.snapshot_dir),
            ("anomaly-log", &self.anomaly_log),
        ];
        let mut seen = BTreeSet::new();
        for (i, (_, p)) in named.iter().enumerate() {
            if !seen.insert(p.as_path()) {
                let first = named.iter().position(|(_, q)| q == p).unwrap();
                return Err(ConfigError::SamePath(named[first].0, named[i].0));
            }
        }
        Ok(())
    }
}
