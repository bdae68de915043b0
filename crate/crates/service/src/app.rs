use std::path::PathBuf;

use rbac_core::backup::EntryStatus;
use rbac_core::{AnomalyLog, BackupError, Engine, EngineState, LiveStore, Mode, SnapshotStore};
use thiserror::Error;

use crate::config::ServiceConfig;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("live state {path} is unreadable ({source}) and no snapshot verifies")]
    Unrecoverable { path: PathBuf, source: BackupError },
    #[error(transparent)]
    Backup(#[from] BackupError),
}

/// Where the engine's state came from at startup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Empty,
    Live,
    Snapshot(u64),
}

/// An engine bound to its data directory.
pub struct App {
    pub engine: Engine,
    pub live: LiveStore,
    /// Absent in plain RBAC mode.
    pub snapshots: Option<SnapshotStore>,
    pub origin: Origin,
}

impl App {
    /// Loads the live state file, falling back to the newest snapshot that
    /// verifies, then to an empty engine.
    pub fn open(cfg: &ServiceConfig, mode: Mode) -> Result<Self, StartupError> {
        let live = LiveStore::open(&cfg.data_dir)?;
        let snapshots = match mode.backup() {
            true => Some(SnapshotStore::open(&cfg.snapshot_dir, cfg.retention)?),
            false => None,
        };
        let (state, origin) = match live.load() {
            Ok(Some(state)) => (state, Origin::Live),
            Ok(None) => match newest_good(snapshots.as_ref())? {
                Some((id, state)) => (state, Origin::Snapshot(id)),
                None => (EngineState::default(), Origin::Empty),
            },
            Err(e) => {
                tracing::warn!(path = %live.path().display(), error = %e, "live state unreadable, trying snapshots");
                match newest_good(snapshots.as_ref())? {
                    Some((id, state)) => (state, Origin::Snapshot(id)),
                    None => {
                        return Err(StartupError::Unrecoverable {
                            path: live.path().to_path_buf(),
                            source: e,
                        })
                    }
                }
            }
        };
        let mut builder = Engine::builder().mode(mode).state(state);
        if mode.restrictions() {
            builder = builder.anomaly_log(AnomalyLog::new(&cfg.anomaly_log));
        }
        Ok(Self {
            engine: builder.build(),
            live,
            snapshots,
            origin,
        })
    }

    /// Writes the live state file.
    pub fn persist(&self) -> Result<(), BackupError> {
        self.live.save(&self.engine.capture(), self.engine.now())
    }
}

fn newest_good(store: Option<&SnapshotStore>) -> Result<Option<(u64, EngineState)>, BackupError> {
    let Some(store) = store else {
        return Ok(None);
    };
    for entry in store.list(false)?.into_iter().rev() {
        if let EntryStatus::Corrupt(why) = &entry.status {
            tracing::warn!(id = entry.id, reason = %why, "skipping corrupt snapshot");
            continue;
        }
        match store.load(entry.id) {
            Ok((_, state)) => return Ok(Some((entry.id, state))),
            Err(e) => tracing::warn!(id = entry.id, error = %e, "skipping snapshot"),
        }
    }
    Ok(None)
}
