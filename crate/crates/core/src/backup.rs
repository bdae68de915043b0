//! Snapshot files and the snapshot catalog.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "RBAK" | version: u8 | id: u64 | created-at: i64 | reason: u32 len + UTF-8
//! | directory bundle XML: u64 len + bytes
//! | runtime JSON (request sequence, assignment times, counters): u64 len + bytes
//! | audit JSON: u64 len + bytes
//! | anomalies JSON: u64 len + bytes
//! | SHA-256 of every preceding byte: 32 bytes
//! ```
//!
//! Files are written to `snap-<id>.rbak.tmp`, synced, then renamed into
//! place, so the catalog (the directory listing of `snap-*.rbak`) never
//! shows a partially written snapshot.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{RoleId, Timestamp, UserId};
use crate::migration::{export_bundle, import_bundle};
use crate::model::DirectoryState;
use crate::restriction::{AnomalyEvent, AuditRecord, MonitorState, TransactionCounter};

pub const MAGIC: &[u8; 4] = b"RBAK";
pub const FORMAT_VERSION: u8 = 1;
pub const DIGEST_LEN: usize = 32;
pub const DEFAULT_RETENTION: usize = 10;
const LIVE_FILE: &str = "state.rbak";

#[derive(Debug, Error)]
pub enum BackupError {
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(u64),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(PathBuf),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("storage full")]
    StorageFull,
    #[error("I/O failure: {0}")]
    IoFailure(#[source] io::Error),
}

impl From<io::Error> for BackupError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            BackupError::StorageFull
        } else {
            BackupError::IoFailure(e)
        }
    }
}

pub type Result<T, E = BackupError> = std::result::Result<T, E>;

/// A full, consistent cut of the engine: directory plus monitoring state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineState {
    pub directory: DirectoryState,
    pub monitor: MonitorState,
    /// Next request sequence number to hand out.
    pub next_request_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotMeta {
    pub id: u64,
    pub created_at: Timestamp,
    pub reason: String,
    /// Hex-encoded SHA-256 stored in the file trailer.
    pub checksum: String,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryStatus {
    /// Listed without `verify`.
    Unchecked,
    Verified,
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub id: u64,
    pub created_at: Option<Timestamp>,
    pub checksum: Option<String>,
    pub size_bytes: u64,
    pub status: EntryStatus,
}

/// Points at which [`SnapshotStore::create_with_hook`] calls its hook. An
/// error returned from the hook aborts the write as a crash would: nothing
/// is cleaned up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteStage {
    BeforeTemp,
    PartiallyWritten,
    BeforeSync,
    BeforeRename,
    AfterRename,
}

#[derive(Serialize, Deserialize)]
struct RuntimeSection {
    next_request_seq: u64,
    assignment_times: Vec<(UserId, RoleId, Timestamp)>,
    counters: Vec<TransactionCounter>,
}

fn put_section(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

/// Serializes `state` into the snapshot file format.
pub fn encode(state: &EngineState, id: u64, created_at: Timestamp, reason: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&id.to_le_bytes());
    out.extend_from_slice(&created_at.0.to_le_bytes());
    out.extend_from_slice(&(reason.len() as u32).to_le_bytes());
    out.extend_from_slice(reason.as_bytes());

    put_section(&mut out, &export_bundle(&state.directory));
    let runtime = RuntimeSection {
        next_request_seq: state.next_request_seq,
        assignment_times: state
            .directory
            .assignments()
            .map(|a| (a.user, a.role, a.assigned_at))
            .collect(),
        counters: state.monitor.counters.clone(),
    };
    put_section(&mut out, &serde_json::to_vec(&runtime).expect("serializable"));
    put_section(&mut out, &serde_json::to_vec(&state.monitor.audit).expect("serializable"));
    put_section(&mut out, &serde_json::to_vec(&state.monitor.anomalies).expect("serializable"));

    let digest = Sha256::digest(&out);
    out.extend_from_slice(digest.as_slice());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.bytes.len())
            .ok_or_else(|| BackupError::Corrupt("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn section(&mut self) -> Result<&'a [u8]> {
        let len = usize::try_from(self.u64()?).map_err(|_| BackupError::Corrupt("section too large".into()))?;
        self.take(len)
    }
}

struct Header {
    id: u64,
    created_at: Timestamp,
    reason: String,
}

fn header(c: &mut Cursor<'_>) -> Result<Header> {
    if c.take(4)? != MAGIC {
        return Err(BackupError::Corrupt("bad magic".into()));
    }
    let version = c.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(BackupError::Corrupt(format!("unsupported snapshot version {version}")));
    }
    let id = c.u64()?;
    let created_at = Timestamp(c.u64()? as i64);
    let len = c.u32()? as usize;
    let reason = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| BackupError::Corrupt("reason is not UTF-8".into()))?;
    Ok(Header { id, created_at, reason })
}

/// Splits off and checks the trailing digest, returning the body.
fn verified_body<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < DIGEST_LEN {
        return Err(BackupError::ChecksumMismatch(path.to_path_buf()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(BackupError::ChecksumMismatch(path.to_path_buf()));
    }
    Ok(body)
}

fn json<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| BackupError::Corrupt(format!("{what}: {e}")))
}

/// Verifies and decodes a snapshot file's contents.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(SnapshotMeta, EngineState)> {
    let body = verified_body(bytes, path)?;
    let mut c = Cursor { bytes: body, pos: 0 };
    let head = header(&mut c)?;
    let xml = c.section()?;
    let runtime: RuntimeSection = json(c.section()?, "runtime section")?;
    let audit: Vec<AuditRecord> = json(c.section()?, "audit section")?;
    let anomalies: Vec<AnomalyEvent> = json(c.section()?, "anomaly section")?;
    if c.pos != body.len() {
        return Err(BackupError::Corrupt("trailing bytes after sections".into()));
    }
    let mut directory =
        import_bundle(xml, Timestamp(0)).map_err(|e| BackupError::Corrupt(format!("directory section: {e}")))?;
    for (user, role, at) in runtime.assignment_times {
        directory.set_assigned_at(&user, &role, at);
    }
    let meta = SnapshotMeta {
        id: head.id,
        created_at: head.created_at,
        reason: head.reason,
        checksum: hex::encode(&bytes[body.len()..]),
        size_bytes: bytes.len() as u64,
    };
    Ok((
        meta,
        EngineState {
            directory,
            monitor: MonitorState {
                counters: runtime.counters,
                audit,
                anomalies,
            },
            next_request_seq: runtime.next_request_seq,
        },
    ))
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    // Directory fsync is not supported everywhere; failure is not fatal.
    match File::open(dir) {
        Ok(d) => d.sync_all().or(Ok(())),
        Err(_) => Ok(()),
    }
}

fn write_atomic(
    path: &Path,
    bytes: &[u8],
    hook: &mut dyn FnMut(WriteStage) -> io::Result<()>,
) -> io::Result<()> {
    let tmp = tmp_path(path);
    hook(WriteStage::BeforeTemp)?;
    let mut file = OpenOptions::new().write(true).create(true).truncate(true).open(&tmp)?;
    let half = bytes.len() / 2;
    file.write_all(&bytes[..half])?;
    hook(WriteStage::PartiallyWritten)?;
    file.write_all(&bytes[half..])?;
    hook(WriteStage::BeforeSync)?;
    file.sync_all()?;
    drop(file);
    hook(WriteStage::BeforeRename)?;
    fs::rename(&tmp, path)?;
    hook(WriteStage::AfterRename)?;
    if let Some(dir) = path.parent() {
        sync_dir(dir)?;
    }
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("file path").to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn parse_snapshot_name(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("snap-")?.strip_suffix(".rbak")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// A directory of snapshot files. The directory listing is the catalog.
#[derive(Debug)]
pub struct SnapshotStore {
    dir: PathBuf,
    retention: usize,
    writer: Mutex<()>,
}

impl SnapshotStore {
    /// Opens (creating if needed) a snapshot directory and clears temp files
    /// left by interrupted writes.
    pub fn open(dir: impl Into<PathBuf>, retention: usize) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("snap-") && name.ends_with(".rbak.tmp") {
                let _ = fs::remove_file(entry.path());
            }
        }
        Ok(Self {
            dir,
            retention: retention.max(1),
            writer: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: u64) -> PathBuf {
        self.dir.join(format!("snap-{id}.rbak"))
    }

    /// Snapshot ids present in the directory, ascending.
    pub fn ids(&self) -> Result<Vec<u64>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            if let Some(id) = parse_snapshot_name(&entry.file_name().to_string_lossy()) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn latest_id(&self) -> Result<Option<u64>> {
        Ok(self.ids()?.last().copied())
    }

    pub fn create(&self, state: &EngineState, reason: &str, now: Timestamp) -> Result<SnapshotMeta> {
        let _guard = self.writer.lock();
        let id = self.latest_id()?.map_or(1, |n| n + 1);
        let path = self.path_for(id);
        let bytes = encode(state, id, now, reason);
        if let Err(e) = write_atomic(&path, &bytes, &mut |_| Ok(())) {
            let _ = fs::remove_file(tmp_path(&path));
            return Err(e.into());
        }
        self.prune()?;
        Ok(meta_for(&bytes, id, now, reason))
    }

    /// Like [`create`](Self::create) with a hook at each write stage, for
    /// crash-injection tests. No cleanup happens when the hook fails.
    pub fn create_with_hook(
        &self,
        state: &EngineState,
        reason: &str,
        now: Timestamp,
        hook: &mut dyn FnMut(WriteStage) -> io::Result<()>,
    ) -> Result<SnapshotMeta> {
        let _guard = self.writer.lock();
        let id = self.latest_id()?.map_or(1, |n| n + 1);
        let bytes = encode(state, id, now, reason);
        write_atomic(&self.path_for(id), &bytes, hook)?;
        self.prune()?;
        Ok(meta_for(&bytes, id, now, reason))
    }

    fn prune(&self) -> Result<()> {
        let ids = self.ids()?;
        if ids.len() > self.retention {
            for id in &ids[..ids.len() - self.retention] {
                fs::remove_file(self.path_for(*id))?;
            }
        }
        Ok(())
    }

    pub fn list(&self, verify: bool) -> Result<Vec<CatalogEntry>> {
        let mut out = Vec::new();
        for id in self.ids()? {
            let path = self.path_for(id);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                // pruned between listing and reading
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            };
            let mut c = Cursor { bytes: &bytes, pos: 0 };
            let head = header(&mut c);
            let checksum = (bytes.len() >= DIGEST_LEN).then(|| hex::encode(&bytes[bytes.len() - DIGEST_LEN..]));
            let status = match (&head, verify) {
                (Err(e), _) => EntryStatus::Corrupt(e.to_string()),
                (Ok(h), _) if h.id != id => EntryStatus::Corrupt(format!("file claims id {}", h.id)),
                (Ok(_), false) => EntryStatus::Unchecked,
                (Ok(_), true) => match decode(&bytes, &path) {
                    Ok(_) => EntryStatus::Verified,
                    Err(e) => EntryStatus::Corrupt(e.to_string()),
                },
            };
            out.push(CatalogEntry {
                id,
                created_at: head.ok().map(|h| h.created_at),
                checksum,
                size_bytes: bytes.len() as u64,
                status,
            });
        }
        Ok(out)
    }

    /// Reads and verifies snapshot `id`.
    pub fn load(&self, id: u64) -> Result<(SnapshotMeta, EngineState)> {
        let path = self.path_for(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(BackupError::UnknownSnapshot(id)),
            Err(e) => return Err(e.into()),
        };
        let (meta, state) = decode(&bytes, &path)?;
        if meta.id != id {
            return Err(BackupError::Corrupt(format!("{} claims id {}", path.display(), meta.id)));
        }
        Ok((meta, state))
    }
}

fn meta_for(bytes: &[u8], id: u64, created_at: Timestamp, reason: &str) -> SnapshotMeta {
    SnapshotMeta {
        id,
        created_at,
        reason: reason.to_string(),
        checksum: hex::encode(&bytes[bytes.len() - DIGEST_LEN..]),
        size_bytes: bytes.len() as u64,
    }
}

/// The live state file in a data directory, written with the same format
/// and the same temp-then-rename discipline as snapshots.
#[derive(Debug, Clone)]
pub struct LiveStore {
    path: PathBuf,
}

impl LiveStore {
    pub fn open(data_dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(data_dir.as_ref())?;
        Ok(Self {
            path: data_dir.as_ref().join(LIVE_FILE),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn load(&self) -> Result<Option<EngineState>> {
        match fs::read(&self.path) {
            Ok(bytes) => Ok(Some(decode(&bytes, &self.path)?.1)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, state: &EngineState, now: Timestamp) -> Result<()> {
        let bytes = encode(state, 0, now, "live");
        if let Err(e) = write_atomic(&self.path, &bytes, &mut |_| Ok(())) {
            let _ = fs::remove_file(tmp_path(&self.path));
            return Err(e.into());
        }
        Ok(())
    }
}
