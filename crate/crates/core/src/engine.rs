//! The engine ties the directory, the restriction monitor and snapshots
//! together behind one lock.
//!
//! Decisions take the lock shared and run fully in parallel; quota updates
//! inside them are serialized by the monitor. Directory mutations, imports,
//! restores and snapshot captures take it exclusively, so no decision ever
//! sees a half-applied change and a captured cut is never torn.

use std::fmt;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

use crate::backup::{BackupError, EngineState, SnapshotMeta, SnapshotStore};
use crate::decision::{self, AccessRequest, Decision, EvalOptions, Explanation, ObligationPolicy};
use crate::ids::{RequestId, Timestamp};
use crate::migration::{self, MigrationError, TableSchema, ValidationReport};
use crate::model::{Assignment, DirectoryMetrics, DirectoryState, ModelError, Permission};
use crate::restriction::{
    AnomalyEvent, AnomalyLog, AuditEvent, AuditFilter, AuditQueryError, AuditRecord, RestrictionError,
    RestrictionMonitor, RestrictionPolicy,
};

pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: i64) -> Self {
        Self(AtomicI64::new(start))
    }

    pub fn set(&self, t: i64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

/// `Policy` is the full engine. `PlainRbac` switches off restriction,
/// migration and backup, leaving classic two-phase RBAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Policy,
    PlainRbac,
}

impl Mode {
    pub fn restrictions(self) -> bool {
        self == Mode::Policy
    }

    pub fn migration(self) -> bool {
        self == Mode::Policy
    }

    pub fn backup(self) -> bool {
        self == Mode::Policy
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Migration(#[from] MigrationError),
    #[error(transparent)]
    Backup(#[from] BackupError),
    #[error(transparent)]
    Restriction(#[from] RestrictionError),
    #[error(transparent)]
    AuditQuery(#[from] AuditQueryError),
    #[error("{0} is disabled in plain RBAC mode")]
    FeatureDisabled(&'static str),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub request_id: RequestId,
    pub decision: Decision,
}

pub struct EngineBuilder {
    mode: Mode,
    clock: Arc<dyn Clock>,
    anomaly_log: Option<AnomalyLog>,
    state: EngineState,
}

impl EngineBuilder {
    pub fn mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn anomaly_log(mut self, log: AnomalyLog) -> Self {
        self.anomaly_log = Some(log);
        self
    }

    pub fn state(mut self, state: EngineState) -> Self {
        self.state = state;
        self
    }

    pub fn build(self) -> Engine {
        let monitor = match self.anomaly_log {
            Some(log) => RestrictionMonitor::with_log(log),
            None => RestrictionMonitor::new(),
        };
        monitor.load_state(self.state.monitor);
        Engine {
            inner: RwLock::new(Inner {
                directory: Arc::new(self.state.directory),
                monitor,
            }),
            seq: AtomicU64::new(self.state.next_request_seq.max(1)),
            clock: self.clock,
            mode: self.mode,
        }
    }
}

struct Inner {
    directory: Arc<DirectoryState>,
    monitor: RestrictionMonitor,
}

pub struct Engine {
    inner: RwLock<Inner>,
    seq: AtomicU64,
    clock: Arc<dyn Clock>,
    mode: Mode,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine").field("mode", &self.mode).finish_non_exhaustive()
    }
}

impl Default for Engine {
    fn default() -> Self {
        Engine::builder().build()
    }
}

impl Engine {
    pub fn builder() -> EngineBuilder {
        EngineBuilder {
            mode: Mode::Policy,
            clock: Arc::new(SystemClock),
            anomaly_log: None,
            state: EngineState::default(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Immutable view of the current directory.
    pub fn directory(&self) -> Arc<DirectoryState> {
        Arc::clone(&self.inner.read().directory)
    }

    fn next_request_id(&self) -> RequestId {
        let n = self.seq.fetch_add(1, Ordering::SeqCst);
        RequestId::new(format!("req-{n:020}")).expect("token")
    }

    fn opts(&self) -> EvalOptions {
        EvalOptions {
            enforce_restrictions: self.mode.restrictions(),
        }
    }

    /// Applies `f` to a copy of the directory and publishes the copy only on
    /// success.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut DirectoryState) -> Result<T, ModelError>) -> Result<T> {
        let mut inner = self.inner.write();
        let mut next = (*inner.directory).clone();
        let out = f(&mut next)?;
        inner.directory = Arc::new(next);
        Ok(out)
    }

    pub fn create_user(&self, name: &str) -> Result<()> {
        self.mutate(|d| d.create_user(name).map(drop))
    }

    pub fn create_role(&self, name: &str, parents: &[&str]) -> Result<()> {
        self.mutate(|d| d.create_role(name, parents.iter().copied()).map(drop))
    }

    pub fn add_parent(&self, role: &str, parent: &str) -> Result<()> {
        self.mutate(|d| d.add_parent(role, parent))
    }

    pub fn grant_permission(&self, role: &str, perm: Permission) -> Result<()> {
        self.mutate(|d| d.grant_permission(role, perm))
    }

    pub fn assign_role(&self, user: &str, role: &str) -> Result<Assignment> {
        let now = self.now();
        let caps = self.mode.restrictions();
        self.mutate(|d| d.assign_role_with(user, role, now, caps))
    }

    pub fn revoke_role(&self, user: &str, role: &str) -> Result<()> {
        self.mutate(|d| d.revoke_role(user, role))
    }

    pub fn add_sod_constraint(&self, a: &str, b: &str) -> Result<()> {
        self.mutate(|d| d.add_sod_constraint(a, b))
    }

    pub fn add_restriction(&self, policy: RestrictionPolicy) -> Result<()> {
        if !self.mode.restrictions() {
            return Err(EngineError::FeatureDisabled("restriction"));
        }
        self.mutate(|d| d.add_restriction(policy))
    }

    pub fn add_obligation(&self, policy: ObligationPolicy) -> Result<()> {
        self.mutate(|d| d.add_obligation(policy))
    }

    pub fn add_table(&self, table: TableSchema) -> Result<()> {
        self.mutate(|d| d.add_table(table))
    }

    /// Decides `req`, consuming quota for a would-be permit and appending
    /// one audit record.
    pub fn check_access(&self, req: &AccessRequest) -> Result<CheckResult> {
        let request_id = req.request_id.clone().unwrap_or_else(|| self.next_request_id());
        let inner = self.inner.read();
        let decision = decision::check_access(
            &inner.directory,
            &inner.monitor,
            req,
            &request_id,
            self.now(),
            self.opts(),
        )?;
        Ok(CheckResult { request_id, decision })
    }

    /// Dry-run evaluation with a trace. Touches no counter and no log.
    pub fn explain(&self, req: &AccessRequest) -> Result<Explanation> {
        let inner = self.inner.read();
        Ok(decision::explain(&inner.directory, &inner.monitor, req, self.now(), self.opts())?)
    }

    pub fn drain_anomalies(&self) -> Vec<AnomalyEvent> {
        self.inner.read().monitor.drain_anomalies()
    }

    pub fn query_audit(&self, filter: &AuditFilter, limit: usize) -> Result<Vec<AuditRecord>> {
        Ok(self.inner.read().monitor.query_audit(filter, limit)?)
    }

    pub fn metrics(&self) -> DirectoryMetrics {
        self.directory().metrics()
    }

    pub fn counter(&self, policy: &str, principal: &str) -> Option<crate::restriction::TransactionCounter> {
        self.inner.read().monitor.counter(policy, principal)
    }

    pub fn export_bundle(&self) -> Result<Vec<u8>> {
        if !self.mode.migration() {
            return Err(EngineError::FeatureDisabled("migration"));
        }
        Ok(migration::export_bundle(&self.directory()))
    }

    pub fn validate_bundle(&self, xml: &[u8]) -> Result<ValidationReport> {
        if !self.mode.migration() {
            return Err(EngineError::FeatureDisabled("migration"));
        }
        Ok(migration::validate_bundle(xml))
    }

    /// Replaces the whole directory with the bundle's contents. Counters
    /// start clean; the audit log and anomaly queue are kept.
    pub fn import_bundle(&self, xml: &[u8]) -> Result<()> {
        if !self.mode.migration() {
            return Err(EngineError::FeatureDisabled("migration"));
        }
        let directory = migration::import_bundle(xml, self.now())?;
        let mut inner = self.inner.write();
        inner.directory = Arc::new(directory);
        inner.monitor.clear_counters();
        Ok(())
    }

    /// A consistent cut of the whole engine.
    pub fn capture(&self) -> EngineState {
        let inner = self.inner.write();
        EngineState {
            directory: (*inner.directory).clone(),
            monitor: inner.monitor.export_state(),
            next_request_seq: self.seq.load(Ordering::SeqCst),
        }
    }

    /// Replaces everything with `state`. Request ids keep increasing across
    /// the swap so earlier ids are never reissued.
    pub fn load_state(&self, state: EngineState) {
        let mut inner = self.inner.write();
        inner.directory = Arc::new(state.directory);
        inner.monitor.load_state(state.monitor);
        self.seq.fetch_max(state.next_request_seq, Ordering::SeqCst);
    }

    pub fn create_snapshot(&self, store: &SnapshotStore, reason: &str) -> Result<SnapshotMeta> {
        if !self.mode.backup() {
            return Err(EngineError::FeatureDisabled("backup"));
        }
        let cut = self.capture();
        Ok(store.create(&cut, reason, self.now())?)
    }

    /// Verifies snapshot `id` and swaps it in, then records the restore in
    /// the audit log. A bad checksum leaves the engine untouched.
    pub fn restore_snapshot(&self, store: &SnapshotStore, id: u64) -> Result<SnapshotMeta> {
        if !self.mode.backup() {
            return Err(EngineError::FeatureDisabled("backup"));
        }
        let (meta, state) = store.load(id)?;
        let request_id = self.next_request_id();
        let mut inner = self.inner.write();
        inner.directory = Arc::new(state.directory);
        inner.monitor.load_state(state.monitor);
        self.seq.fetch_max(state.next_request_seq, Ordering::SeqCst);
        inner.monitor.append_audit(AuditRecord {
            at: self.now(),
            request_id,
            event: AuditEvent::RestorePerformed { snapshot: id },
        });
        Ok(meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{Effect, Reason};
    use crate::model::Action;
    use crate::restriction::Scope;

    fn engine() -> (Engine, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(1_000));
        let e = Engine::builder().clock(clock.clone()).build();
        e.create_role("employee", &[]).unwrap();
        e.grant_permission("employee", Permission::parse("docs", "read").unwrap()).unwrap();
        e.create_user("alice").unwrap();
        e.assign_role("alice", "employee").unwrap();
        (e, clock)
    }

    #[test]
    fn request_ids_are_unique_and_ordered() {
        let (e, _) = engine();
        let req = AccessRequest::new("alice", "docs", Action::Read);
        let a = e.check_access(&req).unwrap().request_id;
        let b = e.check_access(&req).unwrap().request_id;
        assert!(a < b);
    }

    #[test]
    fn failed_mutation_leaves_directory_untouched() {
        let (e, _) = engine();
        let before = e.directory();
        assert!(e.mutate(|d| {
            d.create_user("bob")?;
            d.create_user("bob")
        })
        .is_err());
        assert_eq!(*e.directory(), *before);
    }

    #[test]
    fn plain_mode_disables_policy_features() {
        let e = Engine::builder().mode(Mode::PlainRbac).build();
        e.create_role("r", &[]).unwrap();
        let p = RestrictionPolicy::new("p", Scope::PerRole, None, 1, 1, None).unwrap();
        assert!(matches!(e.add_restriction(p), Err(EngineError::FeatureDisabled(_))));
        assert!(matches!(e.export_bundle(), Err(EngineError::FeatureDisabled(_))));
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path(), 3).unwrap();
        assert!(matches!(e.create_snapshot(&store, "x"), Err(EngineError::FeatureDisabled(_))));
    }

    #[test]
    fn snapshot_restore_round_trip_with_audit_record() {
        let (e, clock) = engine();
        e.add_restriction(RestrictionPolicy::new("two", Scope::PerUser, None, 2, 60, None).unwrap())
            .unwrap();
        let req = AccessRequest::new("alice", "docs", Action::Read);
        e.check_access(&req).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path(), 10).unwrap();
        let meta = e.create_snapshot(&store, "before").unwrap();
        let exported = e.export_bundle().unwrap();

        e.check_access(&req).unwrap();
        e.create_user("mallory").unwrap();
        clock.advance(5);
        e.restore_snapshot(&store, meta.id).unwrap();

        assert_eq!(e.export_bundle().unwrap(), exported);
        assert_eq!(e.counter("two", "alice").unwrap().count, 1);
        let log = e.query_audit(&AuditFilter::default(), 100).unwrap();
        assert!(matches!(log.last().unwrap().event, AuditEvent::RestorePerformed { snapshot } if snapshot == meta.id));
        // one more admitted, then the limit bites, exactly as before the snapshot
        assert!(e.check_access(&req).unwrap().decision.is_permit());
        assert_eq!(e.check_access(&req).unwrap().decision.reason, Reason::QuotaExceeded);
    }

    #[test]
    fn import_replaces_state_and_resets_counters() {
        let (e, _) = engine();
        e.add_restriction(RestrictionPolicy::new("one", Scope::PerUser, None, 1, 60, None).unwrap())
            .unwrap();
        let req = AccessRequest::new("alice", "docs", Action::Read);
        assert!(e.check_access(&req).unwrap().decision.is_permit());
        assert_eq!(e.check_access(&req).unwrap().decision.effect, Effect::Deny);
        let xml = e.export_bundle().unwrap();
        e.import_bundle(&xml).unwrap();
        assert!(e.check_access(&req).unwrap().decision.is_permit());

        let before = e.directory();
        assert!(e.import_bundle(b"<migration format-version=\"1.0\">").is_err());
        assert_eq!(*e.directory(), *before);
    }
}
