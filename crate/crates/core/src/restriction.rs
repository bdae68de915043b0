//! Restriction policies: caps on users per role and on transactions per
//! user or per role inside a fixed time window.
//!
//! Windows are fixed and anchored at the first admitted-or-attempted
//! transaction for a `(policy, principal)` key. A window that has lived for
//! `window_seconds` or longer is discarded on the next attempt and a new one
//! starts at that attempt's timestamp.
//!
//! A consume call is all-or-nothing: if any applicable policy would be pushed
//! over its limit, no counter moves and one [`AnomalyEvent`] is emitted per
//! violated policy.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{Effect, Reason};
use crate::ids::{is_token, PolicyId, RequestId, RoleId, Timestamp, UserId};
use crate::model::{Action, DirectoryState, ModelError};

/// Timestamps at most this many seconds behind a live window start are
/// clamped to the window start instead of rejected.
pub const CLOCK_SKEW_TOLERANCE_SECS: i64 = 2;

/// Upper bound on `limit` for [`AuditLog::query`].
pub const MAX_AUDIT_QUERY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    PerUser,
    PerRole,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::PerUser => "per-user",
            Scope::PerRole => "per-role",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-user" => Ok(Scope::PerUser),
            "per-role" => Ok(Scope::PerRole),
            other => Err(ModelError::InvalidPolicy(format!(
                "unknown scope {other:?} (expected per-user or per-role)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestrictionPolicy {
    pub id: PolicyId,
    pub scope: Scope,
    /// A user name for per-user scope, a role name for per-role scope.
    /// `None` applies the policy to every principal of the scope.
    pub target: Option<String>,
    pub max_transactions: u32,
    pub window_seconds: u64,
    /// Only meaningful for per-role scope.
    pub max_users: Option<u32>,
}

impl RestrictionPolicy {
    pub fn new(
        id: &str,
        scope: Scope,
        target: Option<&str>,
        max_transactions: u32,
        window_seconds: u64,
        max_users: Option<u32>,
    ) -> Result<Self, ModelError> {
        let id = PolicyId::new(id)?;
        if let Some(t) = target {
            if !is_token(t) {
                return Err(ModelError::InvalidPolicy(format!("invalid target {t:?}")));
            }
        }
        if max_transactions < 1 {
            return Err(ModelError::InvalidPolicy("max-transactions must be at least 1".into()));
        }
        if window_seconds < 1 {
            return Err(ModelError::InvalidPolicy("window-seconds must be at least 1".into()));
        }
        match (scope, max_users) {
            (Scope::PerUser, Some(_)) => {
                return Err(ModelError::InvalidPolicy(
                    "max-users is only allowed on per-role policies".into(),
                ))
            }
            (_, Some(0)) => {
                return Err(ModelError::InvalidPolicy("max-users must be at least 1".into()))
            }
            _ => {}
        }
        Ok(Self {
            id,
            scope,
            target: target.map(str::to_string),
            max_transactions,
            window_seconds,
            max_users,
        })
    }

    fn covers(&self, principal: &str) -> bool {
        self.target.as_deref().is_none_or(|t| t == principal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CapStatus {
    Ok,
    AtCapacity(PolicyId),
}

/// Whether `role` can take another member under the per-role max-users caps.
pub fn check_user_cap(state: &DirectoryState, role: &RoleId) -> Result<CapStatus, ModelError> {
    if !state.has_role(role.as_str()) {
        return Err(ModelError::UnknownRole(role.to_string()));
    }
    let members = state.member_count(role.as_str()) as u64;
    for policy in state.restrictions() {
        if policy.scope != Scope::PerRole || !policy.covers(role.as_str()) {
            continue;
        }
        if let Some(max) = policy.max_users {
            if members >= u64::from(max) {
                return Ok(CapStatus::AtCapacity(policy.id.clone()));
            }
        }
    }
    Ok(CapStatus::Ok)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CounterKey {
    pub policy: PolicyId,
    pub principal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionCounter {
    pub policy: PolicyId,
    pub principal: String,
    pub window_start: Timestamp,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    start: Timestamp,
    count: u32,
}

/// Emitted when a transaction is refused because a limit was reached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub at: Timestamp,
    pub policy: PolicyId,
    pub principal: String,
    /// The count the transaction would have reached.
    pub observed: u64,
    pub limit: u64,
    pub request_id: RequestId,
}

impl AnomalyEvent {
    /// Tab-separated line used by the anomaly log file (without newline).
    pub fn to_log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.at.to_iso8601(),
            self.policy,
            self.principal,
            self.observed,
            self.limit,
            self.request_id
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AuditEvent {
    Access {
        subject: String,
        resource: String,
        action: Action,
        effect: Effect,
        reason: Reason,
        matched_role: Option<RoleId>,
    },
    RestorePerformed {
        snapshot: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub at: Timestamp,
    pub request_id: RequestId,
    pub event: AuditEvent,
}

impl AuditRecord {
    pub fn subject(&self) -> Option<&str> {
        match &self.event {
            AuditEvent::Access { subject, .. } => Some(subject),
            AuditEvent::RestorePerformed { .. } => None,
        }
    }

    pub fn effect(&self) -> Option<Effect> {
        match &self.event {
            AuditEvent::Access { effect, .. } => Some(*effect),
            AuditEvent::RestorePerformed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditFilter {
    pub subject: Option<String>,
    pub effect: Option<Effect>,
    pub since: Option<Timestamp>,
    pub until: Option<Timestamp>,
}

impl AuditFilter {
    fn matches(&self, record: &AuditRecord) -> bool {
        if let Some(subject) = &self.subject {
            if record.subject() != Some(subject.as_str()) {
                return false;
            }
        }
        if let Some(effect) = self.effect {
            if record.effect() != Some(effect) {
                return false;
            }
        }
        self.since.is_none_or(|s| record.at >= s) && self.until.is_none_or(|u| record.at <= u)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RestrictionError {
    #[error(
        "clock skew: {now} is more than {CLOCK_SKEW_TOLERANCE_SECS}s before window start \
         {window_start} of policy {policy} for {principal}"
    )]
    ClockSkew {
        policy: PolicyId,
        principal: String,
        window_start: Timestamp,
        now: Timestamp,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditQueryError {
    #[error("invalid range: since is after until")]
    InvalidRange,
    #[error("limit must be between 1 and {MAX_AUDIT_QUERY}")]
    InvalidLimit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    /// First violated policy, by id order.
    Rejected(PolicyId),
}

/// One applicable policy as seen by a (possibly dry-run) consume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotaCheck {
    pub policy: PolicyId,
    pub principal: String,
    pub attempted: u64,
    pub limit: u64,
    window_start: Timestamp,
}

impl QuotaCheck {
    pub fn exceeded(&self) -> bool {
        self.attempted > self.limit
    }
}

/// Serializable view of the monitor used by snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorState {
    pub counters: Vec<TransactionCounter>,
    pub audit: Vec<AuditRecord>,
    pub anomalies: Vec<AnomalyEvent>,
}

/// Append-only anomaly log file. One tab-separated line per event:
/// ISO-8601 time, policy id, principal, observed, limit, request id.
#[derive(Debug)]
pub struct AnomalyLog {
    path: PathBuf,
}

impl AnomalyLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, events: &[AnomalyEvent]) -> io::Result<()> {
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut buf = String::new();
        for e in events {
            buf.push_str(&e.to_log_line());
            buf.push('\n');
        }
        file.write_all(buf.as_bytes())?;
        file.flush()
    }
}

/// Transaction counters, the anomaly queue and the audit log.
#[derive(Debug, Default)]
pub struct RestrictionMonitor {
    counters: Mutex<BTreeMap<CounterKey, Window>>,
    anomalies: Mutex<VecDeque<AnomalyEvent>>,
    audit: Mutex<Vec<AuditRecord>>,
    log: Option<AnomalyLog>,
}

impl RestrictionMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_log(log: AnomalyLog) -> Self {
        Self {
            log: Some(log),
            ..Self::default()
        }
    }

    pub fn anomaly_log(&self) -> Option<&AnomalyLog> {
        self.log.as_ref()
    }

    /// Records one transaction for `subject` acting through `role` against
    /// every applicable policy, or none if any would overflow.
    pub fn consume(
        &self,
        state: &DirectoryState,
        subject: &UserId,
        role: &RoleId,
        now: Timestamp,
        request_id: &RequestId,
    ) -> Result<Admission, RestrictionError> {
        let mut counters = self.counters.lock();
        let checks = plan(&counters, state, subject, role, now)?;
        let violations: Vec<AnomalyEvent> = checks
            .iter()
            .filter(|c| c.exceeded())
            .map(|c| AnomalyEvent {
                at: now,
                policy: c.policy.clone(),
                principal: c.principal.clone(),
                observed: c.attempted,
                limit: c.limit,
                request_id: request_id.clone(),
            })
            .collect();
        if let Some(first) = violations.first() {
            let rejected = first.policy.clone();
            self.emit(violations);
            return Ok(Admission::Rejected(rejected));
        }
        for c in checks {
            counters.insert(
                CounterKey {
                    policy: c.policy,
                    principal: c.principal,
                },
                Window {
                    start: c.window_start,
                    count: c.attempted as u32,
                },
            );
        }
        Ok(Admission::Admitted)
    }

    /// What [`consume`](Self::consume) would decide, without touching any
    /// counter or emitting events.
    pub fn dry_run(
        &self,
        state: &DirectoryState,
        subject: &UserId,
        role: &RoleId,
        now: Timestamp,
    ) -> Result<Vec<QuotaCheck>, RestrictionError> {
        let counters = self.counters.lock();
        plan(&counters, state, subject, role, now)
    }

    fn emit(&self, events: Vec<AnomalyEvent>) {
        let mut queue = self.anomalies.lock();
        if let Some(log) = &self.log {
            if let Err(e) = log.append(&events) {
                tracing::warn!(path = %log.path.display(), error = %e, "failed to append anomaly log");
            }
        }
        for e in &events {
            tracing::warn!(policy = %e.policy, principal = %e.principal, observed = e.observed, limit = e.limit, request_id = %e.request_id, "transaction limit exceeded");
        }
        queue.extend(events);
    }

    /// Removes and returns all pending anomaly events in emission order.
    pub fn drain_anomalies(&self) -> Vec<AnomalyEvent> {
        self.anomalies.lock().drain(..).collect()
    }

    pub fn pending_anomalies(&self) -> usize {
        self.anomalies.lock().len()
    }

    pub fn append_audit(&self, record: AuditRecord) {
        self.audit.lock().push(record);
    }

    pub fn audit_len(&self) -> usize {
        self.audit.lock().len()
    }

    /// Matching audit records in `(at, request-id)` order, at most `limit`.
    pub fn query_audit(
        &self,
        filter: &AuditFilter,
        limit: usize,
    ) -> Result<Vec<AuditRecord>, AuditQueryError> {
        if let (Some(since), Some(until)) = (filter.since, filter.until) {
            if since > until {
                return Err(AuditQueryError::InvalidRange);
            }
        }
        if limit == 0 || limit > MAX_AUDIT_QUERY {
            return Err(AuditQueryError::InvalidLimit);
        }
        let mut out: Vec<AuditRecord> = self
            .audit
            .lock()
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect();
        out.sort_by(|a, b| (a.at, &a.request_id).cmp(&(b.at, &b.request_id)));
        out.truncate(limit);
        Ok(out)
    }

    pub fn counter(&self, policy: &str, principal: &str) -> Option<TransactionCounter> {
        let key = CounterKey {
            policy: PolicyId::new(policy).ok()?,
            principal: principal.to_string(),
        };
        self.counters.lock().get(&key).map(|w| TransactionCounter {
            policy: key.policy.clone(),
            principal: key.principal.clone(),
            window_start: w.start,
            count: w.count,
        })
    }

    pub fn clear_counters(&self) {
        self.counters.lock().clear();
    }

    /// Consistent copy of the monitor's contents. Callers that need a cut
    /// consistent with in-flight decisions must hold the engine's exclusive
    /// lock.
    pub fn export_state(&self) -> MonitorState {
        let counters = self
            .counters
            .lock()
            .iter()
            .map(|(k, w)| TransactionCounter {
                policy: k.policy.clone(),
                principal: k.principal.clone(),
                window_start: w.start,
                count: w.count,
            })
            .collect();
        MonitorState {
            counters,
            audit: self.audit.lock().clone(),
            anomalies: self.anomalies.lock().iter().cloned().collect(),
        }
    }

    pub fn load_state(&self, state: MonitorState) {
        *self.counters.lock() = state
            .counters
            .into_iter()
            .map(|c| {
                (
                    CounterKey {
                        policy: c.policy,
                        principal: c.principal,
                    },
                    Window {
                        start: c.window_start,
                        count: c.count,
                    },
                )
            })
            .collect();
        *self.audit.lock() = state.audit;
        *self.anomalies.lock() = state.anomalies.into();
    }
}

fn plan(
    counters: &BTreeMap<CounterKey, Window>,
    state: &DirectoryState,
    subject: &UserId,
    role: &RoleId,
    now: Timestamp,
) -> Result<Vec<QuotaCheck>, RestrictionError> {
    let mut checks = Vec::new();
    for policy in state.restrictions() {
        let principal = match policy.scope {
            Scope::PerUser => subject.as_str(),
            Scope::PerRole => role.as_str(),
        };
        if !policy.covers(principal) {
            continue;
        }
        let key = CounterKey {
            policy: policy.id.clone(),
            principal: principal.to_string(),
        };
        let window = i64::try_from(policy.window_seconds).unwrap_or(i64::MAX);
        let (start, count) = match counters.get(&key) {
            None => (now, 0),
            Some(w) if now < w.start => {
                if w.start.0 - now.0 > CLOCK_SKEW_TOLERANCE_SECS {
                    return Err(RestrictionError::ClockSkew {
                        policy: key.policy,
                        principal: key.principal,
                        window_start: w.start,
                        now,
                    });
                }
                (w.start, w.count)
            }
            Some(w) if now.0 - w.start.0 >= window => (now, 0),
            Some(w) => (w.start, w.count),
        };
        checks.push(QuotaCheck {
            policy: key.policy,
            principal: key.principal,
            attempted: u64::from(count) + 1,
            limit: u64::from(policy.max_transactions),
            window_start: start,
        });
    }
    Ok(checks)
}
