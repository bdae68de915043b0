//! Conversions between wire bodies and engine types, shared by the HTTP
//! handlers and the CLI so both surfaces say exactly the same thing.

use rbac_core::backup::{CatalogEntry, EntryStatus};
use rbac_core::decision::Explanation;
use rbac_core::migration::ValidationReport;
use rbac_core::model::Assignment;
use rbac_core::restriction::{AuditEvent, MAX_AUDIT_QUERY};
use rbac_core::{
    AccessRequest, Action, AnomalyEvent, AuditFilter, AuditRecord, BackupError, CheckResult, Decision,
    DirectoryMetrics, EngineError, MigrationError, Modality, ModelError, ObligationPolicy, RequestId,
    RestrictionPolicy, RoleId, Scope, SnapshotMeta,
};

use crate::kv::{Body, KvError, Out};

pub const DEFAULT_AUDIT_LIMIT: usize = 100;

/// An error as it goes on the wire: status, stable code, human message and,
/// for validation failures, the report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
    pub report: Option<ValidationReport>,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            report: None,
        }
    }

    pub fn body(&self) -> String {
        let mut out = Out::new();
        out.pair("error", self.code).pair("message", &self.message);
        if let Some(r) = &self.report {
            out.line(&report(r));
        }
        out.finish().trim_end().to_string() + "\n"
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl From<KvError> for ApiError {
    fn from(e: KvError) -> Self {
        ApiError::new(400, "bad-request", e.to_string())
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let (status, code) = match &e {
            ModelError::InvalidName(_)
            | ModelError::UnknownAction(_)
            | ModelError::InvalidPolicy(_)
            | ModelError::InvalidTable(_)
            | ModelError::SelfPair(_) => (400, "bad-request"),
            ModelError::UnknownUser(_) => (404, "unknown-user"),
            ModelError::UnknownRole(_) => (404, "unknown-role"),
            ModelError::UnknownAssignment { .. } => (404, "unknown-assignment"),
            ModelError::DuplicateUser(_)
            | ModelError::DuplicateRole(_)
            | ModelError::DuplicateAssignment { .. }
            | ModelError::DuplicatePolicy(_)
            | ModelError::DuplicateTable(_) => (409, "duplicate"),
            ModelError::HierarchyCycle { .. } => (409, "hierarchy-cycle"),
            ModelError::SoDViolation { .. } => (409, "sod-violation"),
            ModelError::ExistingConflict { .. } => (409, "existing-conflict"),
            ModelError::RoleCapacityExceeded { .. } => (409, "role-capacity-exceeded"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::Model(m) => m.into(),
            EngineError::Migration(MigrationError::ValidationFailed(r)) => ApiError {
                report: Some(r),
                ..ApiError::new(422, "validation-failed", message)
            },
            EngineError::Migration(MigrationError::MalformedXml(_)) => ApiError::new(400, "malformed-xml", message),
            EngineError::Migration(MigrationError::UnsupportedVersion(_)) => {
                ApiError::new(422, "unsupported-version", message)
            }
            EngineError::Backup(BackupError::UnknownSnapshot(_)) => ApiError::new(404, "unknown-snapshot", message),
            EngineError::Backup(BackupError::ChecksumMismatch(_)) => ApiError::new(422, "checksum-mismatch", message),
            EngineError::Backup(BackupError::Corrupt(_)) => ApiError::new(422, "corrupt-snapshot", message),
            EngineError::Backup(BackupError::StorageFull) => ApiError::new(507, "storage-full", message),
            EngineError::Backup(BackupError::IoFailure(_)) => ApiError::new(500, "io-failure", message),
            EngineError::Restriction(_) => ApiError::new(409, "clock-skew", message),
            EngineError::AuditQuery(_) => ApiError::new(400, "bad-request", message),
            EngineError::FeatureDisabled(_) => ApiError::new(403, "feature-disabled", message),
        }
    }
}

fn invalid(key: &str, message: impl std::fmt::Display) -> KvError {
    KvError::Invalid {
        key: key.to_string(),
        message: message.to_string(),
    }
}

/// `subject`, `resource`, `action`, optional `request-id`, and any number
/// of `context.<key>` pairs.
pub fn access_request(body: &Body) -> Result<AccessRequest, KvError> {
    body.allow(&["subject", "resource", "action", "request-id"], &["context."])?;
    let action: Action = body.parsed("action")?.ok_or_else(|| KvError::Missing("action".into()))?;
    let mut req = AccessRequest::new(body.one("subject")?, body.one("resource")?, action);
    for (k, v) in body.prefixed("context.")? {
        req = req.with_context(k, v);
    }
    if let Some(id) = body.opt("request-id")? {
        req = req.with_request_id(RequestId::new(id).map_err(|e| invalid("request-id", e))?);
    }
    Ok(req)
}

pub fn restriction_policy(body: &Body) -> Result<RestrictionPolicy, ApiError> {
    body.allow(
        &["id", "scope", "target", "max-transactions", "window-seconds", "max-users"],
        &[],
    )?;
    let scope: Scope = body.parsed("scope")?.ok_or_else(|| KvError::Missing("scope".into()))?;
    let max_tx: u32 = body
        .parsed("max-transactions")?
        .ok_or_else(|| KvError::Missing("max-transactions".into()))?;
    let window: u64 = body
        .parsed("window-seconds")?
        .ok_or_else(|| KvError::Missing("window-seconds".into()))?;
    Ok(RestrictionPolicy::new(
        body.one("id")?,
        scope,
        body.opt("target")?,
        max_tx,
        window,
        body.parsed("max-users")?,
    )?)
}

pub fn obligation_policy(body: &Body) -> Result<ObligationPolicy, ApiError> {
    body.allow(&["id", "modality", "action-token", "applies-to"], &["when."])?;
    let modality: Modality = body.parsed("modality")?.ok_or_else(|| KvError::Missing("modality".into()))?;
    let roles = body
        .all("applies-to")
        .into_iter()
        .map(RoleId::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(ModelError::from)?;
    Ok(ObligationPolicy::new(
        body.one("id")?,
        modality,
        body.one("action-token")?,
        roles,
        body.prefixed("when.")?,
    )?)
}

/// `subject`, `effect`, `since`, `until`, `limit`.
pub fn audit_query(body: &Body) -> Result<(AuditFilter, usize), KvError> {
    body.allow(&["subject", "effect", "since", "until", "limit"], &[])?;
    let filter = AuditFilter {
        subject: body.opt("subject")?.map(str::to_string),
        effect: body.parsed("effect")?,
        since: body.parsed("since")?,
        until: body.parsed("until")?,
    };
    let limit = body.parsed("limit")?.unwrap_or(DEFAULT_AUDIT_LIMIT);
    if !(1..=MAX_AUDIT_QUERY).contains(&limit) {
        return Err(invalid("limit", format!("must be between 1 and {MAX_AUDIT_QUERY}")));
    }
    Ok((filter, limit))
}

fn decision_lines(out: &mut Out, d: &Decision) {
    out.pair("effect", d.effect.as_str()).pair("reason", d.reason.as_str());
    out.pair_opt("matched-role", d.matched_role.as_ref());
    for ob in &d.obligations {
        out.pair(
            "obligation",
            format!("{} {} {}", ob.id, ob.modality.as_str(), ob.action_token),
        );
    }
}

pub fn decision(result: &CheckResult) -> String {
    let mut out = Out::new();
    out.pair("request-id", &result.request_id);
    decision_lines(&mut out, &result.decision);
    out.finish()
}

pub fn explanation(e: &Explanation) -> String {
    let mut out = Out::new();
    decision_lines(&mut out, &e.decision);
    for step in &e.trace {
        out.pair(
            "step",
            format!("{} {} {}", step.phase.as_str(), step.outcome.as_str(), step.examined),
        );
    }
    out.finish()
}

/// The first line a CLI `check` prints.
pub fn verdict_line(d: &Decision) -> String {
    match &d.matched_role {
        Some(role) if d.is_permit() => format!("PERMIT role={role}"),
        _ => format!("DENY reason={}", d.reason.as_str()),
    }
}

pub fn metrics(m: &DirectoryMetrics) -> String {
    let mut out = Out::new();
    out.pair("users", m.num_users)
        .pair("roles", m.num_roles)
        .pair("permissions", m.num_permissions)
        .pair("assignments", m.num_assignments)
        .pair("role-user-ratio", m.ratio_decimal().unwrap_or_else(|| "none".into()))
        .pair("role-user-ratio-exact", m.ratio_exact().unwrap_or_else(|| "none".into()));
    out.finish()
}

pub fn assignment(a: &Assignment) -> String {
    let mut out = Out::new();
    out.pair("user", &a.user)
        .pair("role", &a.role)
        .pair("assigned-at", a.assigned_at.to_iso8601());
    out.finish()
}

pub fn audit_records(records: &[AuditRecord]) -> String {
    let mut out = Out::new();
    for r in records {
        let mut fields = vec![("at", r.at.to_iso8601()), ("request-id", r.request_id.to_string())];
        match &r.event {
            AuditEvent::Access {
                subject,
                resource,
                action,
                effect,
                reason,
                matched_role,
            } => {
                fields.push(("kind", "access".into()));
                fields.push(("effect", effect.as_str().into()));
                fields.push(("reason", reason.as_str().into()));
                fields.push(("action", action.as_str().into()));
                fields.push(("resource", resource.clone()));
                if let Some(role) = matched_role {
                    fields.push(("matched-role", role.to_string()));
                }
                // may be an arbitrary unknown string, so it goes last
                fields.push(("subject", subject.clone()));
            }
            AuditEvent::RestorePerformed { snapshot } => {
                fields.push(("kind", "restore-performed".into()));
                fields.push(("snapshot", snapshot.to_string()));
            }
        }
        out.record(&fields);
    }
    out.finish()
}

pub fn anomalies(events: &[AnomalyEvent]) -> String {
    let mut out = Out::new();
    for e in events {
        out.record(&[
            ("at", e.at.to_iso8601()),
            ("policy", e.policy.to_string()),
            ("principal", e.principal.clone()),
            ("observed", e.observed.to_string()),
            ("limit", e.limit.to_string()),
            ("request-id", e.request_id.to_string()),
        ]);
    }
    out.finish()
}

pub fn snapshot_meta(m: &SnapshotMeta) -> String {
    let mut out = Out::new();
    out.pair("id", m.id)
        .pair("created-at", m.created_at.to_iso8601())
        .pair("size-bytes", m.size_bytes)
        .pair("checksum", &m.checksum)
        .pair("reason", &m.reason);
    out.finish()
}

pub fn catalog(entries: &[CatalogEntry]) -> String {
    let mut out = Out::new();
    for e in entries {
        let status = match &e.status {
            EntryStatus::Unchecked => "unchecked",
            EntryStatus::Verified => "verified",
            EntryStatus::Corrupt(_) => "corrupt",
        };
        out.record(&[
            ("id", e.id.to_string()),
            (
                "created-at",
                e.created_at.map_or_else(|| "unknown".into(), |t| t.to_iso8601()),
            ),
            ("size-bytes", e.size_bytes.to_string()),
            ("checksum", e.checksum.clone().unwrap_or_else(|| "none".into())),
            ("status", status.into()),
        ]);
    }
    out.finish()
}

/// `ok=...` then one `issue=<severity> <locator> <message>` line per issue.
pub fn report(r: &ValidationReport) -> String {
    let mut out = Out::new();
    out.pair("ok", r.ok);
    for i in &r.issues {
        out.pair("issue", format!("{} {} {}", i.severity.as_str(), i.locator, i.message));
    }
    out.finish()
}
