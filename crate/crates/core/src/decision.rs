//! Two-phase access decisions and obligation evaluation.
//!
//! Evaluation runs in a fixed order and stops at the first failing phase:
//!
//! 1. the subject must exist;
//! 2. some role in the subject's effective role set must hold the requested
//!    permission (directly or by inheritance); the granting role reported is
//!    the lexicographically smallest one;
//! 3. no applicable `must-not` obligation may hold;
//! 4. the restriction monitor must admit the transaction.
//!
//! Quota is only consumed in phase 4, so requests that would be denied for
//! lack of permission never count against anyone's limits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ids::{is_context_value, is_token, is_word, PolicyId, RequestId, RoleId, Timestamp, UserId};
use crate::model::{Action, DirectoryState, ModelError, Permission};
use crate::restriction::{Admission, AuditEvent, AuditRecord, RestrictionError, RestrictionMonitor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Permit,
    Deny,
}

impl Effect {
    pub fn as_str(self) -> &'static str {
        match self {
            Effect::Permit => "permit",
            Effect::Deny => "deny",
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Effect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "permit" => Ok(Effect::Permit),
            "deny" => Ok(Effect::Deny),
            other => Err(format!("unknown effect {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    Granted,
    NoMatchingPermission,
    UnknownSubject,
    QuotaExceeded,
    ObligationBlocked,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Granted => "granted",
            Reason::NoMatchingPermission => "no-matching-permission",
            Reason::UnknownSubject => "unknown-subject",
            Reason::QuotaExceeded => "quota-exceeded",
            Reason::ObligationBlocked => "obligation-blocked",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Reason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Reason::Granted,
            Reason::NoMatchingPermission,
            Reason::UnknownSubject,
            Reason::QuotaExceeded,
            Reason::ObligationBlocked,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| format!("unknown reason {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Must,
    MustNot,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Must => "must",
            Modality::MustNot => "must-not",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "must" => Ok(Modality::Must),
            "must-not" => Ok(Modality::MustNot),
            other => Err(ModelError::InvalidPolicy(format!(
                "unknown modality {other:?} (expected must or must-not)"
            ))),
        }
    }
}

/// An activity a subject must (or must not) perform when its condition
/// holds. The condition is a conjunction of `key = value` tests over the
/// request context; an empty condition always holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObligationPolicy {
    pub id: PolicyId,
    pub condition: BTreeMap<String, String>,
    pub modality: Modality,
    pub action_token: String,
    pub applies_to: BTreeSet<RoleId>,
}

impl ObligationPolicy {
    pub fn new(
        id: &str,
        modality: Modality,
        action_token: &str,
        applies_to: impl IntoIterator<Item = RoleId>,
        condition: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ModelError> {
        let id = PolicyId::new(id)?;
        if !is_word(action_token) {
            return Err(ModelError::InvalidPolicy(format!("invalid action token {action_token:?}")));
        }
        let applies_to: BTreeSet<RoleId> = applies_to.into_iter().collect();
        if applies_to.is_empty() {
            return Err(ModelError::InvalidPolicy("obligation must apply to at least one role".into()));
        }
        let mut cond = BTreeMap::new();
        for (k, v) in condition {
            if !is_token(&k) {
                return Err(ModelError::InvalidPolicy(format!("invalid condition key {k:?}")));
            }
            if !is_context_value(&v) {
                return Err(ModelError::InvalidPolicy(format!("invalid condition value for {k}")));
            }
            if cond.insert(k.clone(), v).is_some() {
                return Err(ModelError::InvalidPolicy(format!("duplicate condition key {k}")));
            }
        }
        Ok(Self {
            id,
            condition: cond,
            modality,
            action_token: action_token.to_string(),
            applies_to,
        })
    }

    fn condition_holds(&self, context: &BTreeMap<String, String>) -> bool {
        self.condition.iter().all(|(k, v)| context.get(k) == Some(v))
    }

    fn reference(&self) -> ObligationRef {
        ObligationRef {
            id: self.id.clone(),
            modality: self.modality,
            action_token: self.action_token.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObligationRef {
    pub id: PolicyId,
    pub modality: Modality,
    pub action_token: String,
}

/// Splits applicable obligations into `(blocking, attached)`.
///
/// A policy is applicable when its `applies_to` set intersects
/// `subject_roles` and every condition test holds against `context`. A
/// missing context key fails the test.
pub fn evaluate_obligations<'a, I>(
    policies: I,
    subject_roles: &BTreeSet<RoleId>,
    context: &BTreeMap<String, String>,
) -> (Vec<ObligationRef>, Vec<ObligationRef>)
where
    I: IntoIterator<Item = &'a ObligationPolicy>,
{
    let mut blocking = Vec::new();
    let mut attached = Vec::new();
    for policy in policies {
        if policy.applies_to.is_disjoint(subject_roles) || !policy.condition_holds(context) {
            continue;
        }
        match policy.modality {
            Modality::MustNot => blocking.push(policy.reference()),
            Modality::Must => attached.push(policy.reference()),
        }
    }
    (blocking, attached)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    pub subject: String,
    pub resource: String,
    pub action: Action,
    pub context: BTreeMap<String, String>,
    /// Assigned by the engine when absent.
    pub request_id: Option<RequestId>,
}

impl AccessRequest {
    pub fn new(subject: impl Into<String>, resource: impl Into<String>, action: Action) -> Self {
        Self {
            subject: subject.into(),
            resource: resource.into(),
            action,
            context: BTreeMap::new(),
            request_id: None,
        }
    }

    pub fn with_context(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.context.insert(key.into(), value.into());
        self
    }

    pub fn with_request_id(mut self, id: RequestId) -> Self {
        self.request_id = Some(id);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub effect: Effect,
    pub reason: Reason,
    pub obligations: Vec<ObligationRef>,
    pub matched_role: Option<RoleId>,
}

impl Decision {
    fn deny(reason: Reason) -> Self {
        Self {
            effect: Effect::Deny,
            reason,
            obligations: Vec::new(),
            matched_role: None,
        }
    }

    pub fn is_permit(&self) -> bool {
        self.effect == Effect::Permit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Subject,
    Permission,
    Obligation,
    Restriction,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Subject => "subject",
            Phase::Permission => "permission",
            Phase::Obligation => "obligation",
            Phase::Restriction => "restriction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepOutcome {
    Unknown,
    NoMatch,
    Granted,
    NotApplicable,
    Attached,
    Blocking,
    WouldAdmit,
    WouldReject,
}

impl StepOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            StepOutcome::Unknown => "unknown",
            StepOutcome::NoMatch => "no-match",
            StepOutcome::Granted => "granted",
            StepOutcome::NotApplicable => "not-applicable",
            StepOutcome::Attached => "attached",
            StepOutcome::Blocking => "blocking",
            StepOutcome::WouldAdmit => "would-admit",
            StepOutcome::WouldReject => "would-reject",
        }
    }
}

/// One entry of an evaluation trace: which phase looked at which role,
/// policy or subject, and what it concluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub phase: Phase,
    pub examined: String,
    pub outcome: StepOutcome,
}

impl TraceStep {
    fn new(phase: Phase, examined: impl Into<String>, outcome: StepOutcome) -> Self {
        Self {
            phase,
            examined: examined.into(),
            outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Explanation {
    pub decision: Decision,
    pub trace: Vec<TraceStep>,
}

/// Outcome of phases 1 to 3.
enum Staged {
    Final(Decision),
    /// Would permit, pending quota.
    Candidate {
        subject: UserId,
        role: RoleId,
        attached: Vec<ObligationRef>,
    },
}

fn stage(state: &DirectoryState, req: &AccessRequest, mut trace: Option<&mut Vec<TraceStep>>) -> Staged {
    let mut record = |step: TraceStep| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(step);
        }
    };

    let Some(subject) = state.users().find(|u| u.as_str() == req.subject).cloned() else {
        record(TraceStep::new(Phase::Subject, &req.subject, StepOutcome::Unknown));
        return Staged::Final(Decision::deny(Reason::UnknownSubject));
    };
    let roles = state.effective_roles(subject.as_str()).expect("subject exists");

    // An unparseable resource can never have been granted.
    let wanted = crate::ids::Resource::new(req.resource.as_str())
        .ok()
        .map(|r| Permission::new(r, req.action));
    let mut granted_by = None;
    for role in &roles {
        let grants = match &wanted {
            Some(p) => state
                .effective_permissions(role.as_str())
                .expect("closure contains known roles")
                .contains(p),
            None => false,
        };
        if grants {
            record(TraceStep::new(Phase::Permission, role.as_str(), StepOutcome::Granted));
            granted_by = Some(role.clone());
            break;
        }
        record(TraceStep::new(Phase::Permission, role.as_str(), StepOutcome::NoMatch));
    }
    let Some(role) = granted_by else {
        return Staged::Final(Decision::deny(Reason::NoMatchingPermission));
    };

    let (blocking, attached) = evaluate_obligations(state.obligations(), &roles, &req.context);
    for ob in &blocking {
        record(TraceStep::new(Phase::Obligation, ob.id.as_str(), StepOutcome::Blocking));
    }
    for ob in &attached {
        record(TraceStep::new(Phase::Obligation, ob.id.as_str(), StepOutcome::Attached));
    }
    if !blocking.is_empty() {
        return Staged::Final(Decision {
            effect: Effect::Deny,
            reason: Reason::ObligationBlocked,
            obligations: blocking,
            matched_role: None,
        });
    }
    Staged::Candidate {
        subject,
        role,
        attached,
    }
}

fn permit(role: RoleId, attached: Vec<ObligationRef>) -> Decision {
    Decision {
        effect: Effect::Permit,
        reason: Reason::Granted,
        obligations: attached,
        matched_role: Some(role),
    }
}

/// Knobs for a single evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// When false, restriction policies are ignored (plain RBAC mode).
    pub enforce_restrictions: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            enforce_restrictions: true,
        }
    }
}

/// Decides `req` and appends exactly one audit record. A would-be permit
/// consumes quota through `monitor`.
pub fn check_access(
    state: &DirectoryState,
    monitor: &RestrictionMonitor,
    req: &AccessRequest,
    request_id: &RequestId,
    now: Timestamp,
    opts: EvalOptions,
) -> Result<Decision, RestrictionError> {
    let decision = match stage(state, req, None) {
        Staged::Final(d) => d,
        Staged::Candidate {
            subject,
            role,
            attached,
        } => {
            if opts.enforce_restrictions {
                match monitor.consume(state, &subject, &role, now, request_id)? {
                    Admission::Admitted => permit(role, attached),
                    Admission::Rejected(_) => Decision::deny(Reason::QuotaExceeded),
                }
            } else {
                permit(role, attached)
            }
        }
    };
    monitor.append_audit(AuditRecord {
        at: now,
        request_id: request_id.clone(),
        event: AuditEvent::Access {
            subject: req.subject.clone(),
            resource: req.resource.clone(),
            action: req.action,
            effect: decision.effect,
            reason: decision.reason,
            matched_role: decision.matched_role.clone(),
        },
    });
    Ok(decision)
}

/// Same decision as [`check_access`] would make at `now`, plus the trace.
/// Consumes no quota, emits no anomaly and writes no audit record.
pub fn explain(
    state: &DirectoryState,
    monitor: &RestrictionMonitor,
    req: &AccessRequest,
    now: Timestamp,
    opts: EvalOptions,
) -> Result<Explanation, RestrictionError> {
    let mut trace = Vec::new();
    let decision = match stage(state, req, Some(&mut trace)) {
        Staged::Final(d) => d,
        Staged::Candidate {
            subject,
            role,
            attached,
        } => {
            if opts.enforce_restrictions {
                let checks = monitor.dry_run(state, &subject, &role, now)?;
                let mut rejected = false;
                for c in &checks {
                    let outcome = if c.exceeded() {
                        rejected = true;
                        StepOutcome::WouldReject
                    } else {
                        StepOutcome::WouldAdmit
                    };
                    trace.push(TraceStep::new(Phase::Restriction, c.policy.as_str(), outcome));
                }
                if rejected {
                    Decision::deny(Reason::QuotaExceeded)
                } else {
                    permit(role, attached)
                }
            } else {
                permit(role, attached)
            }
        }
    };
    Ok(Explanation { decision, trace })
}
