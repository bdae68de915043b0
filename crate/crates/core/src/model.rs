//! The RBAC directory: users, roles, the role hierarchy, grants,
//! assignments and separation-of-duty constraints.
//!
//! # Hierarchy direction
//!
//! A role's `parents` are the roles it inherits **from**. A senior role
//! points at the junior roles whose permissions it acquires, so `admin`
//! listing `employee` as a parent means every grant held by `employee` is
//! also held by `admin`. The graph over all roles is kept acyclic.
//!
//! There is no user-to-permission association anywhere in this model;
//! users reach permissions only through role membership.
//!
//! Every mutating method validates first and mutates second, so a returned
//! error leaves the directory exactly as it was.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::ObligationPolicy;
use crate::ids::{InvalidName, PolicyId, Resource, RoleId, SchemaName, Timestamp, UserId};
use crate::migration::TableSchema;
use crate::restriction::{self, CapStatus, RestrictionPolicy, Scope};

/// The three access verbs. Declared in lexical order so that the derived
/// ordering matches the string ordering used by the canonical bundle form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Delete,
    Read,
    Write,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Delete, Action::Read, Action::Write];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Delete => "delete",
            Action::Read => "read",
            Action::Write => "write",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown action {0:?} (expected read, write or delete)")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(Action::Read),
            "write" => Ok(Action::Write),
            "delete" => Ok(Action::Delete),
            other => Err(UnknownAction(other.to_string())),
        }
    }
}

/// The unit of grant: an action on a resource.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Permission {
    pub resource: Resource,
    pub action: Action,
}

impl Permission {
    pub fn new(resource: Resource, action: Action) -> Self {
        Self { resource, action }
    }

    /// Convenience constructor used heavily in tests and fixtures.
    pub fn parse(resource: &str, action: &str) -> Result<Self, ModelError> {
        Ok(Self {
            resource: Resource::new(resource)?,
            action: action.parse()?,
        })
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.resource, self.action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Role {
    pub name: RoleId,
    /// Roles this role inherits from.
    pub parents: BTreeSet<RoleId>,
    pub permissions: BTreeSet<Permission>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub user: UserId,
    pub role: RoleId,
    pub assigned_at: Timestamp,
}

/// Two roles that no user may hold at the same time. Stored normalized
/// with `role_a < role_b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SodConstraint {
    role_a: RoleId,
    role_b: RoleId,
}

impl SodConstraint {
    pub fn new(a: RoleId, b: RoleId) -> Result<Self, ModelError> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Ok(Self { role_a: a, role_b: b }),
            std::cmp::Ordering::Greater => Ok(Self { role_a: b, role_b: a }),
            std::cmp::Ordering::Equal => Err(ModelError::SelfPair(a)),
        }
    }

    pub fn role_a(&self) -> &RoleId {
        &self.role_a
    }

    pub fn role_b(&self) -> &RoleId {
        &self.role_b
    }

    pub fn involves(&self, role: &RoleId) -> bool {
        &self.role_a == role || &self.role_b == role
    }

    /// The other side of the pair, if `role` is one side.
    pub fn partner(&self, role: &RoleId) -> Option<&RoleId> {
        if &self.role_a == role {
            Some(&self.role_b)
        } else if &self.role_b == role {
            Some(&self.role_a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error(transparent)]
    InvalidName(#[from] InvalidName),
    #[error(transparent)]
    UnknownAction(#[from] UnknownAction),
    #[error("user {0} already exists")]
    DuplicateUser(UserId),
    #[error("role {0} already exists")]
    DuplicateRole(RoleId),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown role {0}")]
    UnknownRole(String),
    #[error("making {role} inherit from {parent} would create a hierarchy cycle")]
    HierarchyCycle { role: RoleId, parent: RoleId },
    #[error("{user} already holds {role}")]
    DuplicateAssignment { user: UserId, role: RoleId },
    #[error("{user} holds {held}, which is mutually exclusive with {role}")]
    SoDViolation { user: UserId, role: RoleId, held: RoleId },
    #[error("role {role} is at capacity (policy {policy})")]
    RoleCapacityExceeded { role: RoleId, policy: PolicyId },
    #[error("{user} does not hold {role}")]
    UnknownAssignment { user: String, role: String },
    #[error("a role cannot be exclusive with itself ({0})")]
    SelfPair(RoleId),
    #[error("{user} already holds both {role_a} and {role_b}")]
    ExistingConflict { user: UserId, role_a: RoleId, role_b: RoleId },
    #[error("policy {0} already exists")]
    DuplicatePolicy(PolicyId),
    #[error("table {0} already exists")]
    DuplicateTable(SchemaName),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Counts over a directory. `role_user_ratio` is assignments per user and is
/// absent when there are no users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryMetrics {
    pub num_users: u64,
    pub num_roles: u64,
    pub num_permissions: u64,
    pub num_assignments: u64,
    pub role_user_ratio: Option<Ratio<u64>>,
}

impl DirectoryMetrics {
    /// Decimal rendering of the ratio, e.g. `5.0` or `0.3333333333333333`.
    pub fn ratio_decimal(&self) -> Option<String> {
        self.role_user_ratio
            .map(|r| format!("{:?}", *r.numer() as f64 / *r.denom() as f64))
    }

    /// Exact rendering as `numerator/denominator` in lowest terms.
    pub fn ratio_exact(&self) -> Option<String> {
        self.role_user_ratio.map(|r| format!("{}/{}", r.numer(), r.denom()))
    }
}

/// The authoritative RBAC database.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirectoryState {
    /// user -> directly held roles with their assignment time
    users: BTreeMap<UserId, BTreeMap<RoleId, Timestamp>>,
    roles: BTreeMap<RoleId, Role>,
    sod: BTreeSet<SodConstraint>,
    restrictions: BTreeMap<PolicyId, RestrictionPolicy>,
    obligations: BTreeMap<PolicyId, ObligationPolicy>,
    schema: BTreeMap<SchemaName, TableSchema>,
}

impl DirectoryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self == &Self::default()
    }

    // ---- read access -------------------------------------------------

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.users.keys()
    }

    pub fn has_user(&self, user: &str) -> bool {
        self.users.contains_key(user)
    }

    pub fn roles(&self) -> impl Iterator<Item = &Role> {
        self.roles.values()
    }

    pub fn role(&self, name: &str) -> Option<&Role> {
        self.roles.get(name)
    }

    pub fn has_role(&self, name: &str) -> bool {
        self.roles.contains_key(name)
    }

    pub fn assignments(&self) -> impl Iterator<Item = Assignment> + '_ {
        self.users.iter().flat_map(|(user, held)| {
            held.iter().map(move |(role, at)| Assignment {
                user: user.clone(),
                role: role.clone(),
                assigned_at: *at,
            })
        })
    }

    /// Roles assigned directly to `user`, without hierarchy expansion.
    pub fn direct_roles(&self, user: &str) -> Result<BTreeSet<RoleId>> {
        self.users
            .get(user)
            .map(|held| held.keys().cloned().collect())
            .ok_or_else(|| ModelError::UnknownUser(user.to_string()))
    }

    pub fn holds_directly(&self, user: &str, role: &str) -> bool {
        self.users.get(user).is_some_and(|held| held.contains_key(role))
    }

    /// Number of users holding `role` directly.
    pub fn member_count(&self, role: &str) -> usize {
        self.users.values().filter(|held| held.contains_key(role)).count()
    }

    pub fn sod_constraints(&self) -> impl Iterator<Item = &SodConstraint> {
        self.sod.iter()
    }

    pub fn restrictions(&self) -> impl Iterator<Item = &RestrictionPolicy> {
        self.restrictions.values()
    }

    pub fn restriction(&self, id: &str) -> Option<&RestrictionPolicy> {
        self.restrictions.get(id)
    }

    pub fn obligations(&self) -> impl Iterator<Item = &ObligationPolicy> {
        self.obligations.values()
    }

    pub fn tables(&self) -> impl Iterator<Item = &TableSchema> {
        self.schema.values()
    }

    // ---- closure queries ---------------------------------------------

    /// Transitive closure of the given roles over the hierarchy: each role
    /// plus everything it inherits from. Unknown names are skipped.
    pub fn role_closure<'a, I>(&self, start: I) -> BTreeSet<RoleId>
    where
        I: IntoIterator<Item = &'a RoleId>,
    {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&RoleId> = start.into_iter().collect();
        while let Some(name) = queue.pop_front() {
            let Some(role) = self.roles.get(name) else {
                continue;
            };
            if seen.insert(role.name.clone()) {
                queue.extend(role.parents.iter());
            }
        }
        seen
    }

    /// Directly assigned roles of `user` plus everything they inherit from.
    pub fn effective_roles(&self, user: &str) -> Result<BTreeSet<RoleId>> {
        let held = self
            .users
            .get(user)
            .ok_or_else(|| ModelError::UnknownUser(user.to_string()))?;
        Ok(self.role_closure(held.keys()))
    }

    /// Own and inherited permissions of `role`.
    pub fn effective_permissions(&self, role: &str) -> Result<BTreeSet<Permission>> {
        let role = self
            .roles
            .get(role)
            .ok_or_else(|| ModelError::UnknownRole(role.to_string()))?;
        Ok(self
            .role_closure(std::iter::once(&role.name))
            .iter()
            .flat_map(|r| self.roles[r].permissions.iter().cloned())
            .collect())
    }

    pub fn metrics(&self) -> DirectoryMetrics {
        let num_users = self.users.len() as u64;
        let num_assignments = self.users.values().map(|held| held.len() as u64).sum();
        DirectoryMetrics {
            num_users,
            num_roles: self.roles.len() as u64,
            num_permissions: self.roles.values().map(|r| r.permissions.len() as u64).sum(),
            num_assignments,
            role_user_ratio: (num_users > 0).then(|| Ratio::new(num_assignments, num_users)),
        }
    }

    // ---- mutations ---------------------------------------------------

    pub fn create_user(&mut self, name: &str) -> Result<UserId> {
        let user = UserId::new(name)?;
        if self.users.contains_key(&user) {
            return Err(ModelError::DuplicateUser(user));
        }
        self.users.insert(user.clone(), BTreeMap::new());
        self.debug_check();
        Ok(user)
    }

    /// Creates a role inheriting from `parents`. The new role starts with no
    /// permissions of its own.
    pub fn create_role<'a, I>(&mut self, name: &str, parents: I) -> Result<RoleId>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let role = RoleId::new(name)?;
        let mut parent_ids = BTreeSet::new();
        for parent in parents {
            if parent == role.as_str() {
                return Err(ModelError::HierarchyCycle {
                    role: role.clone(),
                    parent: role,
                });
            }
            let parent = self
                .roles
                .get(parent)
                .ok_or_else(|| ModelError::UnknownRole(parent.to_string()))?;
            parent_ids.insert(parent.name.clone());
        }
        if self.roles.contains_key(&role) {
            return Err(ModelError::DuplicateRole(role));
        }
        self.roles.insert(
            role.clone(),
            Role {
                name: role.clone(),
                parents: parent_ids,
                permissions: BTreeSet::new(),
            },
        );
        self.debug_check();
        Ok(role)
    }

    /// Makes `role` inherit from `parent`. Rejected if `role` is already
    /// reachable from `parent`, since the new edge would close a cycle.
    pub fn add_parent(&mut self, role: &str, parent: &str) -> Result<()> {
        let role_id = self.role_id(role)?;
        let parent_id = self.role_id(parent)?;
        if self.role_closure(std::iter::once(&parent_id)).contains(&role_id) {
            return Err(ModelError::HierarchyCycle {
                role: role_id,
                parent: parent_id,
            });
        }
        self.roles
            .get_mut(&role_id)
            .expect("checked above")
            .parents
            .insert(parent_id);
        self.debug_check();
        Ok(())
    }

    /// Grants `perm` to `role`. Granting an already held permission is a no-op.
    pub fn grant_permission(&mut self, role: &str, perm: Permission) -> Result<()> {
        let entry = self
            .roles
            .get_mut(role)
            .ok_or_else(|| ModelError::UnknownRole(role.to_string()))?;
        entry.permissions.insert(perm);
        self.debug_check();
        Ok(())
    }

    /// Assigns `role` to `user`, enforcing separation of duty and any
    /// per-role user cap.
    pub fn assign_role(&mut self, user: &str, role: &str, now: Timestamp) -> Result<Assignment> {
        self.assign_role_with(user, role, now, true)
    }

    /// As [`assign_role`](Self::assign_role); `enforce_caps = false` skips the
    /// max-users check (plain RBAC mode and bundle import).
    pub fn assign_role_with(
        &mut self,
        user: &str,
        role: &str,
        now: Timestamp,
        enforce_caps: bool,
    ) -> Result<Assignment> {
        let role_id = self.role_id(role)?;
        let held = self
            .users
            .get(user)
            .ok_or_else(|| ModelError::UnknownUser(user.to_string()))?;
        let user_id = self.users.get_key_value(user).map(|(k, _)| k.clone()).expect("present");
        if held.contains_key(&role_id) {
            return Err(ModelError::DuplicateAssignment {
                user: user_id,
                role: role_id,
            });
        }
        for constraint in &self.sod {
            if let Some(partner) = constraint.partner(&role_id) {
                if held.contains_key(partner) {
                    return Err(ModelError::SoDViolation {
                        user: user_id,
                        role: role_id,
                        held: partner.clone(),
                    });
                }
            }
        }
        if enforce_caps {
            if let CapStatus::AtCapacity(policy) = restriction::check_user_cap(self, &role_id)? {
                return Err(ModelError::RoleCapacityExceeded { role: role_id, policy });
            }
        }
        self.users
            .get_mut(&user_id)
            .expect("present")
            .insert(role_id.clone(), now);
        self.debug_check();
        Ok(Assignment {
            user: user_id,
            role: role_id,
            assigned_at: now,
        })
    }

    pub fn revoke_role(&mut self, user: &str, role: &str) -> Result<()> {
        let missing = || ModelError::UnknownAssignment {
            user: user.to_string(),
            role: role.to_string(),
        };
        let held = self.users.get_mut(user).ok_or_else(missing)?;
        held.remove(role).ok_or_else(missing)?;
        self.debug_check();
        Ok(())
    }

    /// Declares `a` and `b` mutually exclusive. Rejected if some user
    /// already holds both.
    pub fn add_sod_constraint(&mut self, a: &str, b: &str) -> Result<()> {
        let a = self.role_id(a)?;
        let b = self.role_id(b)?;
        let constraint = SodConstraint::new(a, b)?;
        for (user, held) in &self.users {
            if held.contains_key(&constraint.role_a) && held.contains_key(&constraint.role_b) {
                return Err(ModelError::ExistingConflict {
                    user: user.clone(),
                    role_a: constraint.role_a.clone(),
                    role_b: constraint.role_b.clone(),
                });
            }
        }
        self.sod.insert(constraint);
        self.debug_check();
        Ok(())
    }

    /// Stores a restriction policy. Its target, if any, must name an
    /// existing principal of the policy's scope.
    pub fn add_restriction(&mut self, policy: RestrictionPolicy) -> Result<()> {
        if self.restrictions.contains_key(&policy.id) {
            return Err(ModelError::DuplicatePolicy(policy.id));
        }
        if let Some(target) = &policy.target {
            match policy.scope {
                Scope::PerUser if !self.has_user(target) => {
                    return Err(ModelError::UnknownUser(target.clone()))
                }
                Scope::PerRole if !self.has_role(target) => {
                    return Err(ModelError::UnknownRole(target.clone()))
                }
                _ => {}
            }
        }
        self.restrictions.insert(policy.id.clone(), policy);
        self.debug_check();
        Ok(())
    }

    pub fn add_obligation(&mut self, policy: ObligationPolicy) -> Result<()> {
        if self.obligations.contains_key(&policy.id) {
            return Err(ModelError::DuplicatePolicy(policy.id));
        }
        if let Some(role) = policy.applies_to.iter().find(|r| !self.has_role(r.as_str())) {
            return Err(ModelError::UnknownRole(role.to_string()));
        }
        self.obligations.insert(policy.id.clone(), policy);
        self.debug_check();
        Ok(())
    }

    pub fn add_table(&mut self, table: TableSchema) -> Result<()> {
        if self.schema.contains_key(&table.name) {
            return Err(ModelError::DuplicateTable(table.name));
        }
        self.schema.insert(table.name.clone(), table);
        Ok(())
    }

    fn role_id(&self, name: &str) -> Result<RoleId> {
        self.roles
            .get_key_value(name)
            .map(|(k, _)| k.clone())
            .ok_or_else(|| ModelError::UnknownRole(name.to_string()))
    }

    pub(crate) fn set_assigned_at(&mut self, user: &UserId, role: &RoleId, at: Timestamp) {
        if let Some(t) = self.users.get_mut(user).and_then(|held| held.get_mut(role)) {
            *t = at;
        }
    }

    // ---- invariants --------------------------------------------------

    /// Same directory with every assignment timestamp zeroed. Migration does
    /// not carry assignment times, so round-trip comparisons go through this.
    pub fn without_timestamps(&self) -> DirectoryState {
        let mut out = self.clone();
        for held in out.users.values_mut() {
            for at in held.values_mut() {
                *at = Timestamp(0);
            }
        }
        out
    }

    /// Checks every structural invariant: referential integrity, an acyclic
    /// hierarchy and no violated SoD pair.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for role in self.roles.values() {
            for parent in &role.parents {
                if !self.roles.contains_key(parent) {
                    return Err(format!("role {} inherits unknown role {parent}", role.name));
                }
            }
        }
        if topological_order(&self.roles).is_none() {
            return Err("role hierarchy contains a cycle".into());
        }
        for (user, held) in &self.users {
            for role in held.keys() {
                if !self.roles.contains_key(role) {
                    return Err(format!("{user} holds unknown role {role}"));
                }
            }
            for c in &self.sod {
                if held.contains_key(&c.role_a) && held.contains_key(&c.role_b) {
                    return Err(format!("{user} violates SoD ({}, {})", c.role_a, c.role_b));
                }
            }
        }
        for c in &self.sod {
            if !self.roles.contains_key(&c.role_a) || !self.roles.contains_key(&c.role_b) {
                return Err(format!("SoD pair ({}, {}) names an unknown role", c.role_a, c.role_b));
            }
        }
        for ob in self.obligations.values() {
            if let Some(r) = ob.applies_to.iter().find(|r| !self.roles.contains_key(*r)) {
                return Err(format!("obligation {} applies to unknown role {r}", ob.id));
            }
        }
        Ok(())
    }

    #[inline]
    fn debug_check(&self) {
        #[cfg(debug_assertions)]
        if let Err(e) = self.check_invariants() {
            panic!("directory invariant broken: {e}");
        }
    }
}

/// Kahn's algorithm over the inherits-from edges. `None` when cyclic.
pub fn topological_order(roles: &BTreeMap<RoleId, Role>) -> Option<Vec<RoleId>> {
    let mut pending: BTreeMap<&RoleId, usize> = roles
        .values()
        .map(|r| (&r.name, r.parents.iter().filter(|p| roles.contains_key(*p)).count()))
        .collect();
    let mut children: BTreeMap<&RoleId, Vec<&RoleId>> = BTreeMap::new();
    for role in roles.values() {
        for parent in role.parents.iter().filter(|p| roles.contains_key(*p)) {
            children.entry(parent).or_default().push(&role.name);
        }
    }
    let mut ready: VecDeque<&RoleId> = pending
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(r, _)| *r)
        .collect();
    let mut order = Vec::with_capacity(roles.len());
    while let Some(role) = ready.pop_front() {
        order.push(role.clone());
        for child in children.get(role).into_iter().flatten() {
            let n = pending.get_mut(child).expect("known role");
            *n -= 1;
            if *n == 0 {
                ready.push_back(child);
            }
        }
    }
    (order.len() == roles.len()).then_some(order)
}
