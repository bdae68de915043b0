//! Reference implementations used as test oracles, plus random fixture
//! generators. Nothing here calls into the engine's own closure or window
//! logic: closure is a transitive-closure matrix and windows are replayed by
//! a plain per-key state machine.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rbac_core::decision::Reason;
use rbac_core::migration::{ColumnDef, ColumnType, TableSchema};
use rbac_core::{
    Action, DirectoryState, Effect, Modality, ObligationPolicy, Permission, RestrictionPolicy, RoleId,
    Scope, Timestamp,
};

pub const ROLE_POOL: &[&str] = &[
    "admin", "auditor", "clerk", "dev", "employee", "guest", "manager", "ops", "payer", "qa", "sales",
    "support",
];
pub const USER_POOL: &[&str] = &[
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory",
    "niaj",
];
pub const RESOURCE_POOL: &[&str] = &["docs", "ledger", "orders", "payroll", "reports", "tickets", "wiki"];

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub users: usize,
    pub roles: usize,
    pub permissions: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            users: 10,
            roles: 8,
            permissions: 20,
        }
    }
}

/// A directory described by indices. Role `i` may only inherit from roles
/// with a larger index, which keeps the hierarchy acyclic; names are drawn
/// at random so index order and name order are unrelated.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub users: Vec<String>,
    pub roles: Vec<String>,
    /// (senior, junior)
    pub inherits: BTreeSet<(usize, usize)>,
    pub grants: BTreeSet<(usize, String, Action)>,
    /// normalized to (lo, hi) by index
    pub sod: BTreeSet<(usize, usize)>,
    /// attempted in this order; some may be refused by SoD
    pub assigns: Vec<(usize, usize)>,
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str], n: usize) -> Vec<String> {
    let mut v: Vec<&str> = pool.to_vec();
    v.shuffle(rng);
    v.into_iter().take(n).map(str::to_string).collect()
}

impl Fixture {
    pub fn random<R: Rng>(rng: &mut R, limits: Limits) -> Self {
        let n_users = rng.random_range(0..=limits.users);
        let n_roles = rng.random_range(1..=limits.roles);
        let users = pick(rng, USER_POOL, n_users);
        let roles = pick(rng, ROLE_POOL, n_roles);
        let density: f64 = rng.random_range(0.0..0.6);

        let mut inherits = BTreeSet::new();
        for i in 0..n_roles {
            for j in i + 1..n_roles {
                if rng.random_bool(density) {
                    inherits.insert((i, j));
                }
            }
        }

        let n_grants = rng.random_range(0..=limits.permissions);
        let mut grants = BTreeSet::new();
        let mut distinct = BTreeSet::new();
        for _ in 0..n_grants {
            let res = RESOURCE_POOL[rng.random_range(0..RESOURCE_POOL.len())].to_string();
            let act = Action::ALL[rng.random_range(0..3)];
            if distinct.len() >= limits.permissions && !distinct.contains(&(res.clone(), act)) {
                continue;
            }
            distinct.insert((res.clone(), act));
            grants.insert((rng.random_range(0..n_roles), res, act));
        }

        let mut sod = BTreeSet::new();
        if n_roles >= 2 {
            for _ in 0..rng.random_range(0..=3) {
                let a = rng.random_range(0..n_roles);
                let b = rng.random_range(0..n_roles);
                if a != b {
                    sod.insert((a.min(b), a.max(b)));
                }
            }
        }

        let mut assigns = Vec::new();
        for u in 0..n_users {
            for _ in 0..rng.random_range(0..=3) {
                assigns.push((u, rng.random_range(0..n_roles)));
            }
        }

        Self {
            users,
            roles,
            inherits,
            grants,
            sod,
            assigns,
        }
    }

    /// Builds the directory through the public API and the oracle on the
    /// side. Panics if the engine accepts or refuses an assignment the
    /// oracle disagrees on.
    pub fn build(&self, now: Timestamp) -> (DirectoryState, Oracle) {
        let mut d = DirectoryState::new();
        for i in (0..self.roles.len()).rev() {
            let parents: Vec<&str> = self
                .inherits
                .iter()
                .filter(|(s, _)| *s == i)
                .map(|(_, j)| self.roles[*j].as_str())
                .collect();
            d.create_role(&self.roles[i], parents).expect("create role");
        }
        for (r, res, act) in &self.grants {
            d.grant_permission(&self.roles[*r], Permission::parse(res, act.as_str()).unwrap())
                .expect("grant");
        }
        for (a, b) in &self.sod {
            d.add_sod_constraint(&self.roles[*a], &self.roles[*b]).expect("sod");
        }
        for u in &self.users {
            d.create_user(u).expect("user");
        }

        let mut held: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.users.len()];
        for &(u, r) in &self.assigns {
            let conflict = held[u].contains(&r)
                || held[u].iter().any(|&h| self.sod.contains(&(h.min(r), h.max(r))));
            let got = d.assign_role(&self.users[u], &self.roles[r], now);
            assert_eq!(got.is_ok(), !conflict, "assign {} -> {}: {got:?}", self.users[u], self.roles[r]);
            if !conflict {
                held[u].insert(r);
            }
        }

        let oracle = Oracle::new(self, held);
        (d, oracle)
    }
}

/// Brute-force model of the directory.
#[derive(Debug, Clone)]
pub struct Oracle {
    roles: Vec<String>,
    /// reach[i][j]: role i acquires everything role j has
    reach: Vec<Vec<bool>>,
    grants: Vec<BTreeSet<(String, Action)>>,
    users: BTreeMap<String, BTreeSet<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expected {
    UnknownSubject,
    NoMatch,
    Permit(String),
}

impl Expected {
    pub fn effect(&self) -> Effect {
        match self {
            Expected::Permit(_) => Effect::Permit,
            _ => Effect::Deny,
        }
    }

    pub fn reason(&self) -> Reason {
        match self {
            Expected::UnknownSubject => Reason::UnknownSubject,
            Expected::NoMatch => Reason::NoMatchingPermission,
            Expected::Permit(_) => Reason::Granted,
        }
    }
}

impl Oracle {
    fn new(f: &Fixture, held: Vec<BTreeSet<usize>>) -> Self {
        let n = f.roles.len();
        let mut reach = vec![vec![false; n]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(s, j) in &f.inherits {
            reach[s][j] = true;
        }
        // Warshall
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let mut grants = vec![BTreeSet::new(); n];
        for (r, res, act) in &f.grants {
            grants[*r].insert((res.clone(), *act));
        }
        let users = f.users.iter().cloned().zip(held).collect();
        Self {
            roles: f.roles.clone(),
            reach,
            grants,
            users,
        }
    }

    fn index(&self, role: &str) -> Option<usize> {
        self.roles.iter().position(|r| r == role)
    }

    pub fn effective_roles(&self, user: &str) -> Option<BTreeSet<String>> {
        let held = self.users.get(user)?;
        let mut out = BTreeSet::new();
        for &h in held {
            for (j, &r) in self.reach[h].iter().enumerate() {
                if r {
                    out.insert(self.roles[j].clone());
                }
            }
        }
        Some(out)
    }

    pub fn effective_permissions(&self, role: &str) -> BTreeSet<(String, Action)> {
        let Some(i) = self.index(role) else {
            return BTreeSet::new();
        };
        let mut out = BTreeSet::new();
        for (j, &r) in self.reach[i].iter().enumerate() {
            if r {
                out.extend(self.grants[j].iter().cloned());
            }
        }
        out
    }

    /// Every effective role of `user` that holds the permission.
    pub fn granting_roles(&self, user: &str, resource: &str, action: Action) -> Option<BTreeSet<String>> {
        let roles = self.effective_roles(user)?;
        let want = (resource.to_string(), action);
        Some(
            roles
                .into_iter()
                .filter(|r| self.effective_permissions(r).contains(&want))
                .collect(),
        )
    }

    pub fn expect(&self, user: &str, resource: &str, action: Action) -> Expected {
        match self.granting_roles(user, resource, action) {
            None => Expected::UnknownSubject,
            Some(set) => match set.into_iter().next() {
                Some(r) => Expected::Permit(r),
                None => Expected::NoMatch,
            },
        }
    }

    pub fn users(&self) -> impl Iterator<Item = &String> {
        self.users.keys()
    }

    pub fn assignment_count(&self) -> usize {
        self.users.values().map(BTreeSet::len).sum()
    }
}

/// A request against the pools, including the occasional unknown user or
/// resource.
pub fn random_request<R: Rng>(rng: &mut R, f: &Fixture) -> (String, String, Action) {
    let user = if f.users.is_empty() || rng.random_bool(0.1) {
        "ghost".to_string()
    } else {
        f.users[rng.random_range(0..f.users.len())].clone()
    };
    let resource = if rng.random_bool(0.05) {
        "nowhere".to_string()
    } else {
        RESOURCE_POOL[rng.random_range(0..RESOURCE_POOL.len())].to_string()
    };
    (user, resource, Action::ALL[rng.random_range(0..3)])
}

/// Adds random tables, restrictions and obligations on top of a fixture so
/// every bundle section gets exercised.
pub fn decorate<R: Rng>(rng: &mut R, d: &mut DirectoryState, f: &Fixture) {
    for t in 0..rng.random_range(0..=2) {
        let mut cols = Vec::new();
        for c in 0..rng.random_range(0..=4) {
            let types = [
                ColumnType::String,
                ColumnType::Integer,
                ColumnType::Decimal,
                ColumnType::Boolean,
                ColumnType::Datetime,
            ];
            cols.push(ColumnDef {
                name: format!("col{}", rng.random_range(0..100) * 10 + c).parse().unwrap(),
                column_type: types[rng.random_range(0..types.len())],
                nullable: rng.random_bool(0.5),
            });
        }
        let table = TableSchema::new(&format!("t{t}"), cols).unwrap();
        d.add_table(table).unwrap();
    }
    for p in 0..rng.random_range(0..=3) {
        let per_role = rng.random_bool(0.5);
        let target = if per_role {
            Some(f.roles[rng.random_range(0..f.roles.len())].clone())
        } else if !f.users.is_empty() && rng.random_bool(0.5) {
            Some(f.users[rng.random_range(0..f.users.len())].clone())
        } else {
            None
        };
        let policy = RestrictionPolicy::new(
            &format!("lim-{p}"),
            if per_role { Scope::PerRole } else { Scope::PerUser },
            target.as_deref(),
            rng.random_range(1..50),
            rng.random_range(1..3600),
            if per_role && rng.random_bool(0.3) {
                Some(rng.random_range(1..20))
            } else {
                None
            },
        )
        .unwrap();
        d.add_restriction(policy).unwrap();
    }
    for o in 0..rng.random_range(0..=2) {
        let k = rng.random_range(1..=f.roles.len().min(3));
        let mut names = f.roles.clone();
        names.shuffle(rng);
        let roles: Vec<RoleId> = names[..k].iter().map(|r| RoleId::new(r.as_str()).unwrap()).collect();
        let cond: Vec<(String, String)> = (0..rng.random_range(0..=2))
            .map(|k| (format!("k{k}"), format!("v {}", rng.random_range(0..5))))
            .collect();
        let policy = ObligationPolicy::new(
            &format!("ob-{o}"),
            if rng.random_bool(0.5) { Modality::Must } else { Modality::MustNot },
            "log-it",
            roles,
            cond,
        )
        .unwrap();
        d.add_obligation(policy).unwrap();
    }
}

/// Fixed-window reference: given the arrival times of would-be permits
/// for one (policy, principal), which are admitted.
pub fn reference_windows(times: &[i64], limit: u32, window: i64) -> Vec<Result<bool, ()>> {
    let mut state: Option<(i64, u32)> = None;
    let mut out = Vec::new();
    for &t in times {
        let (start, count) = match state {
            None => (t, 0),
            Some((s, c)) if t < s => {
                if s - t > 2 {
                    out.push(Err(()));
                    continue;
                }
                (s, c)
            }
            Some((s, _)) if t - s >= window => (t, 0),
            Some(sc) => sc,
        };
        if count < limit {
            state = Some((start, count + 1));
            out.push(Ok(true));
        } else {
            out.push(Ok(false));
        }
    }
    out
}

pub type Verdict = (Effect, Reason, Option<RoleId>);

/// Plays `suite` against `engine`, four requests per simulated second
/// starting at `start`. Request ids are fixed so runs are comparable.
pub fn run_suite(
    engine: &rbac_core::Engine,
    clock: &rbac_core::ManualClock,
    start: i64,
    suite: &[(String, String, Action)],
) -> Vec<Verdict> {
    suite
        .iter()
        .enumerate()
        .map(|(i, (u, res, act))| {
            clock.set(start + i as i64 / 4);
            let id = rbac_core::RequestId::new(format!("suite-{i}")).unwrap();
            let req = rbac_core::AccessRequest::new(u, res, *act).with_request_id(id);
            let d = engine.check_access(&req).unwrap().decision;
            (d.effect, d.reason, d.matched_role)
        })
        .collect()
}

/// Applies one random admin operation; failures are fine and expected.
pub fn random_mutation<R: Rng>(rng: &mut R, engine: &rbac_core::Engine) {
    let role = ROLE_POOL[rng.random_range(0..ROLE_POOL.len())];
    let other = ROLE_POOL[rng.random_range(0..ROLE_POOL.len())];
    let user = USER_POOL[rng.random_range(0..USER_POOL.len())];
    let res = RESOURCE_POOL[rng.random_range(0..RESOURCE_POOL.len())];
    let act = Action::ALL[rng.random_range(0..3)];
    let _ = match rng.random_range(0..7) {
        0 => engine.create_user(user),
        1 => engine.create_role(role, &[other]),
        2 => engine.grant_permission(role, Permission::parse(res, act.as_str()).unwrap()),
        3 => engine.assign_role(user, role).map(drop),
        4 => engine.revoke_role(user, role),
        5 => engine.add_sod_constraint(role, other),
        _ => engine.add_parent(role, other),
    };
}
