//! Bundle grammar checks, referential checks and construction of the
//! directory from a validated document.

use std::collections::{BTreeMap, BTreeSet};

use crate::decision::{Modality, ObligationPolicy};
use crate::ids::{is_context_value, is_token, RoleId, SchemaName, Timestamp};
use crate::model::{DirectoryState, ModelError, Permission};
use crate::restriction::{RestrictionPolicy, Scope};

use super::tree::{self, Element};
use super::{ColumnDef, ColumnType, Issue, Severity, TableSchema, ValidationReport, FORMAT_VERSION};

const SECTIONS: [&str; 6] = ["schema", "roles", "users", "restrictions", "sod", "obligations"];
const OPTIONAL_SECTIONS: [&str; 1] = ["obligations"];

#[derive(Default)]
struct Checker {
    issues: Vec<Issue>,
}

impl Checker {
    fn error(&mut self, locator: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            locator: locator.to_string(),
            message: message.into(),
        });
    }

    fn warn(&mut self, locator: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            locator: locator.to_string(),
            message: message.into(),
        });
    }

    /// Reports unknown and missing attributes. Returns false if a required
    /// attribute is missing.
    fn attrs(&mut self, el: &Element, loc: &str, required: &[&str], optional: &[&str]) -> bool {
        for (k, _) in &el.attrs {
            if !required.contains(&k.as_str()) && !optional.contains(&k.as_str()) {
                self.error(loc, format!("unknown attribute {k:?} on <{}>", el.name));
            }
        }
        let mut complete = true;
        for k in required {
            if el.attr(k).is_none() {
                self.error(loc, format!("missing attribute {k:?} on <{}>", el.name));
                complete = false;
            }
        }
        complete
    }

    /// Yields the children of `parent` named `expected`, reporting others.
    fn children<'a>(&mut self, parent: &'a Element, loc: &str, expected: &[&str]) -> Vec<&'a Element> {
        let mut out = Vec::new();
        for child in &parent.children {
            if expected.contains(&child.name.as_str()) {
                out.push(child);
            } else {
                self.error(loc, format!("unexpected element <{}> inside <{}>", child.name, parent.name));
            }
        }
        out
    }

    fn token(&mut self, loc: &str, what: &str, value: &str) -> bool {
        if is_token(value) {
            true
        } else {
            self.error(loc, format!("invalid {what} {value:?}"));
            false
        }
    }

    fn report(self) -> ValidationReport {
        let ok = !self.issues.iter().any(|i| i.severity == Severity::Error);
        ValidationReport { ok, issues: self.issues }
    }
}

fn locate(parent: &str, el: &Element, key: &str, index: usize) -> String {
    match el.attr(key) {
        Some(v) if !v.contains('\'') => format!("{parent}/{}[@{key}='{v}']", el.name),
        _ => format!("{parent}/{}[{}]", el.name, index + 1),
    }
}

struct RawRole {
    name: String,
    loc: String,
    parents: Vec<(String, String)>,
    permissions: Vec<Permission>,
}

struct RawUser {
    name: String,
    loc: String,
    memberships: Vec<(String, String)>,
}

/// Everything that parsed cleanly, in document order.
#[derive(Default)]
pub(crate) struct Parsed {
    tables: Vec<TableSchema>,
    roles: Vec<RawRole>,
    users: Vec<RawUser>,
    restrictions: Vec<(RestrictionPolicy, String)>,
    sod: Vec<(String, String, String)>,
    obligations: Vec<(ObligationPolicy, String)>,
}

fn parse_u64(c: &mut Checker, loc: &str, el: &Element, key: &str) -> Option<u64> {
    let raw = el.attr(key)?;
    match raw.parse::<u64>() {
        Ok(v) => Some(v),
        Err(_) => {
            c.error(loc, format!("{key} must be a non-negative integer, got {raw:?}"));
            None
        }
    }
}

fn schema_section(c: &mut Checker, section: &Element, out: &mut Parsed) {
    let base = "/migration/schema";
    let mut seen = BTreeSet::new();
    for (i, table) in c.children(section, base, &["table"]).into_iter().enumerate() {
        let loc = locate(base, table, "name", i);
        if !c.attrs(table, &loc, &["name"], &[]) {
            continue;
        }
        let name = table.attr("name").expect("checked");
        let mut valid = c.token(&loc, "table name", name);
        if !seen.insert(name.to_string()) {
            c.error(&loc, format!("duplicate table {name:?}"));
            valid = false;
        }
        let mut columns: Vec<ColumnDef> = Vec::new();
        for (j, col) in c.children(table, &loc, &["column"]).into_iter().enumerate() {
            let col_loc = locate(&loc, col, "name", j);
            if !c.attrs(col, &col_loc, &["name", "type", "nullable"], &[]) {
                valid = false;
                continue;
            }
            let cname = col.attr("name").expect("checked");
            let ctype = col.attr("type").expect("checked");
            let nullable = col.attr("nullable").expect("checked");
            let Ok(cname_id) = SchemaName::new(cname) else {
                c.error(&col_loc, format!("invalid column name {cname:?}"));
                valid = false;
                continue;
            };
            let column_type = match ctype.parse::<ColumnType>() {
                Ok(t) => t,
                Err(e) => {
                    c.error(&col_loc, e);
                    valid = false;
                    continue;
                }
            };
            let nullable = match nullable {
                "true" => true,
                "false" => false,
                other => {
                    c.error(&col_loc, format!("nullable must be true or false, got {other:?}"));
                    valid = false;
                    continue;
                }
            };
            if columns.iter().any(|p| p.name == cname_id) {
                c.error(&col_loc, format!("duplicate column {cname:?}"));
                valid = false;
                continue;
            }
            columns.push(ColumnDef {
                name: cname_id,
                column_type,
                nullable,
            });
        }
        if valid {
            if let Ok(t) = TableSchema::new(name, columns) {
                out.tables.push(t);
            }
        }
    }
}

fn roles_section(c: &mut Checker, section: &Element, out: &mut Parsed) {
    let base = "/migration/roles";
    let mut seen = BTreeSet::new();
    for (i, role) in c.children(section, base, &["role"]).into_iter().enumerate() {
        let loc = locate(base, role, "name", i);
        if !c.attrs(role, &loc, &["name"], &[]) {
            continue;
        }
        let name = role.attr("name").expect("checked");
        if !c.token(&loc, "role name", name) {
            continue;
        }
        if !seen.insert(name.to_string()) {
            c.error(&loc, format!("duplicate role {name:?}"));
            continue;
        }
        let mut raw = RawRole {
            name: name.to_string(),
            loc: loc.clone(),
            parents: Vec::new(),
            permissions: Vec::new(),
        };
        for (j, child) in c.children(role, &loc, &["inherits", "permission"]).into_iter().enumerate() {
            match child.name.as_str() {
                "inherits" => {
                    let cloc = locate(&loc, child, "role", j);
                    if c.attrs(child, &cloc, &["role"], &[]) {
                        let parent = child.attr("role").expect("checked");
                        if raw.parents.iter().any(|(p, _)| p == parent) {
                            c.warn(&cloc, format!("duplicate inherits {parent:?}"));
                        } else {
                            raw.parents.push((parent.to_string(), cloc));
                        }
                    }
                }
                _ => {
                    let cloc = format!("{loc}/permission[{}]", j + 1);
                    if !c.attrs(child, &cloc, &["action", "resource"], &[]) {
                        continue;
                    }
                    let action = child.attr("action").expect("checked");
                    let resource = child.attr("resource").expect("checked");
                    match Permission::parse(resource, action) {
                        Ok(p) if raw.permissions.contains(&p) => {
                            c.warn(&cloc, format!("duplicate permission {p}"));
                        }
                        Ok(p) => raw.permissions.push(p),
                        Err(e) => c.error(&cloc, e.to_string()),
                    }
                }
            }
        }
        if raw.parents.is_empty() && raw.permissions.is_empty() {
            c.warn(&loc, format!("role {name:?} is empty (no permissions, inherits nothing)"));
        }
        out.roles.push(raw);
    }
}

fn users_section(c: &mut Checker, section: &Element, out: &mut Parsed) {
    let base = "/migration/users";
    let mut seen = BTreeSet::new();
    for (i, user) in c.children(section, base, &["user"]).into_iter().enumerate() {
        let loc = locate(base, user, "name", i);
        if !c.attrs(user, &loc, &["name"], &[]) {
            continue;
        }
        let name = user.attr("name").expect("checked");
        if !c.token(&loc, "user name", name) {
            continue;
        }
        if !seen.insert(name.to_string()) {
            c.error(&loc, format!("duplicate user {name:?}"));
            continue;
        }
        let mut raw = RawUser {
            name: name.to_string(),
            loc: loc.clone(),
            memberships: Vec::new(),
        };
        for (j, m) in c.children(user, &loc, &["member-of"]).into_iter().enumerate() {
            let mloc = locate(&loc, m, "role", j);
            if c.attrs(m, &mloc, &["role"], &[]) {
                let role = m.attr("role").expect("checked");
                if raw.memberships.iter().any(|(r, _)| r == role) {
                    c.warn(&mloc, format!("duplicate membership {role:?}"));
                } else {
                    raw.memberships.push((role.to_string(), mloc));
                }
            }
        }
        if raw.memberships.is_empty() {
            c.warn(&loc, format!("user {name:?} has no role memberships"));
        }
        out.users.push(raw);
    }
}

fn restrictions_section(c: &mut Checker, section: &Element, out: &mut Parsed) {
    let base = "/migration/restrictions";
    let mut seen = BTreeSet::new();
    for (i, el) in c.children(section, base, &["restriction"]).into_iter().enumerate() {
        let loc = locate(base, el, "id", i);
        if !c.attrs(
            el,
            &loc,
            &["id", "scope", "max-transactions", "window-seconds"],
            &["target", "max-users"],
        ) {
            continue;
        }
        let id = el.attr("id").expect("checked");
        if !seen.insert(id.to_string()) {
            c.error(&loc, format!("duplicate restriction id {id:?}"));
            continue;
        }
        let scope = match el.attr("scope").expect("checked").parse::<Scope>() {
            Ok(s) => s,
            Err(e) => {
                c.error(&loc, e.to_string());
                continue;
            }
        };
        let (Some(max_tx), Some(window)) = (
            parse_u64(c, &loc, el, "max-transactions"),
            parse_u64(c, &loc, el, "window-seconds"),
        ) else {
            continue;
        };
        let max_users = match el.attr("max-users") {
            Some(_) => match parse_u64(c, &loc, el, "max-users") {
                Some(v) => Some(v),
                None => continue,
            },
            None => None,
        };
        let (Ok(max_tx), Ok(max_users)) = (
            u32::try_from(max_tx),
            max_users.map(u32::try_from).transpose(),
        ) else {
            c.error(&loc, "limit out of range");
            continue;
        };
        match RestrictionPolicy::new(id, scope, el.attr("target"), max_tx, window, max_users) {
            Ok(p) => out.restrictions.push((p, loc)),
            Err(e) => c.error(&loc, e.to_string()),
        }
    }
}

fn sod_section(c: &mut Checker, section: &Element, out: &mut Parsed) {
    let base = "/migration/sod";
    let mut seen = BTreeSet::new();
    for (i, el) in c.children(section, base, &["exclusive"]).into_iter().enumerate() {
        let loc = format!("{base}/exclusive[{}]", i + 1);
        if !c.attrs(el, &loc, &["role-a", "role-b"], &[]) {
            continue;
        }
        let a = el.attr("role-a").expect("checked");
        let b = el.attr("role-b").expect("checked");
        if a == b {
            c.error(&loc, format!("role {a:?} cannot be exclusive with itself"));
            continue;
        }
        if a > b {
            c.warn(&loc, "role-a should sort before role-b");
        }
        let pair = if a < b { (a, b) } else { (b, a) };
        if !seen.insert(pair) {
            c.warn(&loc, format!("duplicate exclusive pair ({}, {})", pair.0, pair.1));
            continue;
        }
        out.sod.push((pair.0.to_string(), pair.1.to_string(), loc));
    }
}

fn obligations_section(c: &mut Checker, section: &Element, out: &mut Parsed) {
    let base = "/migration/obligations";
    let mut seen = BTreeSet::new();
    for (i, el) in c.children(section, base, &["obligation"]).into_iter().enumerate() {
        let loc = locate(base, el, "id", i);
        if !c.attrs(el, &loc, &["id", "modality", "action-token"], &[]) {
            continue;
        }
        let id = el.attr("id").expect("checked");
        if !seen.insert(id.to_string()) {
            c.error(&loc, format!("duplicate obligation id {id:?}"));
            continue;
        }
        let modality = match el.attr("modality").expect("checked").parse::<Modality>() {
            Ok(m) => m,
            Err(e) => {
                c.error(&loc, e.to_string());
                continue;
            }
        };
        let mut applies = Vec::new();
        let mut condition = Vec::new();
        let mut valid = true;
        for (j, child) in c.children(el, &loc, &["applies-to", "when"]).into_iter().enumerate() {
            if child.name == "applies-to" {
                let cloc = locate(&loc, child, "role", j);
                if c.attrs(child, &cloc, &["role"], &[]) {
                    match RoleId::new(child.attr("role").expect("checked")) {
                        Ok(r) => applies.push(r),
                        Err(e) => {
                            c.error(&cloc, e.to_string());
                            valid = false;
                        }
                    }
                } else {
                    valid = false;
                }
            } else {
                let cloc = locate(&loc, child, "key", j);
                if c.attrs(child, &cloc, &["key", "value"], &[]) {
                    let value = child.attr("value").expect("checked");
                    if !is_context_value(value) {
                        c.error(&cloc, "condition value contains control characters");
                        valid = false;
                    }
                    condition.push((child.attr("key").expect("checked").to_string(), value.to_string()));
                } else {
                    valid = false;
                }
            }
        }
        if !valid {
            continue;
        }
        let action_token = el.attr("action-token").expect("checked");
        match ObligationPolicy::new(id, modality, action_token, applies, condition) {
            Ok(p) => out.obligations.push((p, loc)),
            Err(e) => c.error(&loc, e.to_string()),
        }
    }
}

fn structure(c: &mut Checker, doc: &Element) -> Parsed {
    let mut out = Parsed::default();
    if doc.name != "migration" {
        c.error("/", format!("root element must be <migration>, found <{}>", doc.name));
        return out;
    }
    let root = "/migration";
    if c.attrs(doc, root, &["format-version"], &[]) {
        let v = doc.attr("format-version").expect("checked");
        if v != FORMAT_VERSION {
            c.error(root, format!("unsupported format-version {v:?} (expected {FORMAT_VERSION})"));
        }
    }
    let mut next = 0;
    let mut seen = BTreeSet::new();
    for child in &doc.children {
        let loc = format!("{root}/{}", child.name);
        let Some(pos) = SECTIONS.iter().position(|s| *s == child.name) else {
            c.error(root, format!("unexpected element <{}>", child.name));
            continue;
        };
        if !seen.insert(pos) {
            c.error(&loc, format!("duplicate <{}> section", child.name));
            continue;
        }
        if pos < next {
            c.error(&loc, format!("<{}> is out of order", child.name));
        }
        next = next.max(pos);
        c.attrs(child, &loc, &[], &[]);
        match pos {
            0 => schema_section(c, child, &mut out),
            1 => roles_section(c, child, &mut out),
            2 => users_section(c, child, &mut out),
            3 => restrictions_section(c, child, &mut out),
            4 => sod_section(c, child, &mut out),
            _ => obligations_section(c, child, &mut out),
        }
    }
    for (pos, name) in SECTIONS.iter().enumerate() {
        if !seen.contains(&pos) && !OPTIONAL_SECTIONS.contains(name) {
            c.error(root, format!("missing <{name}> section"));
        }
    }
    out
}

fn references(c: &mut Checker, p: &Parsed) {
    let roles: BTreeMap<&str, &RawRole> = p.roles.iter().map(|r| (r.name.as_str(), r)).collect();
    let users: BTreeSet<&str> = p.users.iter().map(|u| u.name.as_str()).collect();

    for role in &p.roles {
        for (parent, loc) in &role.parents {
            if !roles.contains_key(parent.as_str()) {
                c.error(loc, format!("inherits unknown role {parent:?}"));
            }
        }
    }

    // A role lies on a cycle iff it is reachable from one of its parents.
    for role in &p.roles {
        let mut stack: Vec<&str> = role.parents.iter().map(|(n, _)| n.as_str()).collect();
        let mut seen = BTreeSet::new();
        let mut cyclic = false;
        while let Some(n) = stack.pop() {
            if n == role.name {
                cyclic = true;
                break;
            }
            if seen.insert(n) {
                if let Some(r) = roles.get(n) {
                    stack.extend(r.parents.iter().map(|(p, _)| p.as_str()));
                }
            }
        }
        if cyclic {
            c.error(&role.loc, format!("hierarchy cycle through role {:?}", role.name));
        }
    }

    for user in &p.users {
        for (role, loc) in &user.memberships {
            if !roles.contains_key(role.as_str()) {
                c.error(loc, format!("member of unknown role {role:?}"));
            }
        }
    }

    for (a, b, loc) in &p.sod {
        for r in [a, b] {
            if !roles.contains_key(r.as_str()) {
                c.error(loc, format!("exclusive pair names unknown role {r:?}"));
            }
        }
        for user in &p.users {
            let holds = |r: &str| user.memberships.iter().any(|(m, _)| m == r);
            if holds(a) && holds(b) {
                c.error(
                    &user.loc,
                    format!("user {:?} is a member of exclusive roles {a:?} and {b:?}", user.name),
                );
            }
        }
    }

    for (policy, loc) in &p.restrictions {
        let Some(target) = &policy.target else {
            continue;
        };
        match policy.scope {
            Scope::PerUser if !users.contains(target.as_str()) => {
                c.error(loc, format!("target names unknown user {target:?}"))
            }
            Scope::PerRole if !roles.contains_key(target.as_str()) => {
                c.error(loc, format!("target names unknown role {target:?}"))
            }
            _ => {}
        }
        if let (Scope::PerRole, Some(max)) = (policy.scope, policy.max_users) {
            let members = p
                .users
                .iter()
                .filter(|u| u.memberships.iter().any(|(m, _)| m == target))
                .count();
            if members as u64 > u64::from(max) {
                c.warn(loc, format!("role {target:?} already has {members} members, above max-users {max}"));
            }
        }
    }

    for (policy, loc) in &p.obligations {
        for r in &policy.applies_to {
            if !roles.contains_key(r.as_str()) {
                c.error(loc, format!("applies to unknown role {r:?}"));
            }
        }
    }
}

fn analyze(doc: &Element) -> (ValidationReport, Parsed) {
    let mut c = Checker::default();
    let parsed = structure(&mut c, doc);
    references(&mut c, &parsed);
    (c.report(), parsed)
}

pub(crate) fn validate_tree(doc: &Element) -> ValidationReport {
    analyze(doc).0
}

/// Checks a bundle without importing it. Malformed XML is reported as an
/// error issue rather than returned.
pub fn validate_bundle(xml: &[u8]) -> ValidationReport {
    match tree::parse(xml) {
        Ok(doc) => validate_tree(&doc),
        Err(e) => {
            let mut c = Checker::default();
            c.error("/", format!("malformed XML: {e}"));
            c.report()
        }
    }
}

fn assemble(p: &Parsed, now: Timestamp) -> Result<DirectoryState, ModelError> {
    let mut d = DirectoryState::new();
    for t in &p.tables {
        d.add_table(t.clone())?;
    }
    for r in &p.roles {
        d.create_role(&r.name, [])?;
    }
    for r in &p.roles {
        for (parent, _) in &r.parents {
            d.add_parent(&r.name, parent)?;
        }
        for perm in &r.permissions {
            d.grant_permission(&r.name, perm.clone())?;
        }
    }
    for u in &p.users {
        d.create_user(&u.name)?;
        for (role, _) in &u.memberships {
            d.assign_role_with(&u.name, role, now, false)?;
        }
    }
    for (policy, _) in &p.restrictions {
        d.add_restriction(policy.clone())?;
    }
    for (a, b, _) in &p.sod {
        d.add_sod_constraint(a, b)?;
    }
    for (policy, _) in &p.obligations {
        d.add_obligation(policy.clone())?;
    }
    Ok(d)
}

/// Builds the directory from a document that validated cleanly.
pub(crate) fn build(doc: &Element, now: Timestamp) -> Result<DirectoryState, ValidationReport> {
    let (report, parsed) = analyze(doc);
    if !report.ok {
        return Err(report);
    }
    assemble(&parsed, now).map_err(|e| ValidationReport {
        ok: false,
        issues: vec![Issue {
            severity: Severity::Error,
            locator: "/migration".into(),
            message: e.to_string(),
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(roles: &str, users: &str, sod: &str) -> String {
        format!(
            "<migration format-version=\"1.0\"><schema/><roles>{roles}</roles><users>{users}</users><restrictions/><sod>{sod}</sod></migration>"
        )
    }

    #[test]
    fn consistent_bundle_ok_with_warnings() {
        let xml = bundle(r#"<role name="a"/>"#, r#"<user name="u"/>"#, "");
        let r = validate_bundle(xml.as_bytes());
        assert!(r.ok, "{r}");
        assert_eq!(r.warnings().count(), 2);
    }

    #[test]
    fn two_node_cycle_located_at_role() {
        let xml = bundle(
            r#"<role name="a"><inherits role="b"/></role><role name="b"><inherits role="a"/></role>"#,
            "",
            "",
        );
        let r = validate_bundle(xml.as_bytes());
        assert!(!r.ok);
        let cycles: Vec<_> = r.errors().filter(|i| i.message.contains("hierarchy cycle")).collect();
        assert_eq!(cycles.len(), 2);
        assert_eq!(cycles[0].locator, "/migration/roles/role[@name='a']");
    }

    #[test]
    fn sod_conflict_with_memberships() {
        let xml = bundle(
            r#"<role name="auditor"/><role name="payer"/>"#,
            r#"<user name="alice"><member-of role="auditor"/><member-of role="payer"/></user>"#,
            r#"<exclusive role-a="auditor" role-b="payer"/>"#,
        );
        let r = validate_bundle(xml.as_bytes());
        assert!(!r.ok);
        let e: Vec<_> = r.errors().collect();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].locator, "/migration/users/user[@name='alice']");
    }

    #[test]
    fn grammar_violations_reported() {
        let xml = r#"<migration format-version="1.0" extra="x"><roles><role name="a" colour="red"><permission action="fly" resource="docs"/></role><bogus/></roles><schema/></migration>"#;
        let r = validate_bundle(xml.as_bytes());
        let msgs: Vec<_> = r.errors().map(|i| i.message.clone()).collect();
        assert!(msgs.iter().any(|m| m.contains("unknown attribute \"extra\"")));
        assert!(msgs.iter().any(|m| m.contains("unknown attribute \"colour\"")));
        assert!(msgs.iter().any(|m| m.contains("unknown action")));
        assert!(msgs.iter().any(|m| m.contains("unexpected element <bogus>")));
        assert!(msgs.iter().any(|m| m.contains("out of order")));
        assert!(msgs.iter().any(|m| m.contains("missing <users>")));
    }

    #[test]
    fn duplicates_and_bad_restrictions() {
        let xml = r#"<migration format-version="1.0"><schema><table name="t"><column name="c" type="string" nullable="true"/><column name="c" type="blob" nullable="maybe"/></table></schema>
<roles><role name="a"/><role name="a"/></roles><users><user name="u"/></users>
<restrictions><restriction id="p" scope="per-user" max-transactions="0" window-seconds="5"/><restriction id="q" scope="per-user" target="ghost" max-transactions="1" window-seconds="5"/><restriction id="r" scope="per-user" max-transactions="1" window-seconds="5" max-users="2"/></restrictions><sod><exclusive role-a="a" role-b="a"/></sod></migration>"#;
        let r = validate_bundle(xml.as_bytes());
        let msgs: Vec<_> = r.errors().map(|i| i.message.clone()).collect();
        for needle in [
            "unknown column type",
            "duplicate role",
            "max-transactions must be at least 1",
            "unknown user \"ghost\"",
            "max-users is only allowed",
            "exclusive with itself",
        ] {
            assert!(msgs.iter().any(|m| m.contains(needle)), "missing {needle}: {msgs:?}");
        }
    }

    #[test]
    fn obligations_section_optional_and_checked() {
        let xml = r#"<migration format-version="1.0"><schema/><roles><role name="a"/></roles><users/><restrictions/><sod/>
<obligations><obligation id="o" modality="maybe" action-token="x"><applies-to role="a"/></obligation><obligation id="p" modality="must" action-token="x"><applies-to role="ghost"/></obligation></obligations></migration>"#;
        let msgs: Vec<_> = validate_bundle(xml.as_bytes()).errors().map(|i| i.message.clone()).collect();
        assert!(msgs.iter().any(|m| m.contains("unknown modality")));
        assert!(msgs.iter().any(|m| m.contains("applies to unknown role")));
    }
}
