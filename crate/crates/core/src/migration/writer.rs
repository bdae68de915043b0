use crate::model::DirectoryState;

use super::FORMAT_VERSION;

struct Canonical {
    out: String,
}

fn escape_attr(value: &str, out: &mut String) {
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
}

impl Canonical {
    fn tag(&mut self, depth: usize, name: &str, attrs: &mut [(&str, &str)], close: &str) {
        attrs.sort_by(|a, b| a.0.cmp(b.0));
        for _ in 0..depth {
            self.out.push_str("  ");
        }
        self.out.push('<');
        self.out.push_str(name);
        for (k, v) in attrs.iter() {
            self.out.push(' ');
            self.out.push_str(k);
            self.out.push_str("=\"");
            escape_attr(v, &mut self.out);
            self.out.push('"');
        }
        self.out.push_str(close);
        self.out.push('\n');
    }

    fn empty(&mut self, depth: usize, name: &str, attrs: &mut [(&str, &str)]) {
        self.tag(depth, name, attrs, "/>");
    }

    fn open(&mut self, depth: usize, name: &str, attrs: &mut [(&str, &str)]) {
        self.tag(depth, name, attrs, ">");
    }

    fn close(&mut self, depth: usize, name: &str) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
        self.out.push_str("</");
        self.out.push_str(name);
        self.out.push_str(">\n");
    }

    /// Writes `<name>` with children, or `<name/>` when there are none.
    fn section<T>(
        &mut self,
        depth: usize,
        name: &str,
        attrs: &mut [(&str, &str)],
        items: &[T],
        mut each: impl FnMut(&mut Self, &T),
    ) {
        if items.is_empty() {
            self.empty(depth, name, attrs);
        } else {
            self.open(depth, name, attrs);
            for item in items {
                each(self, item);
            }
            self.close(depth, name);
        }
    }
}

/// Serializes `state` to the canonical bundle form. Equal directories
/// produce byte-identical documents regardless of insertion order.
pub fn export_bundle(state: &DirectoryState) -> Vec<u8> {
    let mut w = Canonical { out: String::new() };
    w.out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    w.open(0, "migration", &mut [("format-version", FORMAT_VERSION)]);

    let tables: Vec<_> = state.tables().collect();
    w.section(1, "schema", &mut [], &tables, |w, t| {
        w.section(2, "table", &mut [("name", t.name.as_str())], &t.columns, |w, c| {
            w.empty(
                3,
                "column",
                &mut [
                    ("name", c.name.as_str()),
                    ("type", c.column_type.as_str()),
                    ("nullable", if c.nullable { "true" } else { "false" }),
                ],
            );
        });
    });

    let roles: Vec<_> = state.roles().collect();
    w.section(1, "roles", &mut [], &roles, |w, r| {
        enum Child<'a> {
            Inherits(&'a str),
            Grant(&'a str, &'a str),
        }
        let children: Vec<Child> = r
            .parents
            .iter()
            .map(|p| Child::Inherits(p.as_str()))
            .chain(r.permissions.iter().map(|p| Child::Grant(p.action.as_str(), p.resource.as_str())))
            .collect();
        w.section(2, "role", &mut [("name", r.name.as_str())], &children, |w, c| match c {
            Child::Inherits(p) => w.empty(3, "inherits", &mut [("role", p)]),
            Child::Grant(action, resource) => {
                w.empty(3, "permission", &mut [("action", action), ("resource", resource)])
            }
        });
    });

    let users: Vec<_> = state
        .users()
        .map(|u| (u, state.direct_roles(u.as_str()).expect("listed user")))
        .collect();
    w.section(1, "users", &mut [], &users, |w, (u, held)| {
        let held: Vec<_> = held.iter().collect();
        w.section(2, "user", &mut [("name", u.as_str())], &held, |w, r| {
            w.empty(3, "member-of", &mut [("role", r.as_str())]);
        });
    });

    let restrictions: Vec<_> = state.restrictions().collect();
    w.section(1, "restrictions", &mut [], &restrictions, |w, p| {
        let max_tx = p.max_transactions.to_string();
        let window = p.window_seconds.to_string();
        let max_users = p.max_users.map(|m| m.to_string());
        let mut attrs = vec![
            ("id", p.id.as_str()),
            ("scope", p.scope.as_str()),
            ("max-transactions", max_tx.as_str()),
            ("window-seconds", window.as_str()),
        ];
        if let Some(t) = &p.target {
            attrs.push(("target", t));
        }
        if let Some(m) = &max_users {
            attrs.push(("max-users", m));
        }
        w.empty(2, "restriction", &mut attrs);
    });

    let sod: Vec<_> = state.sod_constraints().collect();
    w.section(1, "sod", &mut [], &sod, |w, c| {
        w.empty(2, "exclusive", &mut [("role-a", c.role_a().as_str()), ("role-b", c.role_b().as_str())]);
    });

    let obligations: Vec<_> = state.obligations().collect();
    if !obligations.is_empty() {
        w.open(1, "obligations", &mut []);
        for ob in obligations {
            w.open(
                2,
                "obligation",
                &mut [
                    ("id", ob.id.as_str()),
                    ("modality", ob.modality.as_str()),
                    ("action-token", ob.action_token.as_str()),
                ],
            );
            for r in &ob.applies_to {
                w.empty(3, "applies-to", &mut [("role", r.as_str())]);
            }
            for (k, v) in &ob.condition {
                w.empty(3, "when", &mut [("key", k), ("value", v)]);
            }
            w.close(2, "obligation");
        }
        w.close(1, "obligations");
    }

    w.close(0, "migration");
    w.out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{Modality, ObligationPolicy};
    use crate::ids::{RoleId, Timestamp};
    use crate::migration::{ColumnDef, ColumnType, TableSchema};
    use crate::model::Permission;
    use crate::restriction::{RestrictionPolicy, Scope};

    #[test]
    fn escapes_attribute_values() {
        let mut s = String::new();
        escape_attr(r#"a&b<c>"d'"#, &mut s);
        assert_eq!(s, "a&amp;b&lt;c&gt;&quot;d'");
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let build = |order: &[&str]| {
            let mut d = DirectoryState::new();
            for r in order {
                d.create_role(r, []).unwrap();
                d.grant_permission(r, Permission::parse("x", "write").unwrap()).unwrap();
                d.grant_permission(r, Permission::parse("x", "delete").unwrap()).unwrap();
            }
            for u in order {
                d.create_user(u).unwrap();
            }
            export_bundle(&d)
        };
        assert_eq!(build(&["c", "a", "b"]), build(&["b", "c", "a"]));
    }

    #[test]
    fn full_sections_render() {
        let mut d = DirectoryState::new();
        d.add_table(
            TableSchema::new(
                "orders",
                vec![
                    ColumnDef {
                        name: "id".parse().unwrap(),
                        column_type: ColumnType::Integer,
                        nullable: false,
                    },
                    ColumnDef {
                        name: "amount".parse().unwrap(),
                        column_type: ColumnType::Decimal,
                        nullable: true,
                    },
                ],
            )
            .unwrap(),
        )
        .unwrap();
        d.create_role("auditor", []).unwrap();
        d.create_role("payer", []).unwrap();
        d.create_user("alice").unwrap();
        d.assign_role("alice", "payer", Timestamp(0)).unwrap();
        d.add_sod_constraint("payer", "auditor").unwrap();
        d.add_restriction(RestrictionPolicy::new("cap", Scope::PerRole, Some("payer"), 5, 60, Some(3)).unwrap())
            .unwrap();
        d.add_obligation(
            ObligationPolicy::new(
                "log",
                Modality::Must,
                "log-download",
                [RoleId::new("payer").unwrap()],
                [("channel".into(), "external & \"other\"".into())],
            )
            .unwrap(),
        )
        .unwrap();
        let xml = String::from_utf8(export_bundle(&d)).unwrap();
        let expected = r#"<?xml version="1.0" encoding="UTF-8"?>
<migration format-version="1.0">
  <schema>
    <table name="orders">
      <column name="id" nullable="false" type="integer"/>
      <column name="amount" nullable="true" type="decimal"/>
    </table>
  </schema>
  <roles>
    <role name="auditor"/>
    <role name="payer"/>
  </roles>
  <users>
    <user name="alice">
      <member-of role="payer"/>
    </user>
  </users>
  <restrictions>
    <restriction id="cap" max-transactions="5" max-users="3" scope="per-role" target="payer" window-seconds="60"/>
  </restrictions>
  <sod>
    <exclusive role-a="auditor" role-b="payer"/>
  </sod>
  <obligations>
    <obligation action-token="log-download" id="log" modality="must">
      <applies-to role="payer"/>
      <when key="channel" value="external &amp; &quot;other&quot;"/>
    </obligation>
  </obligations>
</migration>
"#;
        assert_eq!(xml, expected);
    }
}
