use rbac_core::Mode;

use crate::kv::Out;

/// The feature comparison reported by `capabilities`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapabilitiesReport {
    pub xml_based_migration: bool,
    pub restricting_user_role: bool,
    pub backup_restoration: bool,
    pub transaction_limit: bool,
    pub security_level: &'static str,
}

impl CapabilitiesReport {
    pub fn for_mode(mode: Mode) -> Self {
        let all = mode.migration() && mode.restrictions() && mode.backup();
        Self {
            xml_based_migration: mode.migration(),
            restricting_user_role: mode.restrictions(),
            backup_restoration: mode.backup(),
            transaction_limit: mode.restrictions(),
            security_level: if all { "MORE" } else { "LESS" },
        }
    }

    fn rows(&self) -> [(&'static str, &'static str, bool); 4] {
        [
            ("XML BASED MIGRATION", "xml-based-migration", self.xml_based_migration),
            ("RESTRICTING USER/ ROLE", "restricting-user-role", self.restricting_user_role),
            ("BACKUP & RESTORATION FACILITY", "backup-restoration", self.backup_restoration),
            ("TRANSACTION LIMIT", "transaction-limit", self.transaction_limit),
        ]
    }

    /// Tab-separated table: four feature rows then the security row.
    pub fn table(&self) -> String {
        let mut out = Out::new();
        for (label, _, on) in self.rows() {
            out.line(&format!("{label}\t{}", if on { "YES" } else { "NO" }));
        }
        out.line(&format!("SECURITY\t{}", self.security_level));
        out.finish()
    }

    pub fn to_kv(&self) -> String {
        let mut out = Out::new();
        for (_, key, on) in self.rows() {
            out.pair(key, on);
        }
        out.pair("security-level", self.security_level);
        out.finish()
    }
}
