//! XML migration bundles carrying schema, roles, memberships, restrictions,
//! SoD pairs and obligations between environments.
//!
//! Bundle layout (elements in this order, `obligations` only when non-empty):
//!
//! ```text
//! <?xml version="1.0" encoding="UTF-8"?>
//! <migration format-version="1.0">
//!   <schema>       <table name>       <column name type nullable/>*
//!   <roles>        <role name>        <inherits role/>* <permission action resource/>*
//!   <users>        <user name>        <member-of role/>*
//!   <restrictions> <restriction id scope target? max-transactions window-seconds max-users?/>*
//!   <sod>          <exclusive role-a role-b/>*
//!   <obligations>  <obligation action-token id modality> <applies-to role/>* <when key value/>*
//! </migration>
//! ```
//!
//! Exports are canonical: UTF-8, LF line endings, two-space indentation,
//! attributes in alphabetical order, siblings sorted by their identifying
//! attribute. Table columns keep their declared order. Assignment
//! timestamps and transaction counters are never carried.

mod tree;
mod validate;
mod writer;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ids::{SchemaName, Timestamp};
use crate::model::{DirectoryState, ModelError};

pub use validate::validate_bundle;
pub use writer::export_bundle;

pub const FORMAT_VERSION: &str = "1.0";

/// Conventional file extension for bundles.
pub const BUNDLE_EXTENSION: &str = ".rbac.xml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    String,
    Integer,
    Decimal,
    Boolean,
    Datetime,
}

impl ColumnType {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::String => "string",
            ColumnType::Integer => "integer",
            ColumnType::Decimal => "decimal",
            ColumnType::Boolean => "boolean",
            ColumnType::Datetime => "datetime",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ColumnType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "string" => Ok(ColumnType::String),
            "integer" => Ok(ColumnType::Integer),
            "decimal" => Ok(ColumnType::Decimal),
            "boolean" => Ok(ColumnType::Boolean),
            "datetime" => Ok(ColumnType::Datetime),
            other => Err(format!("unknown column type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub name: SchemaName,
    pub column_type: ColumnType,
    pub nullable: bool,
}

/// A table definition carried verbatim through migration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    pub name: SchemaName,
    pub columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn new(name: &str, columns: Vec<ColumnDef>) -> Result<Self, ModelError> {
        let name = SchemaName::new(name)?;
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|p| p.name == c.name) {
                return Err(ModelError::InvalidTable(format!("duplicate column {} in {name}", c.name)));
            }
        }
        Ok(Self { name, columns })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Error,
    Warning,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub severity: Severity,
    /// xpath-like path to the offending element, e.g.
    /// `/migration/roles/role[@name='admin']`.
    pub locator: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.severity.as_str(), self.locator, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ok={}", self.ok)?;
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MigrationError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unsupported bundle format-version {0:?}")]
    UnsupportedVersion(String),
    #[error("bundle failed validation with {} error(s)", .0.errors().count())]
    ValidationFailed(ValidationReport),
}

/// Parses, validates and builds a directory from a bundle. Assignments get
/// `now` as their timestamp.
pub fn import_bundle(xml: &[u8], now: Timestamp) -> Result<DirectoryState, MigrationError> {
    let doc = tree::parse(xml).map_err(MigrationError::MalformedXml)?;
    let version = doc.attr("format-version").unwrap_or_default();
    if doc.name == "migration" && version != FORMAT_VERSION {
        return Err(MigrationError::UnsupportedVersion(version.to_string()));
    }
    validate::build(&doc, now).map_err(MigrationError::ValidationFailed)
}
