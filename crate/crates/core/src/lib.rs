//! An embeddable role-based access-control engine.
//!
//! * [`model`] holds users, roles, the role hierarchy, grants, assignments
//!   and separation-of-duty constraints.
//! * [`decision`] runs the two-phase access check and evaluates obligations.
//! * [`restriction`] enforces users-per-role and transactions-per-window
//!   limits, and keeps the anomaly queue and the audit log.
//! * [`migration`] reads and writes the XML migration bundle.
//! * [`backup`] writes and restores checksummed snapshots.
//! * [`engine`] wraps all of it behind a single-writer, many-reader lock.
//!
//! Users never hold permissions directly. There is no call that attaches
//! one to a user:
//!
//! ```compile_fail
//! let mut d = rbac_core::DirectoryState::new();
//! d.create_user("alice").unwrap();
//! d.grant_permission_to_user("alice", rbac_core::Permission::parse("docs", "read").unwrap());
//! ```
//!
//! and `grant_permission` only accepts a role, so naming a user there is a
//! runtime error, not a grant:
//!
//! ```
//! let mut d = rbac_core::DirectoryState::new();
//! d.create_user("alice").unwrap();
//! let p = rbac_core::Permission::parse("docs", "read").unwrap();
//! assert!(matches!(d.grant_permission("alice", p), Err(rbac_core::ModelError::UnknownRole(_))));
//! ```
//!
//! Nor can an [`Assignment`](model::Assignment) carry one:
//!
//! ```compile_fail
//! let a = rbac_core::model::Assignment {
//!     user: "alice".parse().unwrap(),
//!     role: "employee".parse().unwrap(),
//!     assigned_at: rbac_core::Timestamp(0),
//!     permission: rbac_core::Permission::parse("docs", "read").unwrap(),
//! };
//! ```

pub mod backup;
pub mod decision;
pub mod engine;
pub mod ids;
pub mod migration;
pub mod model;
pub mod restriction;

pub use backup::{BackupError, EngineState, LiveStore, SnapshotMeta, SnapshotStore};
pub use decision::{AccessRequest, Decision, Effect, Modality, ObligationPolicy, Reason};
pub use engine::{CheckResult, Clock, Engine, EngineError, ManualClock, Mode, SystemClock};
pub use ids::{PolicyId, RequestId, Resource, RoleId, Timestamp, UserId};
pub use migration::{export_bundle, import_bundle, validate_bundle, MigrationError, ValidationReport};
pub use model::{Action, DirectoryMetrics, DirectoryState, ModelError, Permission};
pub use restriction::{AnomalyEvent, AnomalyLog, AuditFilter, AuditRecord, RestrictionPolicy, Scope};
