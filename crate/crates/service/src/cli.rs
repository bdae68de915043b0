//! `rbac` command line. Admin subcommands open the data directory, apply one
//! operation and save the live state; `serve` runs the HTTP service.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rbac_core::{AccessRequest, Action, AuditFilter, Effect, Mode, Permission, Scope, Timestamp};

use crate::app::App;
use crate::capabilities::CapabilitiesReport;
use crate::config::{ConfigFile, Overrides, ServiceConfig};
use crate::kv::Body;
use crate::wire::{self, ApiError};

#[derive(Debug, Parser)]
#[command(name = "rbac", version, about = "Role-based access control engine")]
pub struct Cli {
    /// Data directory holding the live state and, by default, snapshots.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Classic RBAC only: no restrictions, migration or backup.
    #[arg(long, global = true)]
    pub plain_rbac: bool,
    /// Re-check snapshot checksums when listing.
    #[arg(long, global = true)]
    pub verify: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        api_token: Option<String>,
        #[arg(long)]
        snapshot_interval: Option<u64>,
    },
    /// Decide an access request.
    Check(RequestArgs),
    /// Decide without side effects and show the evaluation trace.
    Explain(RequestArgs),
    /// Create users.
    #[command(subcommand)]
    User(UserCmd),
    /// Create roles and inheritance edges.
    #[command(subcommand)]
    Role(RoleCmd),
    /// Grant a permission to a role.
    Grant {
        role: String,
        resource: String,
        action: Action,
    },
    /// Assign a role to a user.
    Assign { user: String, role: String },
    /// Remove a role from a user.
    Revoke { user: String, role: String },
    /// Separation-of-duty constraints.
    #[command(subcommand)]
    Sod(SodCmd),
    /// User caps and transaction limits.
    #[command(subcommand)]
    Restrict(RestrictCmd),
    /// Must / must-not obligations.
    #[command(subcommand)]
    Obligation(ObligationCmd),
    /// Write the migration bundle to FILE or standard output.
    Export { file: Option<PathBuf> },
    /// Replace the directory with a migration bundle.
    Import { file: PathBuf },
    /// Check a migration bundle without importing it.
    Validate { file: PathBuf },
    /// Create, list and restore snapshots.
    #[command(subcommand)]
    Snapshot(SnapshotCmd),
    /// Query the audit log.
    Audit {
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        effect: Option<Effect>,
        #[arg(long)]
        since: Option<Timestamp>,
        #[arg(long)]
        until: Option<Timestamp>,
        #[arg(long, default_value_t = wire::DEFAULT_AUDIT_LIMIT)]
        limit: usize,
    },
    /// Drain and print pending anomaly events.
    Anomalies,
    /// Directory counts and the role/user ratio.
    Metrics,
    /// Feature table for the current mode.
    Capabilities,
}

#[derive(Debug, Args)]
pub struct RequestArgs {
    #[arg(long)]
    pub user: String,
    #[arg(long)]
    pub resource: String,
    #[arg(long)]
    pub action: Action,
    /// Request context entry, `key=value`. Repeatable.
    #[arg(long = "context", value_parser = parse_pair)]
    pub context: Vec<(String, String)>,
}

#[derive(Debug, Subcommand)]
pub enum UserCmd {
    Add { name: String },
}

#[derive(Debug, Subcommand)]
pub enum RoleCmd {
    Add {
        name: String,
        /// Junior role to inherit from. Repeatable.
        #[arg(long)]
        inherits: Vec<String>,
    },
    /// Make ROLE inherit from PARENT.
    Inherit { role: String, parent: String },
}

#[derive(Debug, Subcommand)]
pub enum SodCmd {
    Add { role_a: String, role_b: String },
}

#[derive(Debug, Subcommand)]
pub enum RestrictCmd {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        scope: Scope,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        max_transactions: u32,
        #[arg(long)]
        window_seconds: u64,
        #[arg(long)]
        max_users: Option<u32>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ObligationCmd {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        modality: String,
        #[arg(long)]
        action_token: String,
        /// Repeatable.
        #[arg(long, required = true)]
        applies_to: Vec<String>,
        /// Condition `key=value`, repeatable.
        #[arg(long, value_parser = parse_pair)]
        when: Vec<(String, String)>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SnapshotCmd {
    Create {
        #[arg(long, default_value = "manual")]
        reason: String,
    },
    List,
    Restore { id: u64 },
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

/// What a command produced: text for stdout, text for stderr, exit code.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: Vec<u8>,
    pub stderr: String,
    pub code: u8,
}

impl Outcome {
    fn ok(stdout: impl Into<Vec<u8>>) -> Self {
        Self {
            stdout: stdout.into(),
            ..Self::default()
        }
    }

    fn fail(stderr: impl Into<String>) -> Self {
        Self {
            stderr: stderr.into(),
            code: 1,
            ..Self::default()
        }
    }
}

impl From<ApiError> for Outcome {
    fn from(e: ApiError) -> Self {
        Outcome::fail(e.body())
    }
}

fn resolve_config(cli: &Cli, over: Overrides) -> Result<ServiceConfig, String> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p).map_err(|e| e.to_string())?,
        None => ConfigFile::default(),
    };
    ServiceConfig::resolve(
        file,
        Overrides {
            data_dir: cli.data_dir.clone(),
            ..over
        },
    )
    .map_err(|e| e.to_string())
}

fn mode(cli: &Cli) -> Mode {
    if cli.plain_rbac {
        Mode::PlainRbac
    } else {
        Mode::Policy
    }
}

fn request(args: &RequestArgs) -> AccessRequest {
    let mut req = AccessRequest::new(&args.user, &args.resource, args.action);
    for (k, v) in &args.context {
        req = req.with_context(k, v);
    }
    req
}

fn read_input(path: &PathBuf) -> Result<Vec<u8>, ApiError> {
    let res = if path.as_os_str() == "-" {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map(|_| buf)
    } else {
        std::fs::read(path)
    };
    res.map_err(|e| ApiError::new(500, "io-failure", format!("{}: {e}", path.display())))
}

fn save(app: &App) -> Result<(), ApiError> {
    app.persist()
        .map_err(|e| ApiError::from(rbac_core::EngineError::from(e)))
}

fn created(key: &str, value: &str) -> String {
    format!("{key}={value}\n")
}

/// Runs every command but `serve` against an opened app.
fn run_offline(cli: &Cli, app: &App) -> Result<Outcome, ApiError> {
    let e = &app.engine;
    let mut mutated = true;
    let out = match &cli.command {
        Command::Serve { .. } => unreachable!("handled by run"),
        Command::Check(args) => {
            let res = e.check_access(&request(args))?;
            let mut text = wire::verdict_line(&res.decision) + "\n";
            for ob in &res.decision.obligations {
                text += &format!("obligation={} {} {}\n", ob.id, ob.modality.as_str(), ob.action_token);
            }
            Outcome::ok(text)
        }
        Command::Explain(args) => {
            mutated = false;
            Outcome::ok(wire::explanation(&e.explain(&request(args))?))
        }
        Command::User(UserCmd::Add { name }) => {
            e.create_user(name)?;
            Outcome::ok(created("name", name))
        }
        Command::Role(RoleCmd::Add { name, inherits }) => {
            let parents: Vec<&str> = inherits.iter().map(String::as_str).collect();
            e.create_role(name, &parents)?;
            Outcome::ok(created("name", name))
        }
        Command::Role(RoleCmd::Inherit { role, parent }) => {
            e.add_parent(role, parent)?;
            Outcome::ok(format!("role={role}\nparent={parent}\n"))
        }
        Command::Grant { role, resource, action } => {
            e.grant_permission(role, Permission::parse(resource, action.as_str()).map_err(ApiError::from)?)?;
            Outcome::ok(format!("role={role}\nresource={resource}\naction={action}\n"))
        }
        Command::Assign { user, role } => Outcome::ok(wire::assignment(&e.assign_role(user, role)?)),
        Command::Revoke { user, role } => {
            e.revoke_role(user, role)?;
            Outcome::ok(format!("user={user}\nrole={role}\n"))
        }
        Command::Sod(SodCmd::Add { role_a, role_b }) => {
            e.add_sod_constraint(role_a, role_b)?;
            Outcome::ok(format!("role-a={}\nrole-b={}\n", role_a.min(role_b), role_a.max(role_b)))
        }
        Command::Restrict(RestrictCmd::Add {
            id,
            scope,
            target,
            max_transactions,
            window_seconds,
            max_users,
        }) => {
            let mut pairs = vec![
                ("id", id.clone()),
                ("scope", scope.as_str().to_string()),
                ("max-transactions", max_transactions.to_string()),
                ("window-seconds", window_seconds.to_string()),
            ];
            pairs.extend(target.clone().map(|t| ("target", t)));
            pairs.extend(max_users.map(|m| ("max-users", m.to_string())));
            e.add_restriction(wire::restriction_policy(&Body::from_pairs(pairs))?)?;
            Outcome::ok(created("id", id))
        }
        Command::Obligation(ObligationCmd::Add {
            id,
            modality,
            action_token,
            applies_to,
            when,
        }) => {
            let mut pairs = vec![
                ("id".to_string(), id.clone()),
                ("modality".to_string(), modality.clone()),
                ("action-token".to_string(), action_token.clone()),
            ];
            pairs.extend(applies_to.iter().map(|r| ("applies-to".to_string(), r.clone())));
            pairs.extend(when.iter().map(|(k, v)| (format!("when.{k}"), v.clone())));
            e.add_obligation(wire::obligation_policy(&Body::from_pairs(pairs))?)?;
            Outcome::ok(created("id", id))
        }
        Command::Export { file } => {
            mutated = false;
            let xml = e.export_bundle()?;
            match file {
                Some(p) => {
                    std::fs::write(p, &xml)
                        .map_err(|err| ApiError::new(500, "io-failure", format!("{}: {err}", p.display())))?;
                    Outcome::ok(format!("wrote {}\n", p.display()))
                }
                None => Outcome::ok(xml),
            }
        }
        Command::Import { file } => {
            let xml = read_input(file)?;
            e.import_bundle(&xml)?;
            Outcome::ok(wire::metrics(&e.metrics()))
        }
        Command::Validate { file } => {
            mutated = false;
            let report = e.validate_bundle(&read_input(file)?)?;
            let text = wire::report(&report);
            if report.ok {
                Outcome::ok(text)
            } else {
                Outcome::fail(text)
            }
        }
        Command::Snapshot(cmd) => {
            let store = app
                .snapshots
                .as_ref()
                .ok_or(rbac_core::EngineError::FeatureDisabled("backup"))?;
            match cmd {
                SnapshotCmd::Create { reason } => {
                    mutated = false;
                    Outcome::ok(wire::snapshot_meta(&e.create_snapshot(store, reason)?))
                }
                SnapshotCmd::List => {
                    mutated = false;
                    let entries = store.list(cli.verify).map_err(rbac_core::EngineError::from)?;
                    Outcome::ok(wire::catalog(&entries))
                }
                SnapshotCmd::Restore { id } => Outcome::ok(wire::snapshot_meta(&e.restore_snapshot(store, *id)?)),
            }
        }
        Command::Audit {
            subject,
            effect,
            since,
            until,
            limit,
        } => {
            mutated = false;
            let filter = AuditFilter {
                subject: subject.clone(),
                effect: *effect,
                since: *since,
                until: *until,
            };
            Outcome::ok(wire::audit_records(&e.query_audit(&filter, *limit)?))
        }
        Command::Anomalies => Outcome::ok(wire::anomalies(&e.drain_anomalies())),
        Command::Metrics => {
            mutated = false;
            Outcome::ok(wire::metrics(&e.metrics()))
        }
        Command::Capabilities => unreachable!("handled by run"),
    };
    if mutated {
        save(app)?;
    }
    Ok(out)
}

/// Parses nothing; runs an already-parsed command line.
pub fn run(cli: Cli) -> Outcome {
    if let Command::Capabilities = cli.command {
        return Outcome::ok(CapabilitiesReport::for_mode(mode(&cli)).table());
    }
    let over = match &cli.command {
        Command::Serve {
            listen,
            api_token,
            snapshot_interval,
        } => Overrides {
            listen: listen.clone(),
            api_token: api_token.clone(),
            snapshot_interval_seconds: *snapshot_interval,
            ..Overrides::default()
        },
        _ => Overrides::default(),
    };
    let cfg = match resolve_config(&cli, over) {
        Ok(c) => c,
        Err(e) => return Outcome::fail(format!("config error: {e}\n")),
    };
    let app = match App::open(&cfg, mode(&cli)) {
        Ok(a) => a,
        Err(e) => return Outcome::fail(format!("startup failed: {e}\n")),
    };
    if let Command::Serve { .. } = cli.command {
        let runtime = match tokio::runtime::Runtime::new() {
            Ok(r) => r,
            Err(e) => return Outcome::fail(format!("cannot start runtime: {e}\n")),
        };
        return match runtime.block_on(crate::http::serve(cfg, app)) {
            Ok(()) => Outcome::default(),
            Err(e) => Outcome::fail(format!("{e}\n")),
        };
    }
    run_offline(&cli, &app).unwrap_or_else(Outcome::from)
}

pub fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("RBAC_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let out = run(cli);
    let _ = std::io::stdout().write_all(&out.stdout);
    let _ = std::io::stderr().write_all(out.stderr.as_bytes());
    ExitCode::from(out.code)
}
