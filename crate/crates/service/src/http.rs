//! HTTP/1.1 front end. Bodies use the `key=value` format from [`crate::kv`];
//! exports and imports carry bundle XML.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use rbac_core::Permission;
use thiserror::Error;

use crate::app::{App, StartupError};
use crate::capabilities::CapabilitiesReport;
use crate::config::ServiceConfig;
use crate::kv::{Body, Out};
use crate::wire::{self, ApiError};

pub struct Shared {
    pub app: App,
    pub token: Option<String>,
}

type St = Arc<Shared>;

pub struct Reply {
    status: StatusCode,
    content_type: &'static str,
    body: String,
}

impl Reply {
    fn ok(body: String) -> Self {
        Self {
            status: StatusCode::OK,
            content_type: "text/plain; charset=utf-8",
            body,
        }
    }

    fn created(body: String) -> Self {
        Self {
            status: StatusCode::CREATED,
            ..Self::ok(body)
        }
    }
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        (self.status, [(header::CONTENT_TYPE, self.content_type)], self.body).into_response()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut res = Reply {
            status,
            ..Reply::ok(self.body())
        }
        .into_response();
        if status == StatusCode::UNAUTHORIZED {
            res.headers_mut()
                .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
        }
        res
    }
}

type Result<T = Reply> = std::result::Result<T, ApiError>;

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn require_admin(s: &Shared, headers: &HeaderMap) -> Result<()> {
    let Some(token) = &s.token else {
        return Err(ApiError::new(403, "admin-disabled", "no api token is configured"));
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match given {
        None => Err(ApiError::new(401, "unauthorized", "missing bearer token")),
        Some(g) if constant_time_eq(g.as_bytes(), token.as_bytes()) => Ok(()),
        Some(_) => Err(ApiError::new(403, "forbidden", "wrong api token")),
    }
}

/// Engine calls may touch the disk, so they run off the async workers.
async fn blocking<F>(s: St, f: F) -> Result
where
    F: FnOnce(&Shared) -> Result + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&s))
        .await
        .unwrap_or_else(|e| Err(ApiError::new(500, "internal", e.to_string())))
}

/// Runs an admin mutation and then saves the live state.
async fn mutation<F>(s: St, headers: HeaderMap, f: F) -> Result
where
    F: FnOnce(&Shared) -> Result + Send + 'static,
{
    require_admin(&s, &headers)?;
    blocking(s, move |s| {
        let reply = f(s)?;
        if let Err(e) = s.app.persist() {
            tracing::error!(error = %e, "failed to save live state");
        }
        Ok(reply)
    })
    .await
}

async fn health() -> Reply {
    Reply::ok("status=ready\n".into())
}

async fn capabilities(State(s): State<St>) -> Reply {
    Reply::ok(CapabilitiesReport::for_mode(s.app.engine.mode()).to_kv())
}

async fn metrics(State(s): State<St>) -> Reply {
    Reply::ok(wire::metrics(&s.app.engine.metrics()))
}

async fn decision(State(s): State<St>, body: Bytes) -> Result {
    let req = wire::access_request(&Body::parse(&body)?)?;
    blocking(s, move |s| Ok(Reply::ok(wire::decision(&s.app.engine.check_access(&req)?)))).await
}

async fn explain(State(s): State<St>, body: Bytes) -> Result {
    let req = wire::access_request(&Body::parse(&body)?)?;
    Ok(Reply::ok(wire::explanation(&s.app.engine.explain(&req)?)))
}

async fn validate(State(s): State<St>, body: Bytes) -> Result {
    Ok(Reply::ok(wire::report(&s.app.engine.validate_bundle(&body)?)))
}

async fn export(State(s): State<St>, headers: HeaderMap) -> Result {
    require_admin(&s, &headers)?;
    let xml = s.app.engine.export_bundle()?;
    Ok(Reply {
        content_type: "application/xml; charset=utf-8",
        ..Reply::ok(String::from_utf8(xml).expect("bundles are UTF-8"))
    })
}

async fn import(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    mutation(s, headers, move |s| {
        s.app.engine.import_bundle(&body)?;
        Ok(Reply::ok(wire::metrics(&s.app.engine.metrics())))
    })
    .await
}

async fn users(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let b = Body::parse(&body)?;
    b.allow(&["name"], &[])?;
    let name = b.one("name")?.to_string();
    mutation(s, headers, move |s| {
        s.app.engine.create_user(&name)?;
        Ok(Reply::created(Out::new().pair("name", &name).finish()))
    })
    .await
}

async fn roles(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let b = Body::parse(&body)?;
    b.allow(&["name", "inherits"], &[])?;
    let name = b.one("name")?.to_string();
    let parents: Vec<String> = b.all("inherits").into_iter().map(str::to_string).collect();
    mutation(s, headers, move |s| {
        let refs: Vec<&str> = parents.iter().map(String::as_str).collect();
        s.app.engine.create_role(&name, &refs)?;
        Ok(Reply::created(Out::new().pair("name", &name).finish()))
    })
    .await
}

async fn inherits(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let b = Body::parse(&body)?;
    b.allow(&["role", "parent"], &[])?;
    let (role, parent) = (b.one("role")?.to_string(), b.one("parent")?.to_string());
    mutation(s, headers, move |s| {
        s.app.engine.add_parent(&role, &parent)?;
        Ok(Reply::created(Out::new().pair("role", &role).pair("parent", &parent).finish()))
    })
    .await
}

async fn grants(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let b = Body::parse(&body)?;
    b.allow(&["role", "resource", "action"], &[])?;
    let role = b.one("role")?.to_string();
    let perm = Permission::parse(b.one("resource")?, b.one("action")?)?;
    mutation(s, headers, move |s| {
        s.app.engine.grant_permission(&role, perm.clone())?;
        Ok(Reply::created(
            Out::new()
                .pair("role", &role)
                .pair("resource", &perm.resource)
                .pair("action", perm.action)
                .finish(),
        ))
    })
    .await
}

fn user_role(body: &Bytes) -> Result<(String, String)> {
    let b = Body::parse(body)?;
    b.allow(&["user", "role"], &[])?;
    Ok((b.one("user")?.to_string(), b.one("role")?.to_string()))
}

async fn assign(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let (user, role) = user_role(&body)?;
    mutation(s, headers, move |s| {
        let a = s.app.engine.assign_role(&user, &role)?;
        Ok(Reply::created(wire::assignment(&a)))
    })
    .await
}

async fn revoke(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let (user, role) = user_role(&body)?;
    mutation(s, headers, move |s| {
        s.app.engine.revoke_role(&user, &role)?;
        Ok(Reply::ok(Out::new().pair("user", &user).pair("role", &role).finish()))
    })
    .await
}

async fn sod(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let b = Body::parse(&body)?;
    b.allow(&["role-a", "role-b"], &[])?;
    let (a, c) = (b.one("role-a")?.to_string(), b.one("role-b")?.to_string());
    mutation(s, headers, move |s| {
        s.app.engine.add_sod_constraint(&a, &c)?;
        let (lo, hi) = if a <= c { (&a, &c) } else { (&c, &a) };
        Ok(Reply::created(Out::new().pair("role-a", lo).pair("role-b", hi).finish()))
    })
    .await
}

async fn restrictions(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let policy = wire::restriction_policy(&Body::parse(&body)?)?;
    mutation(s, headers, move |s| {
        let id = policy.id.clone();
        s.app.engine.add_restriction(policy)?;
        Ok(Reply::created(Out::new().pair("id", id).finish()))
    })
    .await
}

async fn obligations(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let policy = wire::obligation_policy(&Body::parse(&body)?)?;
    mutation(s, headers, move |s| {
        let id = policy.id.clone();
        s.app.engine.add_obligation(policy)?;
        Ok(Reply::created(Out::new().pair("id", id).finish()))
    })
    .await
}

async fn audit(State(s): State<St>, headers: HeaderMap, Query(q): Query<Vec<(String, String)>>) -> Result {
    require_admin(&s, &headers)?;
    let (filter, limit) = wire::audit_query(&Body::from_pairs(q))?;
    Ok(Reply::ok(wire::audit_records(&s.app.engine.query_audit(&filter, limit)?)))
}

async fn anomalies(State(s): State<St>, headers: HeaderMap) -> Result {
    require_admin(&s, &headers)?;
    Ok(Reply::ok(wire::anomalies(&s.app.engine.drain_anomalies())))
}

fn snapshot_store(s: &Shared) -> Result<&rbac_core::SnapshotStore> {
    s.app
        .snapshots
        .as_ref()
        .ok_or_else(|| rbac_core::EngineError::FeatureDisabled("backup").into())
}

async fn snapshot_create(State(s): State<St>, headers: HeaderMap, body: Bytes) -> Result {
    let b = Body::parse(&body)?;
    b.allow(&["reason"], &[])?;
    let reason = b.opt("reason")?.unwrap_or("manual").to_string();
    require_admin(&s, &headers)?;
    blocking(s, move |s| {
        let meta = s.app.engine.create_snapshot(snapshot_store(s)?, &reason)?;
        Ok(Reply::created(wire::snapshot_meta(&meta)))
    })
    .await
}

async fn snapshot_list(State(s): State<St>, headers: HeaderMap, Query(q): Query<Vec<(String, String)>>) -> Result {
    require_admin(&s, &headers)?;
    let b = Body::from_pairs(q);
    b.allow(&["verify"], &[])?;
    let verify = b.parsed::<bool>("verify")?.unwrap_or(false);
    blocking(s, move |s| {
        let entries = snapshot_store(s)?
            .list(verify)
            .map_err(rbac_core::EngineError::from)?;
        Ok(Reply::ok(wire::catalog(&entries)))
    })
    .await
}

async fn snapshot_restore(State(s): State<St>, headers: HeaderMap, Path(id): Path<String>) -> Result {
    let id: u64 = id
        .parse()
        .map_err(|_| ApiError::new(400, "bad-request", format!("invalid snapshot id {id:?}")))?;
    mutation(s, headers, move |s| {
        let meta = s.app.engine.restore_snapshot(snapshot_store(s)?, id)?;
        Ok(Reply::ok(wire::snapshot_meta(&meta)))
    })
    .await
}

async fn not_found() -> ApiError {
    ApiError::new(404, "not-found", "no such endpoint")
}

pub fn router(state: St) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/capabilities", get(capabilities))
        .route("/v1/metrics", get(metrics))
        .route("/v1/decision", post(decision))
        .route("/v1/explain", post(explain))
        .route("/v1/validate", post(validate))
        .route("/v1/export", get(export))
        .route("/v1/import", post(import))
        .route("/v1/users", post(users))
        .route("/v1/roles", post(roles))
        .route("/v1/inherits", post(inherits))
        .route("/v1/grants", post(grants))
        .route("/v1/assignments", post(assign).delete(revoke))
        .route("/v1/sod", post(sod))
        .route("/v1/restrictions", post(restrictions))
        .route("/v1/obligations", post(obligations))
        .route("/v1/audit", get(audit))
        .route("/v1/anomalies", get(anomalies))
        .route("/v1/snapshots", post(snapshot_create).get(snapshot_list))
        .route("/v1/snapshots/{id}/restore", post(snapshot_restore))
        .fallback(not_found)
        .with_state(state)
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: std::net::SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn periodic_snapshot(s: &Shared) {
    if let Some(store) = &s.app.snapshots {
        match s.app.engine.create_snapshot(store, "periodic") {
            Ok(meta) => tracing::info!(id = meta.id, bytes = meta.size_bytes, "periodic snapshot"),
            Err(e) => tracing::error!(error = %e, "periodic snapshot failed"),
        }
    }
    if let Err(e) = s.app.persist() {
        tracing::error!(error = %e, "failed to save live state");
    }
}

/// Serves until SIGINT or SIGTERM, then drains in-flight requests and
/// saves the live state.
pub async fn serve(cfg: ServiceConfig, app: App) -> std::result::Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(cfg.listen)
        .await
        .map_err(|source| ServeError::Bind { addr: cfg.listen, source })?;
    let shared = Arc::new(Shared {
        app,
        token: cfg.api_token.clone(),
    });
    tracing::info!(addr = %cfg.listen, origin = ?shared.app.origin, "serving");
    println!("listening on {}", cfg.listen);

    let ticker = (cfg.snapshot_interval_seconds > 0).then(|| {
        let s = shared.clone();
        let every = Duration::from_secs(cfg.snapshot_interval_seconds);
        tokio::spawn(async move {
            let mut interval = tokio::time::interval_at(tokio::time::Instant::now() + every, every);
            loop {
                interval.tick().await;
                let s = s.clone();
                let _ = tokio::task::spawn_blocking(move || periodic_snapshot(&s)).await;
            }
        })
    });

    axum::serve(listener, router(shared.clone()))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    if let Some(t) = ticker {
        t.abort();
    }
    shared.app.persist().map_err(|e| std::io::Error::other(e.to_string()))?;
    tracing::info!("state saved, exiting");
    Ok(())
}
