#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::sync::Arc;

use common::{random_request, Fixture, Limits};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rbac_core::{export_bundle, AccessRequest, Engine, EngineState, ManualClock, RequestId, Timestamp};
use rbac_service::wire;
use support::{cli, free_port, Server, TOKEN};

const CYCLE: &str = include_str!("../../core/tests/fixtures/cycle.rbac.xml");

/// The same request through the wire and through the library, with the
/// same state, gives the same answer.
#[test]
fn wire_decisions_equal_library_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path(), &[]);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Fixture::random(&mut rng, Limits::default());
        let (d, _) = f.build(Timestamp(0));
        let xml = export_bundle(&d);
        let (status, body) = server.post("/v1/import", xml.clone(), true);
        assert_eq!(status, 200, "{body}");

        let local = Engine::builder()
            .clock(Arc::new(ManualClock::new(0)))
            .state(EngineState {
                directory: rbac_core::import_bundle(&xml, Timestamp(0)).unwrap(),
                ..EngineState::default()
            })
            .build();
        for i in 0..30 {
            let (u, res, act) = random_request(&mut rng, &f);
            let rid = format!("eq-{seed}-{i}");
            let req = AccessRequest::new(&u, &res, act).with_request_id(RequestId::new(rid.as_str()).unwrap());
            let want = wire::decision(&local.check_access(&req).unwrap());
            let body = format!("subject={u}\nresource={res}\naction={act}\nrequest-id={rid}\n");
            assert_eq!(server.post("/v1/decision", body, false), (200, want));
        }
    }
}

#[test]
fn admin_plane_requires_the_token() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path(), &[]);
    let body = "name=alice\n";
    assert_eq!(server.raw("POST", "/v1/users", &[], body).0, 401);
    assert_eq!(server.raw("POST", "/v1/users", &[("Authorization", "Bearer nope")], body).0, 403);
    assert_eq!(server.post("/v1/users", body, true).0, 201);
    assert_eq!(server.get("/v1/export", false).0, 401);
    assert_eq!(server.get("/v1/audit", false).0, 401);
    // decisions are open and never touch the directory
    let before = server.get("/v1/export", true);
    assert_eq!(server.post("/v1/decision", "subject=alice\nresource=x\naction=read\n", false).0, 200);
    assert_eq!(server.get("/v1/export", true), before);
    assert_eq!(server.get("/v1/nothing", false).0, 404);
}

#[test]
fn no_token_means_admin_disabled() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let mut child = std::process::Command::new(support::bin())
        .arg("--data-dir")
        .arg(dir.path())
        .args(["serve", "--listen", &format!("127.0.0.1:{port}")])
        .env_remove("RBAC_API_TOKEN")
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}");
    let client = reqwest::blocking::Client::new();
    let mut ready = false;
    for _ in 0..500 {
        if client.get(format!("{url}/v1/health")).send().is_ok() {
            ready = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(20));
    }
    assert!(ready);
    let res = client
        .post(format!("{url}/v1/users"))
        .bearer_auth("anything")
        .body("name=a\n")
        .send()
        .unwrap();
    assert_eq!(res.status().as_u16(), 403);
    assert!(res.text().unwrap().starts_with("error=admin-disabled"));
    let _ = child.kill();
    let _ = child.wait();
}

#[test]
fn second_instance_on_same_port_fails_to_bind() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = Server::start(a.path(), &[]);
    let out = std::process::Command::new(support::bin())
        .arg("--data-dir")
        .arg(b.path())
        .args(["serve", "--listen", &format!("127.0.0.1:{}", first.port), "--api-token", TOKEN])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("cannot bind"), "{err}");
}

#[test]
fn restart_keeps_state_and_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let mut server = Server::start(dir.path(), &[]);
    assert_eq!(server.get("/v1/metrics", false).1.lines().next(), Some("users=0"));
    for (path, body) in [
        ("/v1/roles", "name=employee\n"),
        ("/v1/grants", "role=employee\nresource=docs\naction=read\n"),
        ("/v1/users", "name=alice\n"),
        ("/v1/assignments", "user=alice\nrole=employee\n"),
        (
            "/v1/restrictions",
            "id=lim\nscope=per-user\nmax-transactions=2\nwindow-seconds=3600\n",
        ),
    ] {
        assert!(server.post(path, body, true).0 < 300);
    }
    let ask = "subject=alice\nresource=docs\naction=read\n";
    assert!(server.post("/v1/decision", ask, false).1.contains("effect=permit"));
    let export = server.get("/v1/export", true);
    assert!(server.terminate().success());

    let server = Server::start(dir.path(), &[]);
    assert_eq!(server.get("/v1/export", true), export);
    // the counter came back too: one admit left, then the limit
    assert!(server.post("/v1/decision", ask, false).1.contains("effect=permit"));
    assert!(server.post("/v1/decision", ask, false).1.contains("reason=quota-exceeded"));
}

#[test]
fn plain_mode_over_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path(), &["--plain-rbac"]);
    let (_, caps) = server.get("/v1/capabilities", false);
    assert!(caps.contains("transaction-limit=false") && caps.contains("security-level=LESS"));
    assert_eq!(server.get("/v1/export", true).0, 403);
    assert_eq!(server.post("/v1/snapshots", "", true).0, 403);
    let (status, body) = server.post(
        "/v1/restrictions",
        "id=x\nscope=per-user\nmax-transactions=1\nwindow-seconds=1\n",
        true,
    );
    assert_eq!((status, body.lines().next()), (403, Some("error=feature-disabled")));
}

#[test]
fn import_validation_failure_carries_report() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path(), &[]);
    let (status, body) = server.post("/v1/import", CYCLE, true);
    assert_eq!(status, 422);
    assert!(body.starts_with("error=validation-failed\n"));
    assert!(body.contains("ok=false\n"));
    assert!(body.contains("issue=error /migration/roles/role[@name='a']"));
}

#[test]
fn cli_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| cli(d, args);
    for args in [
        &["role", "add", "employee"][..],
        &["grant", "employee", "docs", "read"],
        &["user", "add", "alice"],
        &["assign", "alice", "employee"],
    ] {
        let out = run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["check", "--user", "alice", "--resource", "docs", "--action", "read"]);
    assert_eq!((out.status.code(), String::from_utf8(out.stdout).unwrap()), (Some(0), "PERMIT role=employee\n".into()));
    let out = run(&["check", "--user", "alice", "--resource", "docs", "--action", "write"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "DENY reason=no-matching-permission\n");

    let bad = d.join("bad.rbac.xml");
    std::fs::write(&bad, CYCLE).unwrap();
    let out = run(&["import", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("ok=false") && stderr.contains("cycle"), "{stderr}");
    let out = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(run(&["assign", "alice", "ghost"]).status.code(), Some(1));
    assert_eq!(run(&["check", "--user", "alice"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let out = run(&["export"]);
    let exported = String::from_utf8(out.stdout).unwrap();
    assert!(exported.contains("<member-of role=\"employee\"/>"));

    assert!(run(&["snapshot", "create"]).status.success());
    let out = run(&["--verify", "snapshot", "list"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("status=verified"));
    let out = run(&["audit", "--subject", "alice"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}
