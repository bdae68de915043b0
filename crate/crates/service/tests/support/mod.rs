//! Runs the real `rbac` binary as a child process.
#![allow(dead_code)]

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

pub const TOKEN: &str = "test-token";

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rbac")
}

/// Runs a one-shot CLI command.
pub fn cli(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .arg("--data-dir")
        .arg(data_dir)
        .args(args)
        .output()
        .expect("spawn rbac")
}

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub struct Server {
    child: Option<Child>,
    pub base: String,
    pub port: u16,
    pub data_dir: PathBuf,
    http: reqwest::blocking::Client,
}

impl Server {
    pub fn start(data_dir: &Path, extra: &[&str]) -> Self {
        Self::try_start(data_dir, free_port(), extra).expect("server did not become ready")
    }

    pub fn try_start(data_dir: &Path, port: u16, extra: &[&str]) -> Result<Self, String> {
        let listen = format!("127.0.0.1:{port}");
        let mut child = Command::new(bin())
            .arg("--data-dir")
            .arg(data_dir)
            .args(extra)
            .args(["serve", "--listen", &listen, "--api-token", TOKEN])
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .unwrap();
        let base = format!("http://{listen}");
        let deadline = Instant::now() + Duration::from_secs(15);
        loop {
            if let Some(status) = child.try_wait().map_err(|e| e.to_string())? {
                let mut err = String::new();
                if let Some(mut s) = child.stderr.take() {
                    use std::io::Read;
                    let _ = s.read_to_string(&mut err);
                }
                return Err(format!("exited with {status}: {err}"));
            }
            if let Ok(r) = http.get(format!("{base}/v1/health")).send() {
                if r.status().is_success() {
                    break;
                }
            }
            if Instant::now() > deadline {
                let _ = child.kill();
                return Err("timed out waiting for health".into());
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        Ok(Self {
            child: Some(child),
            base,
            port,
            data_dir: data_dir.to_path_buf(),
            http,
        })
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder, admin: bool) -> (u16, String) {
        let req = if admin { req.bearer_auth(TOKEN) } else { req };
        let res = req.send().expect("request");
        (res.status().as_u16(), res.text().unwrap())
    }

    pub fn get(&self, path: &str, admin: bool) -> (u16, String) {
        self.send(self.http.get(format!("{}{path}", self.base)), admin)
    }

    pub fn post(&self, path: &str, body: impl Into<Vec<u8>>, admin: bool) -> (u16, String) {
        self.send(self.http.post(format!("{}{path}", self.base)).body(body.into()), admin)
    }

    pub fn delete(&self, path: &str, body: &str, admin: bool) -> (u16, String) {
        self.send(self.http.delete(format!("{}{path}", self.base)).body(body.to_string()), admin)
    }

    /// Sends an arbitrary request with explicit headers, for auth tests.
    pub fn raw(&self, method: &str, path: &str, headers: &[(&str, &str)], body: &str) -> (u16, String) {
        let mut req = self
            .http
            .request(method.parse().unwrap(), format!("{}{path}", self.base))
            .body(body.to_string());
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        self.send(req, false)
    }

    pub fn pid(&self) -> u32 {
        self.child.as_ref().unwrap().id()
    }

    /// SIGKILL, no chance to flush anything.
    pub fn kill(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }

    /// SIGTERM and wait for a clean exit.
    pub fn terminate(&mut self) -> std::process::ExitStatus {
        let mut c = self.child.take().expect("running");
        Command::new("kill")
            .args(["-TERM", &c.id().to_string()])
            .status()
            .expect("kill -TERM");
        c.wait().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.kill();
    }
}
