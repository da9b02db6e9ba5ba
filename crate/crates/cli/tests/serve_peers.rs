//! Two `imads serve global-registry` processes peered over TCP.

use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

struct Server {
    child: Child,
    http: String,
    peer: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn spawn(extra: &[&str]) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_imads"))
        .env_remove("IMADS_CONFIG")
        .args(["--iterations", "1", "serve", "global-registry", "--bind", "127.0.0.1:0", "--peer-bind", "127.0.0.1:0"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut next = || lines.next().expect("server exited").unwrap();
    let peer = next().rsplit(' ').next().unwrap().to_string();
    let http = next().rsplit(' ').next().unwrap().to_string();
    Server { child, http, peer }
}

fn imads(args: &[&str], dir: &std::path::Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_imads")).env_remove("IMADS_CONFIG").env("HOME", dir).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

#[test]
fn a_dataset_written_to_one_process_is_read_from_the_other() {
    let a = spawn(&[]);
    let b = spawn(&["--bootstrap", &a.peer]);
    let dir = tempfile::tempdir().unwrap();
    let identity = dir.path().join("id.json");
    let guid = imads(
        &[
            "--iterations",
            "1",
            "--global-registry",
            &a.http,
            "--identity",
            identity.to_str().unwrap(),
            "identity",
            "new",
            "--entry",
            "user://gmail.com/alice=http://dr.gmail.example",
        ],
        dir.path(),
    );
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let resp = reqwest::blocking::get(format!("{}/guid/{guid}", b.http)).unwrap();
        if resp.status() == 200 {
            let jwt = resp.text().unwrap();
            assert_eq!(jwt.split('.').count(), 3);
            break;
        }
        assert!(Instant::now() < deadline, "dataset never visible through the second process");
        std::thread::sleep(Duration::from_millis(200));
    }
}
