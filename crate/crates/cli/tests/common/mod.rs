#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use sbpm_testkit::fixture_dir;

pub fn sbpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbpm"))
        .args(args)
        .env_remove("SBPM_LISTEN")
        .env_remove("SBPM_WIRE_LISTEN")
        .env_remove("SBPM_NODE_ID")
        .env_remove("SBPM_DATA_DIR")
        .output()
        .expect("run sbpm")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/scenarios").join(format!("{name}.yaml"))
}

pub fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.txt"));
    std::fs::read_to_string(p).expect("golden file")
}

/// Compiles a fixture into `dir` and returns the bundle path.
pub fn compile(fixture: &str, dir: &Path) -> PathBuf {
    let out = dir.join(format!("{fixture}.sbpmb"));
    let o = sbpm(&["compile", fixture_dir(fixture).to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    out
}

/// The `Subject: s0 s1 ...` lines of a run's output.
pub fn summary(out: &str) -> String {
    out.lines()
        .filter(|l| {
            l.split_once(": ")
                .is_some_and(|(s, rest)| !s.contains(' ') && !s.is_empty() && !rest.is_empty() && !l.starts_with("instance"))
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

/// An `sbpm serve` child process, killed on drop.
pub struct Node {
    pub child: Child,
    pub http: String,
    pub data: tempfile::TempDir,
}

impl Node {
    pub fn start(id: &str, join: Option<&str>) -> Node {
        let data = tempfile::tempdir().unwrap();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_sbpm"));
        cmd.args(["serve", "--listen", "127.0.0.1:0", "--wire-listen", "127.0.0.1:0", "--node-id", id])
            .arg("--data-dir")
            .arg(data.path())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        if let Some(peer) = join {
            cmd.args(["--join", peer]);
        }
        let mut child = cmd.spawn().expect("spawn sbpm serve");
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let first = lines.next().expect("serve prints its addresses").unwrap();
        // node <id> http <addr> wire <addr>
        let http = first.split_whitespace().nth(3).expect("http address").to_string();
        if join.is_some() {
            let joined = lines.next().expect("join line").unwrap();
            assert!(joined.starts_with("joined"), "{joined}");
        }
        std::thread::spawn(move || for _ in lines {});
        Node { child, http, data }
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
