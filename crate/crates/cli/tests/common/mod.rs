#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tputfl"));
    for (k, _) in std::env::vars() {
        if k.starts_with("TFL_") {
            c.env_remove(k);
        }
    }
    c
}

pub fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    bin().args(args).output().expect("spawn tputfl")
}

pub fn spawn<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Child {
    bin().args(args).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().expect("spawn tputfl")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs and insists on exit code 0, echoing the streams otherwise.
pub fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> String {
    let o = run(args);
    assert_eq!(o.status.code(), Some(0), "stdout:\n{}\nstderr:\n{}", stdout(&o), stderr(&o));
    stdout(&o)
}

/// Output digests recorded in a run directory's manifest.
pub fn outputs(dir: &Path) -> BTreeMap<String, String> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).expect("manifest");
    let v: serde_json::Value = serde_json::from_str(&text).expect("manifest json");
    v["outputs"]
        .as_object()
        .expect("outputs map")
        .iter()
        .map(|(k, d)| (k.clone(), d.as_str().unwrap().to_string()))
        .collect()
}

pub fn free_addr() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    format!("127.0.0.1:{}", l.local_addr().unwrap().port())
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

/// Four client_linear traces with distinct maps into `dir`.
pub fn linear_clients(dir: &Path, seed: u64, length: usize) {
    let maps = [("8,-6,4", "40"), ("-8,6,-4", "45"), ("6,8,-6", "35"), ("-4,-8,6", "50")];
    for (k, (w, b)) in maps.iter().enumerate() {
        ok(&[
            "synth",
            "--regime",
            "linear",
            "--seed",
            &(seed + k as u64).to_string(),
            "--length",
            &length.to_string(),
            "--weights",
            w,
            "--intercept",
            b,
            "--out",
            &p(dir),
        ]);
    }
}
