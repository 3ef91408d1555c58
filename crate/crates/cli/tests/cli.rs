use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn wasmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wasmlab"))
        .args(args)
        .env_remove("LAB_PORT")
        .env_remove("LAB_BLESS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(name)
}

#[test]
fn exploit_succeeds_and_reports() {
    let out = wasmlab(&["exploit", "--scenario", "sqli", "--vector", "bof"]);
    assert_eq!(code(&out), 0);
    let report = json(&out);
    assert_eq!(report["success"], true);
    assert_eq!(report["evidence"]["template"], "SELECT 1");
}

#[test]
fn hardened_exploit_exit_code_follows_expectation() {
    let args = ["exploit", "--scenario", "sqli", "--vector", "bof", "--harden", "canaries"];
    let out = wasmlab(&args);
    assert_eq!(code(&out), 1);
    assert_eq!(json(&out)["error"], "ECANARY");
    let out = wasmlab(&[&args[..], &["--expect", "fail"]].concat());
    assert_eq!(code(&out), 0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&wasmlab(&["exploit", "--scenario", "xsleak", "--vector", "ufs"])), 2);
    assert_eq!(code(&wasmlab(&["exploit", "--vector", "bof"])), 2);
    assert_eq!(code(&wasmlab(&["exploit", "--scenario", "sqli", "--vector", "bof", "--harden", "bogus"])), 2);
    assert_eq!(code(&wasmlab(&["frobnicate"])), 2);
    assert_eq!(code(&wasmlab(&["run", "--script", "/nonexistent.lab"])), 2);
}

#[test]
fn report_is_written_to_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = wasmlab(&["exploit", "--scenario", "sqli", "--vector", "iof", "--output", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(saved, json(&out));
}

#[test]
fn xsleak_exploit_recovers_the_default_secret() {
    let out = wasmlab(&["exploit", "--scenario", "xsleak", "--vector", "uaf"]);
    assert_eq!(code(&out), 0);
    let ev = &json(&out)["evidence"];
    assert_eq!(ev["recovered"], ev["planted"]);
}

#[test]
fn honest_run_exits_0() {
    let out = wasmlab(&["run", "--scenario", "ssti", "--vector", "ufs", "--harden", "all"]);
    assert_eq!(code(&out), 0);
    assert!(json(&out)["steps"].as_array().unwrap().iter().all(|s| s["ok"] == true));
}

#[test]
fn corpus_script_runs_and_diffs_clean() {
    let script = corpus("sqli_uaf.lab");
    let out = wasmlab(&["run", "--script", script.to_str().unwrap(), "--backend", "wasm"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = wasmlab(&["diff", "--script", script.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["outcome_mismatches"], serde_json::json!([]));
}

#[test]
fn snapshot_mismatch_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    std::fs::copy(golden_dir.join("sqli_uaf.snap"), dir.path().join("wrong.snap")).unwrap();
    let text = std::fs::read_to_string(corpus("sqli_bof.lab"))
        .unwrap()
        .replace("../tests/golden/sqli_bof.snap", "wrong.snap");
    let script = dir.path().join("s.lab");
    std::fs::write(&script, text).unwrap();
    assert_eq!(code(&wasmlab(&["run", "--script", script.to_str().unwrap()])), 1);
}

#[test]
fn calibrate_prints_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cal.json");
    let out = wasmlab(&["calibrate", "--output", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("threshold"), "{table}");
    let cal: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(cal["ratio"].as_f64().unwrap() >= 100.0);
}

#[test]
fn serve_answers_health_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("lab.conf");
    std::fs::write(&conf, "scenario = xsleak\nvector = bof\ntest_mode = yes\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_wasmlab"))
        .args(["serve", "--config", conf.to_str().unwrap(), "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.split("http://").nth(1).unwrap().split_whitespace().next().unwrap().to_string();

    let request = |raw: &str| {
        let mut s = TcpStream::connect(&addr).unwrap();
        s.write_all(raw.as_bytes()).unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    };
    let health = request("GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    let search = request("POST /xsleak/search HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.ends_with("ok"));
    assert!(search.to_ascii_lowercase().contains("x-lab-steps:"), "{search}");
}

#[test]
fn readme_walkthrough_commands_succeed() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let readme = std::fs::read_to_string(root.join("README.md")).unwrap();
    let mut in_sh = false;
    let mut commands = Vec::new();
    for line in readme.lines() {
        match line.trim() {
            "```sh" => in_sh = true,
            "```" => in_sh = false,
            cmd if in_sh && cmd.starts_with("wasmlab ") => commands.push(cmd.to_string()),
            _ => {}
        }
    }
    assert!(commands.len() >= 10, "{commands:?}");
    for cmd in commands {
        let out = Command::new(env!("CARGO_BIN_EXE_wasmlab"))
            .args(cmd.split_whitespace().skip(1))
            .current_dir(&root)
            .env_remove("LAB_BLESS")
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
