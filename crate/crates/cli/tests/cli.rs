// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::{Command, Output};

fn program(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs").join(format!("{name}.qctl"));
    p.to_string_lossy().into_owned()
}

fn qctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qctl")).args(args).output().expect("qctl runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str, contents: &str) -> String {
    let dir = std::env::temp_dir().join(format!("qctl-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn check_reports_output_environment() {
    let o = qctl(&["check", &program("coin"), "--env", "q"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("ok: output env = q"), "{}", stdout(&o));
}

#[test]
fn check_rejects_ill_formed_programs() {
    let o = qctl(&["check", &program("coin"), "--env", ""]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("ill-formed"), "{}", stdout(&o));
}

#[test]
fn parse_errors_exit_with_two() {
    let bad = scratch("bad.qctl", "q *= ;");
    let o = qctl(&["parse", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn equivalent_programs_are_reported_equal() {
    let o = qctl(&["equiv", &program("coin"), &program("reset"), "--env", "q"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("equivalent"), "{}", stdout(&o));
}

#[test]
fn inequivalent_programs_come_with_a_witness() {
    let o = qctl(&["equiv", &program("qcoin1"), &program("coin1"), "--env", "p"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.starts_with("not equivalent"), "{out}");
    assert!(out.contains("gap"), "{out}");
}

#[test]
fn denote_prints_both_components() {
    let o = qctl(&["denote", &program("loop"), "--env", "q"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("C =") && out.contains("F ="), "{out}");
}

#[test]
fn denote_json_is_parseable() {
    let o = qctl(&["denote", &program("cnot"), "--env", "c,t", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn probability_of_coin_is_one() {
    let o = qctl(&["prob", &program("coin"), "--env", "q", "--state", "random", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("denotational p = 1.000000000000"), "{}", stdout(&o));
}

#[test]
fn adequacy_holds_for_the_corpus() {
    for (name, env) in [("coin", "q"), ("meas", "p,q"), ("qcoin1", "p"), ("swap", "p,q")] {
        let o = qctl(&["adequacy", &program(name), "--env", env, "--state", "random"]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
    }
}

#[test]
fn synth_builds_a_program_from_kraus_operators() {
    // Amplitude damping with gamma = 1/2.
    let h = 0.5f64.sqrt();
    let json = format!(
        r#"[{{"rows": 2, "cols": 2, "data": [[1,0],[0,0],[0,0],[{h},0]]}},
            {{"rows": 2, "cols": 2, "data": [[0,0],[{h},0],[0,0],[0,0]]}}]"#
    );
    let path = scratch("damping.json", &json);
    let o = qctl(&["synth", "--kraus", &path, "--env-in", "q", "--env-out", "q"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let src = scratch("damping.qctl", &stdout(&o));
    let c = qctl(&["check", &src, "--env", "q"]);
    assert!(stdout(&c).contains("ok: output env = q"), "{}", stdout(&c));
}
