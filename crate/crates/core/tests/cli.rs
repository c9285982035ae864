use std::fs;
use std::path::PathBuf;
use std::process::Command;

use speccache::cli::{run_cli, EXIT_CLEAN, EXIT_LEAKS, EXIT_USAGE};

fn corpus(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("corpus")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["speccache".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn motivating_leaks_and_rob_zero_is_clean() {
    let file = corpus("motivating.ir");
    let (code, out, _) = cli(&["run", &file, "--cache", "M0"]);
    assert_eq!(code, EXIT_LEAKS, "{out}");
    assert!(out.contains("leak line 26"), "{out}");
    assert!(out.contains("Divergent"), "{out}");
    let (code, out, _) = cli(&["run", &file, "--cache", "M0", "--rob", "0"]);
    assert_eq!(code, EXIT_CLEAN, "{out}");
    assert!(out.contains("0 leak(s)"), "{out}");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ir");
    fs::write(&bad, "program bad\nvar a : u8[4]\n  load r = a[9999]\n").unwrap();
    let bad = bad.to_string_lossy().into_owned();
    let missing = dir.path().join("missing.ir").to_string_lossy().into_owned();
    let file = corpus("straightline.ir");
    for args in [
        vec!["run", missing.as_str()],
        vec!["run", bad.as_str()],
        vec!["run", file.as_str(), "--cache", "C9"],
        vec!["run", file.as_str(), "--cache", "100:3:2"],
        vec!["run", file.as_str(), "--mode", "fast"],
        vec!["frobnicate"],
    ] {
        let (code, _, err) = cli(&args);
        assert_eq!(code, EXIT_USAGE, "{args:?}: {err}");
        assert!(!err.is_empty(), "{args:?}");
    }
}

#[test]
fn json_is_deterministic_without_timings() {
    let file = corpus("square_multiply.ir");
    let args = ["run", file.as_str(), "--cache", "C1S", "--mode", "base", "--json"];
    let (c1, a, _) = cli(&args);
    let (c2, b, _) = cli(&args);
    assert_eq!(c1, EXIT_LEAKS);
    assert_eq!(c1, c2);
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["cache"]["sets"], 4);
    assert_eq!(v["mode"], "base");
    assert_eq!(v["witnesses"][0]["behavior"], "opposite");
    assert!(v["solver"]["ms"].is_null());
    let (_, t, _) = cli(&[args.as_slice(), &["--timings"]].concat());
    let v: serde_json::Value = serde_json::from_str(&t).unwrap();
    assert!(v["solver"]["ms"].is_u64());
}

#[test]
fn oracle_check_agrees_on_corpus_program() {
    let file = corpus("nested_branch.ir");
    let (code, out, err) = cli(&["run", &file, "--cache", "C1S", "--oracle-check"]);
    assert_eq!(code, EXIT_LEAKS, "{out}{err}");
}

#[test]
fn corpus_matches_sidecars_and_detects_tampering() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let (code, out, _) = cli(&["corpus", &dir.to_string_lossy(), "--cache", "M0", "--mode", "opt"]);
    assert_eq!(code, EXIT_CLEAN, "{out}");
    assert!(!out.contains("MISMATCH"), "{out}");

    let tmp = tempfile::tempdir().unwrap();
    fs::copy(dir.join("square_multiply.ir"), tmp.path().join("sq.ir")).unwrap();
    fs::write(
        tmp.path().join("sq.expect.json"),
        r#"{"expectations": {"M0": {"base": [], "opt": []}}}"#,
    )
    .unwrap();
    let (code, out, _) = cli(&["corpus", &tmp.path().to_string_lossy(), "--cache", "M0"]);
    assert_eq!(code, EXIT_LEAKS, "{out}");
    assert!(out.contains("MISMATCH"), "{out}");
}

#[test]
fn sidecar_command_reproduces_committed_expectations() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["square_multiply", "cond_store"] {
        fs::copy(corpus(&format!("{name}.ir")), tmp.path().join(format!("{name}.ir"))).unwrap();
    }
    let (code, _, err) = cli(&["sidecar", &tmp.path().to_string_lossy(), "--caches", "M0,C1S,C1"]);
    assert_eq!(code, EXIT_CLEAN, "{err}");
    for name in ["square_multiply", "cond_store"] {
        let fresh: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(format!("{name}.expect.json"))).unwrap())
                .unwrap();
        let committed: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(corpus(&format!("{name}.expect.json"))).unwrap()).unwrap();
        assert_eq!(fresh, committed, "{name}");
    }
}

#[test]
fn random_crosscheck_and_gen() {
    let (code, out, err) = cli(&["crosscheck", "--random", "10", "--seed", "500", "--mode", "base"]);
    assert_eq!(code, EXIT_CLEAN, "{out}{err}");
    let (code, out, _) = cli(&["gen", "--seed", "7"]);
    assert_eq!(code, EXIT_CLEAN);
    assert!(speccache::ir::parse_program(&out).is_ok(), "{out}");
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_speccache");
    let s = Command::new(bin)
        .args(["run", &corpus("motivating.ir"), "--cache", "M0"])
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(EXIT_LEAKS));
    let s = Command::new(bin).args(["run", &corpus("early_exit.ir")]).output().unwrap();
    assert_eq!(s.status.code(), Some(EXIT_CLEAN));
    let s = Command::new(bin).arg("run").output().unwrap();
    assert_eq!(s.status.code(), Some(EXIT_USAGE));
}
