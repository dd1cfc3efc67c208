use std::path::Path;
use std::process::{Command, Output};

fn ef21(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ef21")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_one_row_per_iterate_and_a_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let out = ef21(&[
        "run",
        "--method",
        "mvr",
        "--clients",
        "4",
        "--dim",
        "20",
        "--iters",
        "50",
        "--out",
        arg(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,grad_norm,f_value,V_t,U_t,gamma_t,eta_t,cum_bits");
    assert_eq!(lines.count(), 51);
    let cfg = std::fs::read_to_string(dir.path().join("m.csv.cfg")).unwrap();
    assert!(cfg.lines().any(|l| l == "method=mvr"), "{cfg}");
}

#[test]
fn jsonl_output_is_selected_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let out = ef21(&["run", "--method", "igt", "--iters", "5", "--dim", "8", "--out", arg(&path)]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("grad_norm").is_some());
    }
}

#[test]
fn config_file_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let args = [
        "run",
        "--method",
        "rhm",
        "--clients",
        "3",
        "--dim",
        "16",
        "--iters",
        "40",
        "--sigma-g",
        "0.3",
        "--sigma-h",
        "0.2",
        "--compressor",
        "randk:0.25",
        "--seed",
        "11",
    ];
    let mut with_out = args.to_vec();
    with_out.extend(["--out", arg(&first)]);
    assert_eq!(ef21(&with_out).status.code(), Some(0));

    let second = dir.path().join("b.csv");
    let cfg = dir.path().join("a.csv.cfg");
    let out = ef21(&["run", "--config", arg(&cfg), "--out", arg(&second)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(std::fs::read(&cfg).unwrap(), std::fs::read(dir.path().join("b.csv.cfg")).unwrap());
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.cfg");
    std::fs::write(&cfg, "# base settings\nmethod = sgdm\niters = 500\ndim = 10\n").unwrap();
    let out = ef21(&["run", "--config", arg(&cfg), "--iters", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 5);
}

#[test]
fn unwritable_output_exits_with_io_code() {
    let out = ef21(&["run", "--method", "sgdm", "--iters", "5", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_method_lists_valid_kinds() {
    let out = ef21(&["run", "--method", "adam", "--iters", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    for kind in ["sgdm", "igt", "rhm", "hm", "mvr"] {
        assert!(err.contains(kind), "{err}");
    }
}

#[test]
fn invalid_parameters_exit_nonzero_and_name_the_field() {
    for (flag, value, field) in [
        ("--gamma0", "-1", "gamma0"),
        ("--compressor", "topk:0", "compressor"),
        ("--clients", "0", "clients"),
    ] {
        let out = ef21(&["run", "--method", "sgdm", "--iters", "5", flag, value]);
        assert_eq!(out.status.code(), Some(1), "{flag} {value}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert!(err.contains(field), "{flag}: {err}");
    }
}

#[test]
fn selftest_passes() {
    let out = ef21(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("all checks passed"));
}

#[test]
fn audit_reports_no_violations_on_noiseless_quadratic() {
    let out = ef21(&["audit", "--method", "hm", "--clients", "4", "--dim", "20", "--iters", "200"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("0 violations in 200 steps"));
}

#[test]
fn compare_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let out = ef21(&[
            "compare",
            "--methods",
            "sgdm,mvr",
            "--seeds",
            "0,1",
            "--iters",
            "300",
            "--dim",
            "20",
            "--sigma-g",
            "0.5",
            "--eps",
            "0.5",
            "--out",
            arg(p),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}
