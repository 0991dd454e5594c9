use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use jsonschema::{Registry, Validator};
use nablavar::cli::{run_with, EXIT_DOMAIN, EXIT_OK, EXIT_SUITE, EXIT_USAGE};
use serde_json::Value;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn validator(name: &str) -> Validator {
    let dir = repo().join("schemas");
    let scale = load_json(&dir.join("scale.schema.json"));
    let registry = Registry::new()
        .add("urn:nablavar:schema:scale", scale)
        .unwrap()
        .prepare()
        .unwrap();
    jsonschema::options()
        .with_registry(&registry)
        .build(&load_json(&dir.join(format!("{name}.schema.json"))))
        .unwrap()
}

fn assert_valid(schema: &str, doc: &Value) {
    let v = validator(schema);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}\n{doc:#}");
}

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("nablavar").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn sample(name: &str) -> String {
    repo().join("samples").join(name).to_string_lossy().into_owned()
}

#[test]
fn samples_validate_against_problem_schema() {
    for entry in fs::read_dir(repo().join("samples")).unwrap() {
        let path = entry.unwrap().path();
        assert_valid("problem", &load_json(&path));
    }
}

#[test]
fn solve_direct_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solution.csv");
    let r = run(&["solve", &sample("dirichlet.json"), "--method", "direct", "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let summary: Value = serde_json::from_str(&r.out).unwrap();
    assert_valid("solve_summary", &summary);
    assert_eq!(summary["objective"], 4.0);
    assert_eq!(summary["converged"], true);
    let csv = fs::read_to_string(out).unwrap();
    assert_eq!(csv, "t,y,y_nabla1\n0,0,\n1,1,1\n2,2,1\n3,3,1\n4,4,1\n");
}

#[test]
fn every_method_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let out = out.to_str().unwrap();
    for (file, extra) in [
        ("dirichlet.json", vec!["--method", "brute", "--lo", "0", "--hi", "4", "--steps", "4"]),
        ("beam_q2.json", vec!["--method", "newton"]),
        ("beam_q2.json", vec!["--method", "direct", "--sense", "min"]),
        ("irregular.json", vec!["--method", "direct", "--seed", "5"]),
        ("continuum.json", vec!["--method", "newton", "--tol-res", "1e-11"]),
    ] {
        let p = sample(file);
        let mut args = vec!["solve", p.as_str(), "--out", out];
        args.extend(extra);
        let r = run(&args);
        assert_eq!(r.code, EXIT_OK, "{args:?}: {}", r.err);
        let summary: Value = serde_json::from_str(&r.out).unwrap();
        assert_valid("solve_summary", &summary);
    }
}

#[test]
fn maximisation_reports_original_sign() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("concave.json");
    fs::write(
        &problem,
        r#"{"scale": {"family": "integer_lattice", "a": 0, "b": 4}, "order": 1,
            "lagrangian": "-(u1^2)", "alphas": [0], "betas": [4]}"#,
    )
    .unwrap();
    let out = dir.path().join("s.csv");
    let r = run(&["solve", problem.to_str().unwrap(), "--sense", "max", "--out", out.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let summary: Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(summary["sense"], "max");
    assert!((summary["objective"].as_f64().unwrap() + 4.0).abs() < 1e-10);
}

#[test]
fn solve_output_feeds_check() {
    let dir = tempfile::tempdir().unwrap();
    let y = dir.path().join("y.csv");
    let s = run(&["solve", &sample("irregular.json"), "--out", y.to_str().unwrap()]);
    assert_eq!(s.code, EXIT_OK, "{}", s.err);
    let r = run(&["check", "--y", y.to_str().unwrap(), &sample("irregular.json")]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let report: Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(report["admissible"], true);
    let summary: Value = serde_json::from_str(&s.out).unwrap();
    assert_eq!(report["sup_norm"], summary["el_sup_norm"]);
    assert_eq!(report["objective"], summary["objective"]);
}

#[test]
fn check_emits_el_report() {
    let dir = tempfile::tempdir().unwrap();
    let y = dir.path().join("y.csv");
    fs::write(&y, "t,value\n0,0\n1,1\n2,4\n3,9\n4,16\n").unwrap();
    let r = run(&["check", "--y", y.to_str().unwrap(), &sample("dirichlet.json")]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let report: Value = serde_json::from_str(&r.out).unwrap();
    assert_valid("el_report", &report);
    // L_{u1} = 2 y^nabla = 2(2t - 1); residual -(L_{u1})^nabla = -4
    assert_eq!(report["sup_norm"], 4.0);
    assert_eq!(report["residual_csv"], "t,value\n2,-4\n3,-4\n4,-4\n");
    assert_eq!(report["admissible"], false);
}

#[test]
fn suite_reports_and_failure_path() {
    let r = run(&["suite", "--trials", "100", "--seed", "7"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let reports: Value = serde_json::from_str(&r.out).unwrap();
    assert_valid("suite_report", &reports);
    assert_eq!(reports.as_array().unwrap().len(), 3);

    let bad = run(&["suite", "--trials", "100", "--seed", "7", "--inject-fault"]);
    assert_eq!(bad.code, EXIT_SUITE);
    let reports: Value = serde_json::from_str(&bad.out).unwrap();
    assert_valid("suite_report", &reports);
    assert!(reports.as_array().unwrap().iter().all(|s| s["passed"] == false));
}

#[test]
fn suite_on_custom_scale() {
    let r = run(&["suite", "--scale", r#"{"points": [0, 0.5, 1.7, 2, 3.1, 4]}"#, "--trials", "10"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let reports: Value = serde_json::from_str(&r.out).unwrap();
    assert_valid("suite_report", &reports);
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let csv = dir.path().join(format!("s{k}.csv"));
        let r = run(&["solve", &sample("irregular.json"), "--seed", "42", "--out", csv.to_str().unwrap()]);
        let s = run(&["suite", "--trials", "25", "--seed", "3"]);
        outputs.push((r.out, fs::read(&csv).unwrap(), s.out));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn scale_diff_integrate() {
    let r = run(&["scale", "inspect", r#"{"family": "q_lattice", "params": {"q": 2}, "a": 1, "b": 8}"#]);
    assert_eq!(r.code, EXIT_OK);
    assert_eq!(r.out, "index,t,rho,sigma,nu\n0,1,1,2,0\n1,2,1,4,1\n2,4,2,8,2\n3,8,4,8,4\n");

    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.csv");
    fs::write(&f, "t,value\n0,0\n1,1\n2,4\n3,9\n4,16\n").unwrap();
    let z = r#"{"family": "integer_lattice", "a": 0, "b": 4}"#;
    let d = run(&["diff", "--scale", z, "--order", "1", "--rho", "1", f.to_str().unwrap()]);
    assert_eq!(d.code, EXIT_OK, "{}", d.err);
    // (t-1)^2 nabla = 2t - 3 on points[2..]
    assert_eq!(d.out, "t,value\n2,1\n3,3\n4,5\n");

    let out = dir.path().join("int.csv");
    let i = run(&["integrate", "--scale", z, "--from", "1", "--to", "4", f.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(i.code, EXIT_OK, "{}", i.err);
    assert_eq!(fs::read_to_string(out).unwrap(), "t,value\n1,0\n2,4\n3,13\n4,29\n");

    let back = run(&["integrate", "--scale", z, "--from", "4", "--to", "1", f.to_str().unwrap()]);
    assert_eq!(back.out, "t,value\n1,-29\n2,-25\n3,-16\n4,0\n");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&[]).code, EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(run(&["solve", &sample("dirichlet.json"), "--method", "gradient"]).code, EXIT_USAGE);
    assert_eq!(run(&["solve", &sample("dirichlet.json"), "--method", "brute"]).code, EXIT_USAGE);
    assert_eq!(run(&["suite", "--trials", "many"]).code, EXIT_USAGE);
    assert_eq!(run(&["--help"]).code, EXIT_OK);

    let missing = run(&["solve", "/nonexistent/problem.json"]);
    assert_eq!(missing.code, EXIT_DOMAIN);
    assert!(missing.err.starts_with("error: input error"));

    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("p.json");
    fs::write(
        &unknown,
        r#"{"scale": {"points": [0, 1, 2]}, "order": 1, "lagrangian": "u1^2", "alphas": [0], "betas": [1], "x": 1}"#,
    )
    .unwrap();
    assert_eq!(run(&["solve", unknown.to_str().unwrap()]).code, EXIT_DOMAIN);

    // a 2r-point scale is evaluable but not solvable
    let degenerate = dir.path().join("d.json");
    fs::write(
        &degenerate,
        r#"{"scale": {"points": [0, 1, 2, 3]}, "order": 2, "lagrangian": "u2^2", "alphas": [0, 0], "betas": [1, 1]}"#,
    )
    .unwrap();
    let r = run(&["solve", degenerate.to_str().unwrap(), "--out", dir.path().join("s.csv").to_str().unwrap()]);
    assert_eq!(r.code, EXIT_DOMAIN);
    assert!(r.err.contains("degenerate problem"), "{}", r.err);

    // the backward jump is not affine on an irregular scale
    let irregular = dir.path().join("h.json");
    fs::write(
        &irregular,
        r#"{"scale": {"points": [0, 1, 1.5, 3, 3.2, 5]}, "order": 2, "lagrangian": "u2^2", "alphas": [0, 0], "betas": [1, 1]}"#,
    )
    .unwrap();
    let r = run(&["solve", irregular.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_DOMAIN);
    assert!(r.err.contains("backward jump is not affine"), "{}", r.err);
}

#[test]
fn non_convergence_exits_with_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let r = run(&[
        "solve",
        &sample("beam_q2.json"),
        "--max-iter",
        "1",
        "--tol-grad",
        "1e-300",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.code, EXIT_DOMAIN);
    let summary: Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(summary["converged"], false);
    assert!(out.exists());
}

#[test]
fn binary_honours_seed_environment() {
    let exe = env!("CARGO_BIN_EXE_nablavar");
    let suite = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(exe);
        cmd.args(["suite", "--trials", "5"]);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        cmd.env_remove("NABLAVAR_SEED");
        if let Some(s) = env {
            cmd.env("NABLAVAR_SEED", s);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(EXIT_OK));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        v[0]["seed"].as_u64().unwrap()
    };
    assert_eq!(suite(None, None), 0);
    assert_eq!(suite(Some("11"), None), 11);
    assert_eq!(suite(Some("11"), Some("4")), 4);

    let status = Command::new(exe).arg("bogus").output().unwrap().status;
    assert_eq!(status.code(), Some(EXIT_USAGE));
}
