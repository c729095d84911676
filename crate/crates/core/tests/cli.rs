use std::path::PathBuf;
use std::process::{Command, Output};

fn model(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("models")
        .join(format!("{name}.json"))
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_episwitch"))
        .args(args)
        .env("EPISWITCH_THREADS", "2")
        .output()
        .unwrap()
}

fn manifest(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_passes_reference_models() {
    for m in ["model_b", "model_s", "model_n", "const_env_2d"] {
        let out = run(&["validate", "--config", &model(m)]);
        assert_eq!(out.status.code(), Some(0), "{m}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn pstar_json_to_file_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pstar.json");
    let res = run(&["pstar", "--config", &model("model_b"), "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let v = manifest(&out);
    assert_eq!(v["method"], "exact-1d");
    assert!((v["value"].as_f64().unwrap() - 1.5).abs() < 1e-6);

    let m = manifest(&dir.path().join("pstar.json.manifest.json"));
    assert_eq!(m["subcommand"], "pstar");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn strongly_supercritical_root_not_found() {
    let res = run(&["pstar", "--config", &model("model_s")]);
    assert_eq!(res.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["status"], "not-found-below-p-max");
}

#[test]
fn qsd_directory_output() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["qsd", "--config", &model("model_b"), "--K", "50", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("qsd.csv")).unwrap();
    assert!(csv.starts_with("n_1,env,weight\n"));
    assert_eq!(csv.lines().count(), 1 + 100);
    let summary = manifest(&dir.path().join("summary.json"));
    assert!(summary["residual"].as_f64().unwrap() < 1e-10);
    let m = manifest(&dir.path().join("manifest.json"));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn same_seed_same_output() {
    let args = ["chain", "--config", &model("model_b"), "--K", "40", "--horizon", "5", "--seed", "9"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("t,event,n_1,env\n0,start,20,0\n"));
}

#[test]
fn gcurve_and_scaling_csv() {
    let res = run(&["gcurve", "--config", &model("model_b"), "--p-from", "-1", "--p-to", "1", "--p-step", "0.5"]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.starts_with("p,g,se,method\n"));
    assert_eq!(text.lines().count(), 6);

    let res = run(&["scaling", "--config", &model("model_b"), "--ladder", "50,100"]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8(res.stdout).unwrap().starts_with("K,lambda,residual,iters\n"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["qsd", "--config", &model("model_b")]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["validate", "--config", "/no/such/file.json"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"d": 1, "environments": [], "Q": [[0]]}"#).unwrap();
    assert_eq!(run(&["validate", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    // power iteration with too few steps does not converge
    let res = run(&["qsd", "--config", &model("model_b"), "--K", "200", "--method", "power", "--max-iter", "3"]);
    assert_eq!(res.status.code(), Some(3));
}
