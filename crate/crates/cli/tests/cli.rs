use std::path::Path;
use std::process::{Command, Output};

fn ecpec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecpec"))
        .current_dir(dir)
        .env_remove("ECPEC_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn small_run(dir: &Path) -> Vec<String> {
    let data = dir.join("data");
    [
        "seed=3".to_string(),
        "synthetic.n_conversations=30".into(),
        format!("output_dir={}", dir.join("run").display()),
        format!("data.train={}", data.join("train.json").display()),
        format!("data.dev={}", data.join("dev.json").display()),
        format!("data.test={}", data.join("test.json").display()),
        "cee.dim=16".into(),
        "cee.hidden=16".into(),
        "cee.epochs=2".into(),
        "cse.dim=16".into(),
        "cse.epochs=1".into(),
    ]
    .into_iter()
    .flat_map(|s| ["--set".to_string(), s])
    .collect()
}

fn with<'a>(cmd: &'a str, extra: &'a [String]) -> Vec<&'a str> {
    std::iter::once(cmd).chain(extra.iter().map(String::as_str)).collect()
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let mut sets = small_run(d.path());
        sets.extend(["--out".into(), "data".into()]);
        let out = ecpec(d.path(), &with("gen-data", &sets));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["train.json", "dev.json", "test.json"] {
        let x = std::fs::read(a.path().join("data").join(f)).unwrap();
        let y = std::fs::read(b.path().join("data").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn usage_and_config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(ecpec(d.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(ecpec(d.path(), &["gen-data", "--set", "nonsense.key=1"]).status.code(), Some(2));
    let missing = ecpec(d.path(), &["predict", "--set", "output_dir=x"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&missing.stderr).is_empty());
    assert_eq!(ecpec(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn full_pipeline_then_evaluate_and_ensemble() {
    let d = tempfile::tempdir().unwrap();
    let sets = small_run(d.path());
    let out = ecpec(d.path(), &[with("gen-data", &sets), vec!["--out", "data"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for cmd in ["train-erc-baseline", "train-cee", "train-cse", "predict"] {
        let out = ecpec(d.path(), &with(cmd, &sets));
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let pred = d.path().join("run/predictions.jsonl");
    let gold = d.path().join("data/test.json");
    let out = ecpec(
        d.path(),
        &["evaluate", "--pred", pred.to_str().unwrap(), "--gold", gold.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let f1 = v["pairs"]["pos_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    let merged = d.path().join("merged.jsonl");
    let p = pred.to_str().unwrap();
    let out = ecpec(
        d.path(),
        &["ensemble", "--pred", p, p, p, "--out", merged.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let read = |path: &Path| {
        let mut lines: Vec<String> = std::fs::read_to_string(path).unwrap().lines().map(String::from).collect();
        lines.sort();
        lines
    };
    assert_eq!(read(&merged).len(), read(&pred).len());

    let out = ecpec(d.path(), &with("report", &sets));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("pos_f1"));
}
