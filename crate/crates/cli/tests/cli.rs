use std::path::Path;
use std::process::{Command, Output};

fn loglab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_loglab"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("LOGLAB_THREADS", t),
        None => cmd.env_remove("LOGLAB_THREADS"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn theory_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"n": 12, "k": 4, "B": 400}"#);
    let out = dir.path().join("run");
    let o = loglab(
        &[
            "run-theory",
            "--config",
            &config,
            "--seed",
            "3",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "params.json",
        "loss.csv",
        "record.json",
        "gradient.json",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let loss = read(out.join("loss.csv"));
    assert_eq!(loss.lines().count(), 1 + 2);
    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["B"], 400);
    assert_eq!(manifest["config"]["mode"], "theory");
    assert_eq!(manifest["secret"].as_array().unwrap().len(), 4);
    let bytes = std::fs::read(out.join("params.json")).unwrap();
    assert_eq!(
        manifest["outputs"]["params.json"],
        loglab_core::io::git_blob_sha256(&bytes).as_str()
    );

    let o = loglab(
        &[
            "eval",
            "--params",
            out.join("params.json").to_str().unwrap(),
            "--size",
            "100",
        ],
        None,
    );
    assert!(o.status.success());
    let eval: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(eval["sign_accuracy"].as_f64().unwrap() <= 1.0);

    let attn = dir.path().join("attn");
    let o = loglab(
        &[
            "export-attn",
            "--params",
            out.join("params.json").to_str().unwrap(),
            "--out-dir",
            attn.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success());
    for l in 1..=2 {
        assert!(read(attn.join(format!("attn_layer{l}.svg"))).starts_with("<svg"));
        assert!(read(attn.join(format!("attn_layer{l}.csv"))).starts_with("key,q_1,"));
    }
}

#[test]
fn manifest_reproduces_outputs_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"n": 10, "k": 4, "mode": "experiment", "seed": 8,
            "experiment": {"steps_per_stage": 40, "batch": 64, "eval_every": 10, "eval_size": 100}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = loglab(
        &["run-gd", "--config", &config, "--out-dir", a.to_str().unwrap()],
        Some("1"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(a.join("loss.csv")).lines().count(), 1 + 8);

    // rerun from the manifest's config echo alone
    let manifest: serde_json::Value = serde_json::from_str(&read(a.join("manifest.json"))).unwrap();
    let echoed = write_config(dir.path(), &manifest["config"].to_string());
    let o = loglab(
        &["run-gd", "--config", &echoed, "--out-dir", b.to_str().unwrap()],
        Some("4"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mb: serde_json::Value = serde_json::from_str(&read(b.join("manifest.json"))).unwrap();
    assert_eq!(manifest["outputs"], mb["outputs"]);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"n": 30, "k": 12}"#);
    let o = loglab(
        &[
            "run-theory",
            "--config",
            &config,
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`k`"));

    let o = loglab(
        &["eval", "--params", dir.path().join("missing.json").to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2));

    let o = loglab(&["eval", "--params", "x.json"], Some("lots"));
    assert_eq!(o.status.code(), Some(2));
}
