use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn twostream(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twostream"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = twostream(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{"data": {"num_classes": 5, "train_per_class": 4, "test_per_class": 8}, "train": {"max_iterations": 0}}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    text.trim_end().to_string()
}

#[test]
fn untrained_models_score_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let data = d.join("data");
    ok(&["--config", &cfg, "gen-data", "--out-dir", data.to_str().unwrap()]);
    let manifest = data.join("manifest.json");
    let manifest = manifest.to_str().unwrap();
    let mut total = 0.0;
    let seeds = 12;
    for seed in 0..seeds {
        let ck = d.join(format!("ck{seed}"));
        let report = d.join(format!("r{seed}.json"));
        let seed = seed.to_string();
        ok(&[
            "--config",
            &cfg,
            "--seed",
            &seed,
            "train",
            "--data",
            manifest,
            "--out",
            ck.to_str().unwrap(),
        ]);
        ok(&[
            "eval",
            "--data",
            manifest,
            "--checkpoints",
            ck.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ]);
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        total += r["result"]["report"]["accuracy"].as_f64().unwrap();
    }
    let mean = total / seeds as f64;
    // 1/C = 0.2; the mean of 12 independent random models lands well inside this band
    assert!((0.08..=0.32).contains(&mean), "mean untrained accuracy {mean}");
}

#[test]
fn uniform_attention_exports_flat_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let data = d.join("data");
    ok(&["--config", &cfg, "gen-data", "--out-dir", data.to_str().unwrap()]);
    let manifest = data.join("manifest.json");
    let ck = d.join("ck");
    ok(&[
        "--config",
        &cfg,
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        ck.to_str().unwrap(),
        "--no-spatial",
        "--no-temporal",
    ]);
    let att = d.join("att");
    ok(&[
        "--config",
        &cfg,
        "--no-timestamp",
        "export-attention",
        "--data",
        manifest.to_str().unwrap(),
        "--checkpoints",
        ck.to_str().unwrap(),
        "--video-id",
        "test-00003",
        "--out",
        att.to_str().unwrap(),
    ]);
    let mut pgms = 0;
    for entry in fs::read_dir(&att).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "pgm") {
            pgms += 1;
            let text = fs::read_to_string(&path).unwrap();
            let mut tokens = text.split_whitespace();
            assert_eq!(tokens.next(), Some("P2"));
            let levels: Vec<&str> = tokens.skip(3).collect();
            assert_eq!(levels.len(), 16);
            assert!(levels.iter().all(|&l| l == levels[0]), "{}", path.display());
        }
    }
    assert_eq!(pgms, 16);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(att.join("attention.json")).unwrap()).unwrap();
    assert!(json.get("timestamp").is_none());
    assert_eq!(
        json["result"]["streams"]["static"]["temporal_weights"]
            .as_array()
            .unwrap()
            .len(),
        8
    );
    assert_eq!(json["config"]["train"]["max_iterations"], 0);
}

#[test]
fn gradcheck_default_seed_passes() {
    let out = ok(&["gradcheck"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("cases"));
}

#[test]
fn exit_codes_follow_the_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("missing.json");
    let missing = missing.to_str().unwrap();

    let usage = twostream(&["eval", "--bogus"]);
    assert_eq!(usage.status.code(), Some(2));

    let out = twostream(&["eval", "--data", missing, "--checkpoints", ".", "--report", "r.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("manifest-not-found"));

    let out = twostream(&["--config", missing, "gradcheck"]);
    assert_eq!(out.status.code(), Some(3));

    let bad_cfg = d.join("bad.json");
    fs::write(&bad_cfg, r#"{"data": {"signal_frames": 0}}"#).unwrap();
    let out = twostream(&[
        "--config",
        bad_cfg.to_str().unwrap(),
        "gen-data",
        "--out-dir",
        d.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_line(&out).starts_with("bad-config"));

    let cfg = small_config(d);
    let data = d.join("data");
    ok(&["--config", &cfg, "gen-data", "--out-dir", data.to_str().unwrap()]);
    let manifest = data.join("manifest.json");
    // checkpoints directory without checkpoints
    let out = twostream(&[
        "eval",
        "--data",
        manifest.to_str().unwrap(),
        "--checkpoints",
        d.to_str().unwrap(),
        "--report",
        "r.json",
    ]);
    assert_eq!(out.status.code(), Some(3));

    fs::write(d.join("static.ckpt"), b"TCLM").unwrap();
    fs::write(d.join("motion.ckpt"), b"nonsense").unwrap();
    let out = twostream(&[
        "eval",
        "--data",
        manifest.to_str().unwrap(),
        "--checkpoints",
        d.to_str().unwrap(),
        "--report",
        "r.json",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_line(&out).starts_with("corrupt-file"));
}

#[test]
fn gen_data_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    for name in ["a", "b"] {
        ok(&[
            "--config",
            &cfg,
            "gen-data",
            "--out-dir",
            d.join(name).to_str().unwrap(),
        ]);
    }
    let mut names: Vec<_> = fs::read_dir(d.join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 61);
    for n in names {
        assert_eq!(
            fs::read(d.join("a").join(&n)).unwrap(),
            fs::read(d.join("b").join(&n)).unwrap()
        );
    }
}
