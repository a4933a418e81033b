use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hada::eval::ReportFile;
use hada::training::read_log;

fn hada(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hada"))
        .current_dir(dir)
        .env_remove("HADA_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hada(dir, args);
    assert!(
        out.status.success(),
        "hada {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"{
  "model": {"d_shared": 8, "d_out": 8, "heads": 2, "d_h": 8},
  "train": {"epochs": 3, "batch_size": 8, "lr_max": 0.001, "dropout": 0.1}
}"#;

fn setup(noise: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), SMALL).unwrap();
    ok(
        dir.path(),
        &[
            "gen-synth",
            "--items",
            "48",
            "--seed",
            "7",
            "--noise",
            noise,
            "--out",
            "store",
        ],
    );
    dir
}

#[test]
fn gen_synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &["gen-synth", "--items", "64", "--seed", "7", "--out", "a"],
    );
    ok(
        p,
        &["gen-synth", "--items", "64", "--seed", "7", "--out", "b"],
    );
    for f in ["manifest.json", "features.bin"] {
        assert_eq!(
            fs::read(p.join("a").join(f)).unwrap(),
            fs::read(p.join("b").join(f)).unwrap()
        );
    }
    let (_, manifest) = hada::featstore::read_store(p.join("a")).unwrap();
    assert_eq!(manifest.pairs.len(), 64);
}

#[test]
fn seed_env_overrides_config_but_not_flag() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let run = |args: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_hada"));
        c.current_dir(p).env_remove("HADA_SEED").args(args);
        if let Some(s) = env {
            c.env("HADA_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
    };
    run(
        &["gen-synth", "--items", "8", "--seed", "3", "--out", "flag"],
        Some("9"),
    );
    run(&["gen-synth", "--items", "8", "--out", "env"], Some("9"));
    run(
        &["gen-synth", "--items", "8", "--seed", "9", "--out", "nine"],
        None,
    );
    let bin = |d: &str| fs::read(p.join(d).join("features.bin")).unwrap();
    assert_eq!(bin("env"), bin("nine"));
    assert_ne!(bin("flag"), bin("nine"));
}

#[test]
fn phase_two_without_resume_is_a_usage_error() {
    let dir = setup("0.5");
    let out = hada(
        dir.path(),
        &["train", "--store", "store", "--phase", "2", "--out", "run"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = hada(
        dir.path(),
        &["train", "--store", "store", "--phase", "3", "--out", "run"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = setup("0.5");
    fs::write(dir.path().join("bad.json"), r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = hada(
        dir.path(),
        &[
            "train", "--config", "bad.json", "--store", "store", "--phase", "1", "--out", "run",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_two() {
    let dir = setup("0.5");
    let out = hada(
        dir.path(),
        &[
            "eval",
            "--store",
            "store",
            "--mode",
            "weighted",
            "--ckpt",
            "nope.hadc",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_log_lines_parse_with_consecutive_epochs() {
    let dir = setup("0.5");
    let p = dir.path();
    let stdout = ok(
        p,
        &[
            "train", "--config", "run.json", "--store", "store", "--phase", "1", "--out", "run",
        ],
    );
    assert!(stdout.starts_with("# hada train\n# config {"));
    let log = read_log(p.join("run/train_log.jsonl")).unwrap();
    assert!(!log.is_empty());
    for (k, r) in log.iter().enumerate() {
        assert_eq!(r.epoch, k + 1);
        assert_eq!(r.phase, 1);
        assert!(r.seconds.is_some());
    }
    assert!(p.join("run/best.hadc").exists());
    assert!(p.join("run/run_config.json").exists());
}

#[test]
fn noise_free_store_single_model_is_perfect() {
    let dir = setup("0");
    let p = dir.path();
    for model in ["alpha", "beta", "anchor"] {
        ok(
            p,
            &[
                "eval", "--store", "store", "--mode", "single", "--model", model, "--out", "r.json",
            ],
        );
        let r: ReportFile = serde_json::from_slice(&fs::read(p.join("r.json")).unwrap()).unwrap();
        assert_eq!(r.i2t.r1, 100.0, "{model}");
        assert_eq!(r.t2i.r1, 100.0, "{model}");
        assert_eq!(r.config_hash, None);
    }
}

#[test]
fn two_phases_then_eval_compare_and_embed() {
    let dir = setup("0.5");
    let p = dir.path();
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--config", "run.json", "--store", "store"];
        args.extend_from_slice(extra);
        ok(p, &args)
    };
    run("train", &["--phase", "1", "--out", "p1"]);
    run(
        "train",
        &["--phase", "2", "--resume", "p1/best.hadc", "--out", "p2"],
    );

    let table = run(
        "eval",
        &[
            "--mode",
            "weighted",
            "--ckpt",
            "p2/best.hadc",
            "--out",
            "w.json",
        ],
    );
    assert!(table.contains("R@10"));
    let w: ReportFile = serde_json::from_slice(&fs::read(p.join("w.json")).unwrap()).unwrap();
    assert_eq!(w.config_hash.as_ref().map(String::len), Some(8));
    assert_eq!(w.checkpoint_hash.as_ref().map(String::len), Some(64));

    run(
        "eval",
        &[
            "--mode",
            "b1",
            "--ckpt-a",
            "p1/best.hadc",
            "--model-b",
            "beta",
        ],
    );

    run(
        "compare",
        &[
            "--hada",
            "p2/best.hadc",
            "--reference",
            "b1",
            "--out",
            "cmp.json",
        ],
    );
    let cmp: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("cmp.json")).unwrap()).unwrap();
    let rows = cmp["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let totals: Vec<f64> = rows
        .iter()
        .map(|r| r["total_rsum"].as_f64().unwrap())
        .collect();
    assert!(totals.windows(2).all(|w| w[0] <= w[1]));
    let reference = rows.iter().find(|r| r["name"] == "b1").unwrap();
    assert_eq!(reference["delta_r"].as_f64(), Some(0.0));
    for r in rows {
        let d = r["delta_r"].as_f64().unwrap();
        assert_eq!(
            d,
            r["total_rsum"].as_f64().unwrap() - reference["total_rsum"].as_f64().unwrap()
        );
    }

    run(
        "embed",
        &["--ckpt", "p2/best.hadc", "--split", "test", "--out", "emb"],
    );
    let (records, manifest) = hada::featstore::read_store(p.join("emb")).unwrap();
    assert_eq!(manifest.models.len(), 1);
    assert_eq!(manifest.models[0].id, "hada");
    for r in &records {
        assert_eq!(r.tokens.data(), r.global.as_slice());
        let norm: f64 = r.global.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn deterministic_log_rerun_is_bytewise_identical() {
    let dir = setup("0.5");
    let p = dir.path();
    for out in ["x", "y"] {
        ok(
            p,
            &[
                "train",
                "--config",
                "run.json",
                "--store",
                "store",
                "--phase",
                "1",
                "--out",
                out,
                "--deterministic-log",
            ],
        );
        ok(
            p,
            &[
                "eval",
                "--config",
                "run.json",
                "--store",
                "store",
                "--mode",
                "fused",
                "--ckpt",
                &format!("{out}/best.hadc"),
                "--out",
                &format!("{out}/report.json"),
            ],
        );
    }
    for f in ["best.hadc", "train_log.jsonl", "report.json"] {
        assert_eq!(
            fs::read(p.join("x").join(f)).unwrap(),
            fs::read(p.join("y").join(f)).unwrap(),
            "{f}"
        );
    }
}
