use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scenebias::models::ModelVariant;
use scenebias_cli::{override_value, parse_config, RunConfig};
use serde_json::Value;

fn scenebias(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenebias"))
        .current_dir(dir)
        .args(args)
        .arg("-q")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn empty_config_gives_training_defaults() {
    let cfg = parse_config("", "empty.json", &[]).unwrap();
    assert_eq!(cfg.train.adam.lr, 0.001);
    assert_eq!(cfg.train.batch_size, 20);
    assert_eq!(cfg.train.plateau.patience, 40);
    assert_eq!(cfg.train.plateau.threshold, 1e-2);
    assert_eq!(cfg.model.backbone.frames, 8);
    assert_eq!(cfg.sandbox.frames, 8);
    assert_eq!(cfg.model.variant, ModelVariant::Baseline);
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(parse_config("{}", "x", &[]).unwrap(), cfg);
}

#[test]
fn negative_seed_names_key_and_line() {
    let text = "{\n  \"jobs\": 2,\n  \"seed\": -3\n}\n";
    let e = parse_config(text, "run.json", &[]).unwrap_err();
    assert_eq!(e.key, "seed");
    assert_eq!(e.line, Some(3));
    assert!(e.to_string().starts_with("run.json:3: key `seed`"), "{e}");
}

#[test]
fn unknown_keys_are_rejected() {
    let e = parse_config("{\n  \"train\": {\n    \"epochz\": 3\n  }\n}", "c.json", &[]).unwrap_err();
    assert_eq!(e.key, "train.epochz");
    assert_eq!(e.line, Some(3));
    let e = parse_config("{\"sede\": 1}", "c.json", &[]).unwrap_err();
    assert_eq!(e.key, "sede");
    let e = parse_config("", "c.json", &[("train.epochz".into(), Value::from(3))]).unwrap_err();
    assert_eq!(e.key, "train.epochz");
}

#[test]
fn validation_errors_name_key_and_line() {
    let text = "{\n  \"train\": {\n    \"adam\": {\n      \"lr\": 0\n    }\n  }\n}";
    let e = parse_config(text, "c.json", &[]).unwrap_err();
    assert_eq!((e.key.as_str(), e.line), ("train.adam.lr", Some(4)));
    let e = parse_config("{\"metrics\": {\"tune_fraction\": 1.5}}", "c.json", &[]).unwrap_err();
    assert_eq!(e.key, "metrics.tune_fraction");
    let e = parse_config("{\"jobs\": 0}", "c.json", &[]).unwrap_err();
    assert_eq!(e.key, "jobs");
}

#[test]
fn config_round_trips() {
    let text = r#"{"seed": 9, "jobs": 3, "model": {"variant": "weighted_focus"},
        "train": {"epochs": 12, "adam": {"lr": 0.01}}, "sandbox": {"classes": 6, "rho": 0.5},
        "prompt": {"iterations": 5, "choice_prefix": "a video of a human"},
        "data": {"manifest": "m.json"}}"#;
    let cfg = parse_config(text, "c.json", &[]).unwrap();
    assert_eq!(cfg.model.variant, ModelVariant::WeightedFocus);
    let again = parse_config(&cfg.to_json(), "again.json", &[]).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.to_json(), cfg.to_json());
}

#[test]
fn overrides_apply_in_order() {
    let ov = vec![
        ("train.epochs".to_owned(), override_value("7")),
        ("model.variant".to_owned(), override_value("segmented")),
        ("train.epochs".to_owned(), override_value("9")),
    ];
    let cfg = parse_config("{\"train\": {\"epochs\": 3}}", "c.json", &ov).unwrap();
    assert_eq!(cfg.train.epochs, 9);
    assert_eq!(cfg.model.variant, ModelVariant::Segmented);
    let e = parse_config("", "c.json", &[("seed".into(), override_value("-1"))]).unwrap_err();
    assert_eq!(e.key, "seed");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = scenebias(dir.path(), &["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(code(&scenebias(dir.path(), &[])), 1);
    assert_eq!(code(&scenebias(dir.path(), &["--help"])), 0);
    assert_eq!(code(&scenebias(dir.path(), &["train", "--variant", "resnet"])), 1);
}

#[test]
fn missing_inputs_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = scenebias(
        dir.path(),
        &["augment", "--manifest", "nope.json", "--pool", "nope.json", "-o", "out"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("data.manifest"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
    let o = scenebias(dir.path(), &["eval", "-o", "out"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--model"), "{}", stderr(&o));
    fs::write(dir.path().join("bad.json"), "{\n  \"seed\": -1\n}").unwrap();
    let o = scenebias(dir.path(), &["gen-sandbox", "--config", "bad.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.json:2: key `seed`"), "{}", stderr(&o));
}

fn manifest_len(path: &Path) -> usize {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["items"].as_array().unwrap().len()
}

#[test]
fn sandbox_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = scenebias(d, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    };
    run(&[
        "gen-sandbox",
        "--per-class",
        "4",
        "--set",
        "sandbox.classes=5",
        "-o",
        "sb",
    ]);
    assert_eq!(manifest_len(&d.join("sb/manifest.json")), 20);
    run(&[
        "augment",
        "--manifest",
        "sb/manifest.json",
        "--pool",
        "sb/manifest.json",
        "--seed",
        "7",
        "-o",
        "aug",
    ]);
    assert_eq!(manifest_len(&d.join("aug/augmented.json")), 40);
    assert_eq!(fs::read_dir(d.join("aug/augmented")).unwrap().count(), 20);
    run(&["swap", "--manifest", "sb/manifest.json", "--target", "12", "-o", "sw"]);
    assert_eq!(manifest_len(&d.join("sw/swap.json")), 12);
    run(&["mcq", "--manifest", "sw/swap.json", "-o", "mcq"]);
    let lines = |p: &str| fs::read_to_string(d.join(p)).unwrap().lines().count();
    assert_eq!((lines("mcq/mcq_tune.jsonl"), lines("mcq/mcq_eval.jsonl")), (3, 9));
    run(&[
        "train",
        "--train",
        "sb/manifest.json",
        "--epochs",
        "2",
        "--variant",
        "dual-branch-stack",
        "-o",
        "tr",
    ]);
    assert_eq!(lines("tr/history.csv"), 3);
    run(&["eval", "--model", "tr", "--manifest", "sw/swap.json", "-o", "ev"]);
    assert_eq!(lines("ev/predictions.csv"), 13);
    run(&[
        "report",
        "--predictions",
        "ev/predictions.csv",
        "--format",
        "csv",
        "--sweep",
        "8=ev/predictions.csv",
        "-o",
        "rp",
    ]);
    assert!(d.join("rp/report.csv").is_file() && d.join("rp/sweep.csv").is_file());
    let o = scenebias(
        d,
        &[
            "report",
            "--predictions",
            "ev/predictions.csv",
            "--format",
            "xml",
            "-o",
            "rp2",
        ],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn build_dataset_skips_videos_without_a_person() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&scenebias(d, &["gen-sandbox", "--per-class", "3", "-o", "sb"])), 0);
    fs::create_dir(d.join("det")).unwrap();
    let det = |label: &str, conf: f64| {
        format!(r#"[{{"frame": 0, "label": "{label}", "confidence": {conf}, "box": [1, 2, 9, 12]}}]"#)
    };
    fs::write(d.join("det/class0_0000.json"), det("person", 0.9)).unwrap();
    fs::write(d.join("det/class0_0001.json"), det("dog", 0.9)).unwrap();
    fs::write(d.join("det/class1_0000.json"), det("person", 0.4)).unwrap();
    fs::write(d.join("det/class1_0001.json"), det("person", 0.8)).unwrap();
    let o = scenebias(
        d,
        &[
            "build-dataset",
            "--manifest",
            "sb/manifest.json",
            "--detections",
            "det",
            "-o",
            "bd",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest_len(&d.join("bd/dataset.json")), 3);
    let skipped = fs::read_to_string(d.join("bd/skipped.txt")).unwrap();
    assert_eq!(skipped.lines().count(), 9);
    assert!(skipped.contains("class0_0001\tno person detected"));
    let boxes = fs::read_to_string(d.join("bd/person_boxes.csv")).unwrap();
    assert_eq!(boxes.lines().nth(1), Some("class0_0000,0,0.9,1,2,9,12"));
    assert_eq!(
        manifest_len(&d.join("bd/train.json")) + manifest_len(&d.join("bd/val.json")),
        3
    );
}

#[test]
fn prompt_tune_replay_reproduces_the_published_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&scenebias(d, &["fixture", "--jobs", "4", "-o", "fx"])), 0);
    let o = scenebias(
        d,
        &[
            "prompt-tune",
            "--replay",
            "fx/transcript.jsonl",
            "--iterations",
            "20",
            "--manual",
            "--jobs",
            "4",
            "-o",
            "pt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let published = scenebias::prompt::published::published();
    let mut rows = csv::Reader::from_path(d.join("pt/iterations.csv")).unwrap();
    let got: Vec<(String, String, String)> = rows
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[1].to_owned(), r[2].to_owned(), r[3].to_owned())
        })
        .collect();
    let want: Vec<(String, String, String)> = published
        .auto
        .iter()
        .map(|a| (a.prompt.clone(), a.shacc.clone(), a.sberr.clone()))
        .collect();
    assert_eq!(got, want);

    let best: Value = serde_json::from_str(&fs::read_to_string(d.join("pt/best.json")).unwrap()).unwrap();
    assert_eq!(best["index"], 15);
    assert_eq!(
        (best["tune_shacc"].as_str(), best["tune_sberr"].as_str()),
        (Some("46.70"), Some("41.55"))
    );
    let history: Value = serde_json::from_str(&fs::read_to_string(d.join("pt/history.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 41);
    let manual = fs::read_to_string(d.join("pt/manual.csv")).unwrap();
    for m in &published.manual {
        assert!(
            manual.contains(&format!("{},8349,{},{}", m.id, m.shacc, m.sberr)),
            "{manual}"
        );
    }

    // A resumed run with everything checkpointed replays no engineer turns.
    let o = scenebias(
        d,
        &["prompt-tune", "--replay", "fx/transcript.jsonl", "--resume", "-o", "pt"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Replay misses are reported, not papered over.
    let o = scenebias(
        d,
        &[
            "prompt-tune",
            "--replay",
            "fx/transcript.jsonl",
            "--set",
            "prompt.engineer.model=other",
            "-o",
            "pt2",
        ],
    );
    assert_eq!(code(&o), 1);
}
