//! End-to-end command tests: every subcommand is exercised through the real
//! binary, including the exit-code contract and output determinism.

use std::path::Path;
use std::process::{Command, Output};

fn mxa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mxa"))
        .args(args)
        .output()
        .expect("failed to run mxa binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// Tiny model + two-epoch run used by the pipeline tests.
fn toy_config() -> &'static str {
    r#"{
        "model": {
            "widths": [4, 6, 8], "depths": [1, 1, 1], "heads": [2, 2, 2],
            "patch_size": 2, "window": 7, "image_size": 8,
            "num_labels": 14, "mxa_enabled": true,
            "cbam_reduction": 2, "cbam_spatial_kernel": 7
        },
        "train": {
            "total_epochs": 2, "warmup_epochs": 1, "batch_size": 4,
            "seed": 7, "alpha": 0.0, "tau": 1.0
        }
    }"#
}

fn toy_synth_spec() -> String {
    // 8-pixel images keep the pipeline tests fast
    let mut spec = serde_json::json!({
        "image_size": 8,
        "background": 0.25,
        "noise_sigma": 0.05,
        "uncertain_fraction": 0.25,
        "blank_negative_fraction": 0.3,
        "signals": [],
        "cooccurrence": []
    });
    let mut signals = vec![serde_json::json!({"kind": "brightness", "intensity": 0.2})];
    for i in 0..13 {
        let x = 0.1 + 0.05 * (i % 4) as f64;
        let y = 0.1 + 0.05 * (i / 4) as f64;
        signals.push(serde_json::json!({
            "kind": {"rect": {"x": x, "y": y, "w": 0.3, "h": 0.3}},
            "intensity": 0.5
        }));
    }
    spec["signals"] = serde_json::Value::Array(signals);
    let mut cooc = vec![vec![0.0f64; 14]; 14];
    for (j, row) in cooc.iter_mut().enumerate() {
        row[j] = 0.4;
    }
    spec["cooccurrence"] = serde_json::to_value(cooc).unwrap();
    spec.to_string()
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let top = mxa(&["--help"]);
    assert_eq!(code(&top), 0);
    let text = stdout(&top);
    for sub in ["gradcheck", "synth", "train", "eval", "adapt-teacher", "attn-maps"] {
        assert!(text.contains(sub), "top help missing {sub}");
    }

    let cases: &[(&str, &[&str])] = &[
        ("gradcheck", &["--scope", "--seeds", "--tol", "[default: ops]", "[default: 5]"]),
        ("synth", &["--spec", "--n", "--seed", "--out", "[default: 500]", "[default: 0]"]),
        (
            "train",
            &["--config", "--data", "--val-data", "--teacher-logits", "--val-teacher-logits", "--out"],
        ),
        ("eval", &["--checkpoint", "--data", "--json", "--roi-csv"]),
        ("adapt-teacher", &["--logits", "--map", "--out"]),
        ("attn-maps", &["--checkpoint-a", "--checkpoint-b", "--image", "--out"]),
    ];
    for (sub, needles) in cases {
        let out = mxa(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help failed");
        let text = stdout(&out);
        for needle in *needles {
            assert!(text.contains(needle), "{sub} --help missing '{needle}':\n{text}");
        }
    }
}

#[test]
fn usage_errors_exit_with_code_one() {
    let out = mxa(&["train", "--no-such-flag"]);
    assert_eq!(code(&out), 1);
    let out = mxa(&["gradcheck", "--scope", "bogus"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_files_exit_with_code_three() {
    let out = mxa(&["eval", "--checkpoint", "/nonexistent.mxz", "--data", "/nonexistent"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn synth_is_deterministic_and_supports_empty_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, toy_synth_spec()).unwrap();
    let spec = spec_path.to_str().unwrap();

    let out0 = dir.path().join("empty");
    let r = mxa(&["synth", "--spec", spec, "--n", "0", "--seed", "1", "--out", out0.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let labels = std::fs::read_to_string(out0.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1, "n=0 writes only the header");
    assert!(labels.starts_with("Path,No Finding,"));

    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let r = mxa(&["synth", "--spec", spec, "--n", "6", "--seed", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&r), 0);
    }
    assert_eq!(
        std::fs::read(out1.join("labels.csv")).unwrap(),
        std::fs::read(out2.join("labels.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(out1.join("images/sample_00003.pgm")).unwrap(),
        std::fs::read(out2.join("images/sample_00003.pgm")).unwrap()
    );
}

#[test]
fn gradcheck_ops_passes() {
    let out = mxa(&["gradcheck", "--scope", "ops", "--seeds", "1"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
    assert!(text.contains("crop_resize"));
}

fn write_dataset(dir: &Path, n: usize, seed: u64) {
    let spec_path = dir.join("spec_in.json");
    std::fs::write(&spec_path, toy_synth_spec()).unwrap();
    let r = mxa(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "synth failed: {}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn train_eval_attn_maps_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_dataset(&data, 10, 5);
    let config = dir.path().join("config.json");
    std::fs::write(&config, toy_config()).unwrap();

    let run1 = dir.path().join("run1");
    let r = mxa(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        run1.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "train failed: {}", String::from_utf8_lossy(&r.stderr));
    for f in ["checkpoint.mxz", "checkpoint_ema.mxz", "metrics.jsonl", "metrics_raw.jsonl", "manifest.json"] {
        assert!(run1.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run1.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let line: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in ["epoch", "lr", "loss", "auc_macro", "auc_micro", "auc_per_label", "acc", "f1"] {
        assert!(line.get(key).is_some(), "metrics line missing {key}");
    }
    assert_eq!(line["auc_per_label"].as_array().unwrap().len(), 14);

    // identical reruns produce byte-identical logs
    let run2 = dir.path().join("run2");
    let r = mxa(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        run2.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0);
    assert_eq!(
        std::fs::read(run1.join("metrics.jsonl")).unwrap(),
        std::fs::read(run2.join("metrics.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(run1.join("metrics_raw.jsonl")).unwrap(),
        std::fs::read(run2.join("metrics_raw.jsonl")).unwrap()
    );

    // eval prints the per-label table and writes JSON + ROI boxes
    let report = dir.path().join("report.json");
    let boxes = dir.path().join("boxes.csv");
    let r = mxa(&[
        "eval",
        "--checkpoint",
        run1.join("checkpoint.mxz").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--json",
        report.to_str().unwrap(),
        "--roi-csv",
        boxes.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "eval failed: {}", String::from_utf8_lossy(&r.stderr));
    let text = stdout(&r);
    for abbrev in ["NF", "ECM", "SD", "macro AUC"] {
        assert!(text.contains(abbrev), "eval output missing {abbrev}:\n{text}");
    }
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["auc_per_label"].as_array().unwrap().len(), 14);
    let box_lines = std::fs::read_to_string(&boxes).unwrap();
    assert_eq!(box_lines.lines().count(), 11); // header + 10 samples
    assert!(box_lines.starts_with("sample_id,x1,y1,x2,y2"));

    // eval twice → identical output
    let r2 = mxa(&[
        "eval",
        "--checkpoint",
        run1.join("checkpoint.mxz").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    let r3 = mxa(&[
        "eval",
        "--checkpoint",
        run1.join("checkpoint.mxz").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(stdout(&r2), stdout(&r3));

    // attention maps: same checkpoint on both sides → delta uniformly 128
    let maps = dir.path().join("maps");
    let image = data.join("images/sample_00000.pgm");
    let r = mxa(&[
        "attn-maps",
        "--checkpoint-a",
        run1.join("checkpoint.mxz").to_str().unwrap(),
        "--checkpoint-b",
        run1.join("checkpoint.mxz").to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--out",
        maps.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "attn-maps failed: {}", String::from_utf8_lossy(&r.stderr));
    for stage in 0..3 {
        assert!(maps.join(format!("a_stage{stage}.pgm")).exists());
        let delta = std::fs::read(maps.join(format!("delta_stage{stage}.pgm"))).unwrap();
        let body_start = delta.len() - (delta[delta.len() - 1..].len());
        let _ = body_start;
        // parse past the header: P5\n<w> <h>\n255\n
        let header_end = delta
            .windows(4)
            .position(|w| w == b"255\n")
            .map(|p| p + 4)
            .unwrap();
        assert!(delta[header_end..].iter().all(|&b| b == 128), "stage {stage} delta not neutral");
    }
}

#[test]
fn train_with_alpha_requires_teacher_logits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_dataset(&data, 6, 2);
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        toy_config().replace("\"alpha\": 0.0", "\"alpha\": 0.5"),
    )
    .unwrap();
    let r = mxa(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("teacher"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"model": {"wdiths": [4,6,8]}}"#).unwrap();
    let r = mxa(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        "/nonexistent",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("wdiths"));
}

#[test]
fn adapt_teacher_golden_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let logits = dir.path().join("teacher.csv");
    let header: Vec<String> = (0..18).map(|i| format!("o{i}")).collect();
    std::fs::write(
        &logits,
        format!("sample_id,{}\ns0,{}\n", header.join(","), vec!["0.0"; 18].join(",")),
    )
    .unwrap();
    let map = dir.path().join("map.json");
    std::fs::write(
        &map,
        r#"{"map":{"0":"SYNTHESIZE_NF","1":17,"2":10,"3":16,"4":14,"5":4,"6":1,"7":8,"8":0,"9":3,"10":7,"11":"ZERO","12":15,"13":"ZERO"}}"#,
    )
    .unwrap();
    let out = dir.path().join("adapted.csv");
    let r = mxa(&[
        "adapt-teacher",
        "--logits",
        logits.to_str().unwrap(),
        "--map",
        map.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("sample_id,a0"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "s0");
    let nf: f64 = row[1].parse().unwrap();
    assert!((nf - (-12.476)).abs() < 1e-3, "NF logit {nf}");
    for cell in &row[2..] {
        assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
    }
    // trailing dynamic-weights summary; the all-zero row gives p=0.5 for
    // mapped slots → w = 0.5, ZERO slots → 0
    let weights_line = lines.next().unwrap();
    assert!(weights_line.starts_with("# dynamic_weights,"));
    let w: Vec<f64> = weights_line
        .trim_start_matches("# dynamic_weights,")
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(w.len(), 14);
    assert!((w[1] - 0.5).abs() < 1e-12);
    assert_eq!(w[11], 0.0);
    assert_eq!(w[13], 0.0);

    // duplicate ids are rejected
    std::fs::write(
        &logits,
        format!(
            "sample_id,{}\ns0,{}\ns0,{}\n",
            header.join(","),
            vec!["0.0"; 18].join(","),
            vec!["0.0"; 18].join(",")
        ),
    )
    .unwrap();
    let r = mxa(&[
        "adapt-teacher",
        "--logits",
        logits.to_str().unwrap(),
        "--map",
        map.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 1);
}
