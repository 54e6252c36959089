use std::process::Command;

use vcnn::bench::CSV_HEADER;

fn vcnn(args: &[&str], dir: &std::path::Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vcnn"))
        .args(args)
        .current_dir(dir)
        .env("VCNN_THREADS", "1")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn missing_config_exits_one_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = vcnn(&["train", "--config", "absent/run.json"], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("absent/run.json"), "{err}");
}

#[test]
fn unknown_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = vcnn(&["bench", "ladder", "--turbo"], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn bench_ladder_writes_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = vcnn(&["bench", "ladder", "--scale", "1", "--batch", "100", "--format", "csv"], dir.path());
    assert_eq!(code, 0, "{err}");
    let mut rows = csv::Reader::from_reader(out.as_bytes());
    assert_eq!(rows.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    let records: Vec<_> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 6);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(&r[0], "scale1-analog");
        assert_eq!(r[1], format!("imp{}", i + 1));
        assert_eq!(&r[2], "train");
        assert_eq!(&r[3], "100");
        assert!(r[4].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn bench_json_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = vcnn(
        &["bench", "breakdown", "--scale", "1", "--batch", "2", "--format", "json", "--out", "b.json"],
        dir.path(),
    );
    assert_eq!(code, 0, "{err}");
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(doc["schema"], "vcnn-bench/1");
    assert_eq!(doc["reports"][0]["variant"], "imp6");
    assert!(doc["reports"][0]["full_b"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_then_predict_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let paths = vcnn::synth::write_synthetic_mnist(dir.path(), 300, 60, 9).unwrap();
    let config = serde_json::json!({
        "input": [28, 28, 1],
        "layers": [
            {"type": "conv", "kernel": [5, 5], "maps": 4, "activation": "relu"},
            {"type": "pool", "window": [2, 2], "mode": "max"},
            {"type": "full", "units": 10}
        ],
        "loss": "softmax-cross-entropy",
        "learning_rate": 0.05,
        "batch_size": 20,
        "epochs": 2,
        "train_images": paths[0], "train_labels": paths[1],
        "test_images": paths[2], "test_labels": paths[3]
    });
    std::fs::write(dir.path().join("run.json"), config.to_string()).unwrap();
    let run = |out: &str| vcnn(&["train", "--config", "run.json", "--seed", "4", "--out", out], dir.path());
    let (c1, o1, e1) = run("a.vcnn");
    let (c2, o2, _) = run("b.vcnn");
    assert_eq!((c1, c2), (0, 0), "{e1}");
    assert_eq!(o1.replace("a.vcnn", "X"), o2.replace("b.vcnn", "X"));
    assert!(o1.contains("epoch 1 loss"), "{o1}");
    assert_eq!(std::fs::read(dir.path().join("a.vcnn")).unwrap(), std::fs::read(dir.path().join("b.vcnn")).unwrap());

    let images = paths[2].to_str().unwrap();
    let labels = paths[3].to_str().unwrap();
    let (code, out, err) = vcnn(
        &["predict", "--model", "a.vcnn", "--images", images, "--labels", labels, "--variant", "imp3"],
        dir.path(),
    );
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("index,class\n0,"));
    assert!(out.contains("accuracy "));
}

#[test]
fn denoise_train_and_apply() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("d.json"),
        r#"{"preset": "denoise", "synth_count": 40, "synth_size": 20, "epochs": 1, "batch_size": 10, "learning_rate": 0.05}"#,
    )
    .unwrap();
    let (code, out, err) = vcnn(&["denoise", "train", "--config", "d.json", "--out", "d.vcnn"], dir.path());
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("held-out psnr"), "{out}");
    let img = vcnn::synth::smooth_scenes::<f32>(1, 24, 30, 3).unwrap();
    vcnn::io::write_pgm(&dir.path().join("in.pgm"), &img).unwrap();
    let (code, out, err) = vcnn(&["denoise", "apply", "--model", "d.vcnn", "--input", "in.pgm", "--out", "o.pgm"], dir.path());
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("18x12"), "{out}");
    let back = vcnn::io::read_pgm::<f32>(&dir.path().join("o.pgm")).unwrap();
    assert_eq!(back.shape(), &[12, 18, 1, 1]);
}

#[test]
fn selftest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = vcnn(&["selftest"], dir.path());
    assert_eq!(code, 0);
    assert!(!out.contains("FAIL"));
}
