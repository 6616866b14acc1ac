use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aic_core::datagen::Dataset;
use aic_core::evaluation::parse_kv;
use aic_core::training::Checkpoint;
use aic_core::{AicNet, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aicnet"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn kv(out: &Output) -> BTreeMap<String, String> {
    parse_kv(&String::from_utf8_lossy(&out.stdout)).expect("stdout is key=value")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, config: &str, scenes: usize, name: &str) -> PathBuf {
    let out = dir.join(name);
    let cfg = configs().join(config);
    let o = run(&["gen", "--scenes", &scenes.to_string(), "--spec", s(&cfg), "--seed", "0", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_zero_scenes_writes_valid_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), "toy.toml", 0, "empty.sscd");
    assert!(Dataset::load(&path).unwrap().samples.is_empty());
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "toy.toml", 8, "a.sscd");
    let b = gen(dir.path(), "toy.toml", 8, "b.sscd");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let d = Dataset::load(&a).unwrap();
    assert_eq!(d.samples.len(), 8);
    assert!(a.with_extension("sscd.json").exists());
}

#[test]
fn train_zero_epochs_writes_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("miniature.toml");
    let data = gen(dir.path(), "miniature.toml", 2, "m.sscd");
    let ckpt = dir.path().join("init.ckpt");
    let o = run(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt), "--epochs", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let loaded = Checkpoint::load(&ckpt).unwrap();
    let run_cfg = RunConfig::load(&cfg).unwrap();
    let init = AicNet::<f32>::new(run_cfg.network_spec().unwrap(), run_cfg.seed).unwrap();
    assert_eq!(loaded.params, init.params);
    assert_eq!(kv(&o)["params"], init.params.scalar_count().to_string());
}

#[test]
fn train_logs_default_lr_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("miniature.toml");
    let data = gen(dir.path(), "miniature.toml", 2, "m.sscd");
    let ckpt = dir.path().join("c.ckpt");
    let o = run(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt), "--epochs", "31"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    let lr_of = |epoch: usize| {
        text.lines()
            .find(|l| l.starts_with(&format!("epoch={epoch} ")))
            .and_then(|l| l.split_whitespace().find_map(|f| f.strip_prefix("lr=")))
            .map(|v| v.parse::<f64>().unwrap())
            .unwrap()
    };
    assert_eq!(lr_of(0), 0.01);
    assert_eq!(lr_of(14), 0.01);
    assert_eq!(lr_of(15), 0.001);
    assert_eq!(lr_of(30), 0.0001);
}

#[test]
fn eval_ground_truth_mode_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "toy.toml", 4, "t.sscd");
    let o = run(&["eval", "--data", s(&data), "--ground-truth"]);
    assert!(o.status.success());
    let m = kv(&o);
    for (k, v) in &m {
        if k.starts_with("ssc_iou") || k.starts_with("sc_") {
            assert_eq!(v.parse::<f64>().unwrap(), 1.0, "{k}");
        }
    }
}

#[test]
fn eval_untrained_net_reports_values_in_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("toy.toml");
    let data = gen(dir.path(), "toy.toml", 2, "t.sscd");
    let ckpt = dir.path().join("init.ckpt");
    assert!(run(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt), "--epochs", "0"])
        .status
        .success());
    let report = dir.path().join("report.txt");
    let o = run(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--report", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = parse_kv(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let mut metrics = 0;
    for (k, v) in &m {
        if k.starts_with("ssc_iou") || k.starts_with("sc_") {
            let x: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&x), "{k}={x}");
            metrics += 1;
        }
    }
    assert_eq!(metrics, 3 + 11 + 1);
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "toy.toml", 1, "t.sscd");
    let mini = gen(dir.path(), "miniature.toml", 1, "m.sscd");
    let ckpt = dir.path().join("m.ckpt");
    let cfg = configs().join("miniature.toml");
    assert!(run(&["train", "--data", s(&mini), "--config", s(&cfg), "--out", s(&ckpt), "--epochs", "0"])
        .status
        .success());
    let o = run(&["eval", "--data", s(&data), "--ckpt", s(&ckpt)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
}

#[test]
fn toy_overfit_run_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("toy.toml");
    let data = gen(dir.path(), "toy.toml", 4, "t.sscd");
    let ckpt = dir.path().join("toy.ckpt");
    let o = run(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let loss: f64 = kv(&o)["final_loss"].parse().unwrap();
    assert!(loss < 0.05, "final loss {loss}");
    let o = run(&["eval", "--data", s(&data), "--ckpt", s(&ckpt)]);
    let miou: f64 = kv(&o)["ssc_iou_mean"].parse().unwrap();
    assert!(miou >= 0.95, "mean IoU {miou}");
}

#[test]
fn analyze_default_config() {
    let o = run(&["analyze"]);
    assert!(o.status.success());
    let m = kv(&o);
    for axis in ["x", "y", "z"] {
        assert_eq!(m[&format!("rf_fusion_path_{axis}_depth")], "4");
        assert_eq!(m[&format!("rf_fusion_path_{axis}_min")], "9");
        assert_eq!(m[&format!("rf_fusion_path_{axis}_max")], "25");
    }
    let params: f64 = m["params"].parse().unwrap();
    assert!((params / 847_000.0 - 1.0).abs() <= 0.2, "{params}");
}

#[test]
fn analyze_replacement_scales_cubically() {
    let get = |k: &str| {
        let m = kv(&run(&["analyze", "--replace-3dconv", k]));
        (
            m["params"].parse::<u64>().unwrap(),
            m["replaced_conv_weights"].parse::<u64>().unwrap(),
        )
    };
    let (p3, w3) = get("3");
    let (p5, w5) = get("5");
    let (p7, w7) = get("7");
    assert_eq!(w5 * 27, w3 * 125);
    assert_eq!(w7 * 27, w3 * 343);
    assert!(p3 < p5 && p5 < p7);
    assert_eq!(p5 - p3, w5 - w3);
}

#[test]
fn gradcheck_passes_is_deterministic_and_detects_faults() {
    let a = run(&["gradcheck", "--seed", "3"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    let b = run(&["gradcheck", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
    let bad = run(&["gradcheck", "--seed", "3", "--inject-fault", "softmax_over_channels"]);
    assert!(!bad.status.success());
    let text = String::from_utf8_lossy(&bad.stdout);
    assert!(text.contains("op=softmax_over_channels") && text.contains("status=FAIL"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = run(&["analyze", "--config", s(&cfg)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}
