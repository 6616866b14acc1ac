//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aic_core::aic::{Activation, AicModule, AicSpec, BankSpec, Modulation};
use aic_core::analysis::{bank_params, network_cost, receptive_field_range, CostOptions};
use aic_core::datagen::{generate_dataset, Dataset};
use aic_core::evaluation::{ssc_iou, MetricsReport};
use aic_core::gradcheck::{run_gradcheck, GradcheckOptions};
use aic_core::training::{cross_entropy_forward, fit, Checkpoint, EpochLog};
use aic_core::{AicNet, Axis, NetworkSpec, RunConfig, Tensor, TrainConfig};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn simplex() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut inputs = 0;
    let mut worst = 0.0f64;
    let mut negative = 0;
    while inputs < 1000 {
        let spec = random_aic_spec(&mut rng, Modulation::Softmax, Activation::Relu);
        let mut m = AicModule::<f64>::new(spec.clone(), &mut rng).unwrap();
        for (_, p) in m.params.iter_mut() {
            for v in p.value.data_mut() {
                *v += rng.gen_range(-2.0..2.0);
            }
        }
        for _ in 0..10 {
            let batch = rng.gen_range(1..=2);
            let x = random_volume(&mut rng, batch, spec.channels);
            let (_, factors) = m.forward_with_factors(&x).unwrap();
            for f in &factors {
                let (n, vox) = (f.channels(), f.voxels());
                for b in 0..f.batch() {
                    for v in 0..vox {
                        let mut sum = 0.0;
                        for c in 0..n {
                            let a = f.data()[(b * n + c) * vox + v];
                            negative += usize::from(a < 0.0);
                            sum += a;
                        }
                        worst = worst.max((sum - 1.0).abs());
                    }
                }
            }
            inputs += 1;
        }
    }
    check(
        worst < 1e-6 && negative == 0,
        format!("inputs={inputs} max_sum_error={worst:.2e} negative={negative}"),
    )
}

fn residual_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatched = 0;
    for _ in 0..100 {
        let spec = random_aic_spec(&mut rng, Modulation::Softmax, Activation::None);
        let m = AicModule::<f32>::zeroed(spec.clone()).unwrap();
        let x = random_volume(&mut rng, 1, spec.channels).cast::<f32>();
        let y = m.forward(&x).unwrap();
        if !y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            mismatched += 1;
        }
    }
    check(mismatched == 0, format!("tensors=100 mismatched={mismatched}"))
}

fn gradients() -> Outcome {
    let mini = NetworkSpec::miniature();
    let shape_ok =
        mini.aggregation.stages == 1 && mini.stage_channels() == 8 && mini.grid.extents == [8, 4, 8];
    let report = run_gradcheck(GradcheckOptions::default()).map_err(|e| e.to_string())?;
    let worst = report.worst();
    let failures: Vec<String> = report.failures().iter().map(|r| r.op.clone()).collect();
    check(
        shape_ok && report.passed() && report.rows.iter().any(|r| r.op == "aicnet_miniature"),
        format!(
            "checks={} worst_rel_error={worst:.2e} failures={failures:?} miniature_shape_ok={shape_ok}",
            report.rows.len()
        ),
    )
}

fn separable() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for sizes in [[3, 3, 3], [1, 3, 5], [5, 5, 5], [3, 1, 1]] {
        let spec = AicSpec {
            channels: 1,
            bottleneck: None,
            banks: Axis::ALL.iter().zip(sizes).map(|(&a, k)| BankSpec::new(a, &[k])).collect(),
            modulation: Modulation::Softmax,
            activation: Activation::None,
        };
        let mut m = AicModule::<f64>::zeroed(spec).unwrap();
        let mut taps = Vec::new();
        for (axis, k) in Axis::ALL.iter().zip(sizes) {
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            *m.params.get_mut(&format!("aic.{axis}.k{k}.weight")).unwrap() =
                Tensor::new(vec![1, 1, k], w.clone()).unwrap();
            taps.push(w);
        }
        let mut kernel = Vec::new();
        for a in &taps[0] {
            for b in &taps[1] {
                for c in &taps[2] {
                    kernel.push(a * b * c);
                }
            }
        }
        let x = Tensor::from_fn(vec![1, 1, 5, 5, 5], |_| rng.gen_range(-1.0..1.0));
        let y = m.forward(&x).unwrap();
        let dense = dense_conv3d_same(x.data(), [5, 5, 5], &kernel, sizes);
        for ((y, x), d) in y.data().iter().zip(x.data()).zip(&dense) {
            worst = worst.max((y - x - d).abs());
        }
    }
    check(worst < 1e-10, format!("grid=5x5x5 max_abs_error={worst:.2e}"))
}

fn receptive_field() -> Outcome {
    let stack = vec![vec![3, 5, 7]; 4];
    let mut lines = Vec::new();
    let mut ok = true;
    for axis in Axis::ALL {
        let rf = receptive_field_range(axis, &stack).map_err(|e| e.to_string())?;
        let odd: Vec<usize> = (9..=25).step_by(2).collect();
        ok &= rf.min == 9 && rf.max == 25 && rf.attainable == odd;
        lines.push(format!("{axis}:{}..{}/{}", rf.min, rf.max, rf.attainable.len()));
    }
    check(ok, lines.join(" "))
}

fn cost_scaling() -> Outcome {
    let spec = NetworkSpec::full();
    let replaced = |k| {
        network_cost(
            &spec,
            CostOptions {
                replace_3dconv: Some(k),
                ..Default::default()
            },
        )
        .map(|r| r.replaced_conv_weights)
    };
    let (w3, w5) = (replaced(3).map_err(|e| e.to_string())?, replaced(5).map_err(|e| e.to_string())?);
    let cubic = w5 * 27 == w3 * 125;

    // Kernel weights of an instantiated bank, against c²·Σk.
    let mut linear = true;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for set in [vec![3], vec![5], vec![3, 5], vec![3, 5, 7], vec![1, 9]] {
        for c in [1, 4, 8] {
            let bank = AicSpec {
                channels: c,
                bottleneck: None,
                banks: vec![BankSpec::new(Axis::X, &set)],
                modulation: Modulation::Ones,
                activation: Activation::None,
            };
            let m = AicModule::<f32>::new(bank, &mut rng).unwrap();
            let weights: usize = m
                .params
                .iter()
                .filter(|(n, _)| n.ends_with(".weight"))
                .map(|(_, p)| p.value.len())
                .sum();
            let sum_k: usize = set.iter().sum();
            linear &= weights == c * c * sum_k;
            linear &= bank_params(c, &set, false) == (c * c * sum_k + c * set.len()) as u64;
        }
    }
    let params = network_cost(&spec, CostOptions::default()).map_err(|e| e.to_string())?.params;
    let rel = params as f64 / 847_000.0 - 1.0;
    check(
        cubic && linear && rel.abs() <= 0.2,
        format!(
            "replaced_k5/k3={w5}/{w3} (x27/125 exact={cubic}) banks_linear={linear} params={params} ({:+.1}% vs 847.0k)",
            rel * 100.0
        ),
    )
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let batch = rng.gen_range(1..=2);
        let classes = rng.gen_range(2..=12);
        let logits: Vec<f64> = (0..batch * classes * 64).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let labels: Vec<u32> = (0..batch * 64).map(|_| rng.gen_range(1..=classes as u32)).collect();
        let weights: Vec<f64> = (0..batch * 64)
            .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.0..3.0) })
            .collect();
        let t = Tensor::new(vec![batch, classes, 4, 4, 4], logits.clone()).unwrap();
        let (loss, _) = cross_entropy_forward(&t, &labels, &weights).map_err(|e| e.to_string())?;
        worst = worst.max((loss - scalar_cross_entropy(&logits, batch, classes, 64, &labels, &weights)).abs());
    }
    let (uniform, _) = cross_entropy_forward(&Tensor::<f64>::zeros(vec![1, 12, 1, 1, 1]), &[4], &[1.0])
        .map_err(|e| e.to_string())?;
    let ln12 = (uniform - 12f64.ln()).abs();
    check(
        worst < 1e-10 && ln12 < 1e-12,
        format!("grids=50 max_abs_error={worst:.2e} uniform_vs_ln12={ln12:.2e}"),
    )
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n: usize = (0..3).map(|_| rng.gen_range(1..=4)).product();
        let classes = rng.gen_range(2..=12);
        let pred: Vec<u8> = (0..n).map(|_| rng.gen_range(1..=classes as u8)).collect();
        let gt: Vec<u8> = (0..n).map(|_| rng.gen_range(1..=classes as u8)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
        let m = rng.gen_bool(0.5).then_some(mask.as_slice());
        let r = ssc_iou(&pred, &gt, m, classes).map_err(|e| e.to_string())?;
        let o = brute_metrics(&pred, &gt, m, classes);
        let same = (r.sc.precision, r.sc.recall, r.sc.iou) == (o.precision, o.recall, o.iou)
            && r.ssc_iou_per_class == o.per_class
            && r.ssc_iou_mean == o.mean;
        mismatches += usize::from(!same);
    }
    check(mismatches == 0, format!("grids=1000 mismatches={mismatches}"))
}

fn mean_iou(net: &AicNet<f32>, data: &Dataset) -> Result<f64, String> {
    let preds: Vec<Vec<u32>> = data
        .samples
        .iter()
        .map(|s| net.predict(&[s]).map(|p| p.labels))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let gt: Vec<Vec<u32>> = data.samples.iter().map(|s| s.labels.iter().map(|&l| l as u32).collect()).collect();
    let pairs: Vec<(&[u32], &[u32])> = preds.iter().zip(&gt).map(|(p, g)| (p.as_slice(), g.as_slice())).collect();
    MetricsReport::over_scenes(&pairs, data.header.class_count)
        .map(|r| r.ssc_iou_mean)
        .map_err(|e| e.to_string())
}

fn learnability() -> Outcome {
    let cfg = RunConfig::load(&configs().join("toy.toml")).map_err(|e| e.to_string())?;
    let spec = cfg.network_spec().map_err(|e| e.to_string())?;
    let train = cfg.train_config();
    let data = generate_dataset(&cfg.scene_spec().map_err(|e| e.to_string())?, 4, cfg.seed)
        .map_err(|e| e.to_string())?;
    let grid = spec.grid.extents;
    let run = fit::<f32>(&data.samples, &spec, &train, None, |_| {}).map_err(|e| e.to_string())?;
    let loss = run.history.last().map_or(f64::NAN, |l| l.mean_loss);
    let miou = mean_iou(&run.net, &data)?;

    let ablation = NetworkSpec {
        modulation: Modulation::Ones,
        ..spec.clone()
    };
    let short = TrainConfig { epochs: 30, ..train.clone() };
    let ones = fit::<f32>(&data.samples, &ablation, &short, None, |_| {}).map_err(|e| e.to_string())?;
    let first = ones.history[0].mean_loss;
    let last = ones.history.last().unwrap().mean_loss;
    let ones_ok = ones.history.iter().all(|l| l.mean_loss.is_finite()) && last < first;

    let mut sets_ok = true;
    for set in [vec![7], vec![5, 7], vec![3, 5, 7]] {
        let s = spec.clone().with_kernel_sizes(&set);
        let quick = TrainConfig { epochs: 2, ..train.clone() };
        sets_ok &= fit::<f32>(&data.samples, &s, &quick, None, |_| {})
            .is_ok_and(|r| r.history.iter().all(|l| l.mean_loss.is_finite()));
    }
    check(
        grid == [32, 16, 32] && train.epochs <= 200 && loss < 0.05 && miou >= 0.95 && ones_ok && sets_ok,
        format!(
            "epochs={} final_loss={loss:.4} ssc_miou={miou:.4} no_modulation_loss={first:.3}->{last:.3} kernel_sets_ok={sets_ok}",
            train.epochs
        ),
    )
}

fn lr_schedule() -> Outcome {
    let spec = NetworkSpec::miniature();
    let cfg = RunConfig::load(&configs().join("miniature.toml")).map_err(|e| e.to_string())?;
    let data = generate_dataset(&cfg.scene_spec().map_err(|e| e.to_string())?, 2, 0).map_err(|e| e.to_string())?;
    let train = TrainConfig {
        epochs: 31,
        ..TrainConfig::default()
    };
    let mut logged: Vec<EpochLog> = Vec::new();
    fit::<f32>(&data.samples, &spec, &train, None, |l| logged.push(l.clone())).map_err(|e| e.to_string())?;
    let lr = |e: usize| logged[e].lr;
    check(
        lr(0) == 0.01 && lr(15) == 0.001 && lr(30) == 0.0001,
        format!("lr@0={} lr@15={} lr@30={}", lr(0), lr(15), lr(30)),
    )
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::load(&configs().join("toy.toml")).map_err(|e| e.to_string())?;
    let data = generate_dataset(&cfg.scene_spec().map_err(|e| e.to_string())?, 3, 5).map_err(|e| e.to_string())?;
    let a = dir.path().join("a.sscd");
    let b = dir.path().join("b.sscd");
    data.save(&a).map_err(|e| e.to_string())?;
    let loaded = Dataset::load(&a).map_err(|e| e.to_string())?;
    loaded.save(&b).map_err(|e| e.to_string())?;
    let data_ok = loaded == data && std::fs::read(&a).ok() == std::fs::read(&b).ok();

    let spec = NetworkSpec::full();
    let net = AicNet::<f32>::new(spec.clone(), 9).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint::new(&spec, &TrainConfig::default(), 0, &net.params);
    let (ca, cb) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    ckpt.save(&ca).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&ca).map_err(|e| e.to_string())?;
    back.save(&cb).map_err(|e| e.to_string())?;
    let ckpt_ok = back == ckpt && std::fs::read(&ca).ok() == std::fs::read(&cb).ok();
    let counted = network_cost(&spec, CostOptions::default()).map_err(|e| e.to_string())?.params;
    let scalars = back.scalar_count() as u64;
    check(
        data_ok && ckpt_ok && scalars == counted,
        format!("dataset_identical={data_ok} checkpoint_identical={ckpt_ok} scalars={scalars} counted={counted}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("simplex", Duration::from_secs(10), simplex),
        ("residual-identity", Duration::from_secs(5), residual_identity),
        ("gradients", Duration::from_secs(120), gradients),
        ("separable-conv", Duration::from_secs(5), separable),
        ("receptive-field", Duration::from_secs(1), receptive_field),
        ("cost-scaling", Duration::from_secs(1), cost_scaling),
        ("loss-oracle", Duration::from_secs(5), loss_oracle),
        ("metrics-oracle", Duration::from_secs(10), metrics_oracle),
        ("learnability", Duration::from_secs(15 * 60), learnability),
        ("lr-schedule", Duration::from_secs(60), lr_schedule),
        ("round-trips", Duration::from_secs(10), round_trips),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) => (took <= *budget, d),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "{} {:>2} {name}: {detail} [{:.2}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
