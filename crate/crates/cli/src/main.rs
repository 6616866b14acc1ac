//! `aicnet`: synthetic data, training, evaluation, cost analysis and gradient checks.
//!
//! Machine-readable `key=value` lines go to stdout, diagnostics to stderr.
//! Exit status is 0 when the command's contract holds, 1 otherwise.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aic_core::analysis::{aic_path, network_cost, receptive_field_range, CostOptions};
use aic_core::datagen::{generate_dataset, Dataset};
use aic_core::evaluation::MetricsReport;
use aic_core::gradcheck::{run_gradcheck, GradcheckOptions};
use aic_core::training::{fit, Checkpoint, EpochLog};
use aic_core::{AicNet, Axis, NetworkSpec, OpKind, Precision, RunConfig, Scalar, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aicnet", version, about = "Anisotropic convolution networks for voxel scene completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic SSCD dataset.
    Gen(GenArgs),
    /// Train a network on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the ground truth itself) on a dataset.
    Eval(EvalArgs),
    /// Count parameters and FLOPs and list receptive-field ranges.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of every differentiable primitive.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of scenes (default: `data.scenes` from the config).
    #[arg(long)]
    scenes: Option<usize>,
    /// Run configuration (TOML).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Seed of the first scene; scene i uses seed + i (default: config `seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score the ground-truth labels against themselves (harness check).
    #[arg(long)]
    ground_truth: bool,
    /// Run configuration (TOML), for default paths.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace every aggregation and fusion AIC with a dense k×k×k convolution.
    #[arg(long, value_name = "K")]
    replace_3dconv: Option<usize>,
    /// Also print the per-layer table to stderr.
    #[arg(long)]
    table: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the backward rule of one primitive (test hook).
    #[arg(long, hide = true, value_name = "OP")]
    inject_fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn pick_path(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or_else(|| config.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {what} path: pass the flag or set it under [paths]"),
    }
}

fn gen(a: GenArgs) -> Result<bool> {
    let cfg = load_config(a.spec.as_deref())?;
    let out = pick_path(a.out, &cfg.paths.dataset, "output dataset")?;
    let scenes = a.scenes.unwrap_or(cfg.data.scenes);
    let seed = a.seed.unwrap_or(cfg.seed);
    let dataset = generate_dataset(&cfg.scene_spec()?, scenes, seed)?;
    dataset.save(&out)?;
    println!("path={}", out.display());
    println!("scenes={scenes}");
    println!("data_hash={}", dataset.header.data_hash());
    for (i, n) in dataset.class_histogram().iter().enumerate() {
        println!("voxels_class_{}={n}", i + 1);
    }
    Ok(true)
}

fn check_data(dataset: &Dataset, spec: &NetworkSpec, source: &str) -> Result<()> {
    let (have, want) = (dataset.header.data_hash(), spec.data_hash());
    if have != want {
        bail!(
            "dataset geometry hash {have} does not match {source} hash {want} (image, grid, camera or class count differ)"
        );
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<bool> {
    let cfg = load_config(a.config.as_deref())?;
    let data = pick_path(a.data, &cfg.paths.dataset, "dataset")?;
    let out = pick_path(a.out, &cfg.paths.checkpoint, "checkpoint")?;
    let spec = cfg.network_spec()?;
    let mut train = cfg.train_config();
    if let Some(e) = a.epochs {
        train.epochs = e;
    }
    if let Some(lr) = a.lr {
        train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        train.batch_size = b;
    }
    if let Some(s) = a.seed {
        train.seed = s;
    }
    train.validate()?;
    let dataset = Dataset::load(&data).with_context(|| format!("loading {}", data.display()))?;
    check_data(&dataset, &spec, "network spec")?;
    let ckpt = match train.precision {
        Precision::F32 => run_fit::<f32>(&dataset, &spec, &train)?,
        Precision::F64 => run_fit::<f64>(&dataset, &spec, &train)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    ckpt.save(&out)?;
    println!("checkpoint={}", out.display());
    println!("params={}", ckpt.scalar_count());
    Ok(true)
}

fn run_fit<T: Scalar>(dataset: &Dataset, spec: &NetworkSpec, train: &TrainConfig) -> Result<Checkpoint> {
    let log = |l: &EpochLog| println!("epoch={} lr={} mean_loss={:.6}", l.epoch, l.lr, l.mean_loss);
    let result = fit::<T>(&dataset.samples, spec, train, None, log)?;
    if let Some(last) = result.history.last() {
        println!("final_loss={:.6}", last.mean_loss);
    }
    Ok(Checkpoint::new(spec, train, train.epochs, &result.net.params))
}

fn eval(a: EvalArgs) -> Result<bool> {
    let cfg = load_config(a.config.as_deref())?;
    let data = pick_path(a.data, &cfg.paths.dataset, "dataset")?;
    let dataset = Dataset::load(&data).with_context(|| format!("loading {}", data.display()))?;
    let class_count = dataset.header.class_count;
    let predictions: Vec<Vec<u32>> = if a.ground_truth {
        dataset
            .samples
            .iter()
            .map(|s| s.labels.iter().map(|&l| l as u32).collect())
            .collect()
    } else {
        let path = pick_path(a.ckpt, &cfg.paths.checkpoint, "checkpoint")?;
        let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
        check_data(&dataset, &ckpt.spec, "checkpoint")?;
        let net = AicNet::<f32> {
            spec: ckpt.spec.clone(),
            params: ckpt.params_as(),
        };
        dataset
            .samples
            .iter()
            .map(|s| Ok(net.predict(&[s])?.labels))
            .collect::<Result<_>>()?
    };
    let gt: Vec<Vec<u32>> = dataset
        .samples
        .iter()
        .map(|s| s.labels.iter().map(|&l| l as u32).collect())
        .collect();
    let pairs: Vec<(&[u32], &[u32])> = predictions
        .iter()
        .zip(&gt)
        .map(|(p, g)| (p.as_slice(), g.as_slice()))
        .collect();
    let report = MetricsReport::over_scenes(&pairs, class_count)?;
    let text = format!("scenes={}\n{}", dataset.samples.len(), report.to_kv());
    print!("{text}");
    let report_path = a.report.or(cfg.paths.report);
    if let Some(p) = report_path {
        std::fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(true)
}

fn analyze(a: AnalyzeArgs) -> Result<bool> {
    let cfg = load_config(a.config.as_deref())?;
    let spec = cfg.network_spec()?;
    let opts = CostOptions {
        replace_3dconv: a.replace_3dconv,
        ..Default::default()
    };
    let cost = network_cost(&spec, opts)?;
    let mut text = cost.to_kv();
    let per_stage = spec.aggregation.modules_per_stage;
    let paths = [
        ("stage", Some(per_stage)),
        ("fusion_path", Some(per_stage + spec.fusion.modules)),
        ("full_path", None),
    ];
    for (name, depth) in paths {
        for axis in Axis::ALL {
            let mut stack = aic_path(&spec, axis, depth);
            if let Some(k) = a.replace_3dconv {
                stack.iter_mut().for_each(|s| *s = vec![k]);
            }
            let rf = receptive_field_range(axis, &stack)?;
            let values: Vec<String> = rf.attainable.iter().map(usize::to_string).collect();
            text += &format!("rf_{name}_{axis}_depth={}\n", stack.len());
            text += &format!("rf_{name}_{axis}_min={}\n", rf.min);
            text += &format!("rf_{name}_{axis}_max={}\n", rf.max);
            text += &format!("rf_{name}_{axis}_values={}\n", values.join(","));
        }
    }
    print!("{text}");
    if a.table {
        eprint!("{}", cost.table());
    }
    if let Some(p) = a.report {
        std::fs::write(&p, format!("{text}{}", cost.table())).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(true)
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let fault = match a.inject_fault.as_deref() {
        Some(name) => match OpKind::parse(name) {
            Some(k) => Some(k),
            None => bail!("unknown op `{name}`"),
        },
        None => None,
    };
    let report = run_gradcheck(GradcheckOptions {
        seed: a.seed,
        fault,
        ..Default::default()
    })?;
    print!("{}", report.to_kv());
    for f in report.failures() {
        eprintln!("gradient check failed for {}: worst relative error {:.3e}", f.op, f.worst);
    }
    Ok(report.passed())
}
