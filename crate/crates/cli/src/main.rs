//! `scsa`: gradient checks, ablations, training and benchmarks.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure (a gradient check over tolerance, a diverged loss), 3 I/O.

mod config;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use scsa_core::io::{load_tensor, Checkpoint};
use scsa_core::{ablation_registry, flop_estimate, preset, DType, Error, Tensor};
use scsa_harness::suite::SCSA_TOL;
use scsa_harness::{
    bench, check_scsa_config, generate_dataset, parse_sweep, run_gradcheck_suite, sweep_points, to_csv, train_with,
    BenchOptions, CheckResult, EpochRecord, SuiteOptions,
};

use crate::config::CliConfig;

const SEED_VAR: &str = "SCSA_SEED";

#[derive(Debug, Parser)]
#[command(name = "scsa", version, about = "Spatial and channel synergistic attention tools")]
struct Cli {
    /// JSON configuration; keys left out keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the gradient-check suite and print one CSV row per check.
    Gradcheck {
        /// Replace the per-check tolerances.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Only run checks whose name contains this substring.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Shape check, gradient check and MAC count for ablation presets. With
    /// neither --preset nor --all, evaluates the `scsa` section of --config.
    Ablate {
        #[arg(long, conflicts_with = "all")]
        preset: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Feature map `C,H,W` at which MACs are counted.
        #[arg(long, default_value = "64,56,56", value_parser = parse_chw)]
        macs_at: (usize, usize, usize),
    },
    /// Train the residual classifier on the synthetic dataset.
    Train {
        #[arg(long, value_enum, default_value_t = Switch::On)]
        attention: Switch,
        /// Seeds both the dataset and the trainer.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trained parameters here.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        dtype: Precision,
    },
    /// Time forward passes over a grid of feature-map sizes.
    Bench {
        /// e.g. `C=16;HW=28,56,112` or `C=16;H=28;W=14,28`.
        #[arg(long, default_value = "C=16;HW=28,56,112")]
        sweep: String,
        #[arg(long, default_value = "baseline")]
        preset: String,
        #[arg(long, default_value_t = BenchOptions::default().batch)]
        batch: usize,
        #[arg(long, default_value_t = BenchOptions::default().reps)]
        reps: usize,
        #[arg(long, default_value_t = BenchOptions::default().warmups)]
        warmups: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a checkpoint or a single-tensor file.
    Dump {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Numerical(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Shape(_) | Error::Config(_) => Failure::Invalid(m),
            Error::NonFinite(_) | Error::DegenerateStatistics(_) => Failure::Numerical(m),
            Error::Format(_) | Error::Io(_) => Failure::Io(m),
        }
    }
}

type Outcome = Result<(), Failure>;

fn parse_chw(s: &str) -> Result<(usize, usize, usize), String> {
    let v = s.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<Vec<_>, _>>()?;
    match v[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err("expected three positive integers C,H,W".into()),
    }
}

/// `--seed` wins over `SCSA_SEED`, which wins over `fallback`.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map_err(|e| Failure::Invalid(format!("{SEED_VAR}={v:?}: {e}"))),
        Err(_) => Ok(fallback),
    }
}

fn load_config(path: Option<&Path>) -> Result<CliConfig, Failure> {
    let Some(path) = path else {
        return Ok(CliConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let cfg = CliConfig::parse(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn gradcheck_cmd(tol: Option<f64>, seed: Option<u64>, filter: Option<String>) -> Outcome {
    if let Some(t) = tol {
        if !(t > 0.0) {
            return Err(Failure::Invalid(format!("--tol must be positive, got {t}")));
        }
    }
    let opts = SuiteOptions { seed: resolve_seed(seed, 0)?, tol, filter, corrupt: None };
    let report = run_gradcheck_suite(&opts);
    if report.checks.is_empty() {
        return Err(Failure::Invalid(format!("no check matches {:?}", opts.filter.unwrap_or_default())));
    }
    print!("{}", report.to_csv());
    let failed = report.failures().len();
    eprintln!("{} of {} checks passed", report.checks.len() - failed, report.checks.len());
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} gradient check(s) exceeded tolerance")));
    }
    Ok(())
}

fn ablate_cmd(cfg: &CliConfig, name: Option<String>, all: bool, seed: Option<u64>, at: (usize, usize, usize)) -> Outcome {
    let seed = resolve_seed(seed, 0)?;
    let targets = if all {
        ablation_registry().into_iter().map(|p| (p.name.to_string(), p.config)).collect()
    } else if let Some(n) = name {
        let c = preset(&n)?;
        vec![(n, c)]
    } else {
        vec![("config".to_string(), cfg.scsa.clone())]
    };
    let (c, h, w) = at;
    let shape = scsa_harness::suite::MODULE_SHAPE.map(|d| d.to_string()).join("x");
    println!("preset,shape,max_rel_error,tol,gradcheck,macs_{c}x{h}x{w}");
    let mut failed = 0;
    for (n, sc) in targets {
        let r: CheckResult = check_scsa_config(&n, &sc, seed, SCSA_TOL)?;
        let macs = flop_estimate(c, h, w, &sc).total;
        let status = match &r.error {
            Some(e) => format!("error: {e}"),
            None if r.passed() => "pass".into(),
            None => "FAIL".into(),
        };
        failed += usize::from(!r.passed());
        println!("{n},{shape},{:.3e},{:.0e},{status},{macs}", r.max_rel_error, r.tol);
    }
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} preset(s) failed the gradient check")));
    }
    Ok(())
}

fn train_cmd(cfg: &CliConfig, attention: Switch, seed: Option<u64>, checkpoint: Option<PathBuf>, dtype: Precision) -> Outcome {
    let mut data_spec = cfg.dataset.clone();
    let mut train_spec = cfg.train.clone();
    if seed.is_some() || std::env::var_os(SEED_VAR).is_some() {
        let s = resolve_seed(seed, 0)?;
        data_spec.seed = s;
        train_spec.seed = s;
    }
    let data = generate_dataset(&data_spec)?;
    eprintln!("dataset {} train / {} val, sha256 {}", data.train.len(), data.val.len(), data.checksum());
    println!("{}", EpochRecord::HEADER);
    let spec = cfg.backbone_spec(attention == Switch::On);
    let out = train_with(&spec, &data, &train_spec, |r| {
        println!("{r}");
        let _ = std::io::stdout().flush();
    })?;
    eprintln!("final val_acc {:.4}, loss decreased in {:.0}% of epochs", out.final_val_acc(), 100.0 * out.decreasing_fraction());
    if let Some(path) = checkpoint {
        let dt = match dtype {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        };
        Checkpoint::from_store(&out.store)
            .save(&path, dt)
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        eprintln!("wrote {} parameters to {}", out.store.len(), path.display());
    }
    Ok(())
}

fn bench_cmd(sweep: &str, preset_name: &str, opts: BenchOptions) -> Outcome {
    preset(preset_name)?;
    let points = sweep_points(preset_name, &parse_sweep(sweep)?);
    print!("{}", to_csv(&bench(&points, &opts)?));
    Ok(())
}

fn stats_row(name: &str, kind: &str, t: &Tensor) -> String {
    let d = t.data();
    let shape = t.shape().iter().map(ToString::to_string).collect::<Vec<_>>().join("x");
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = t.mean();
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len().max(1) as f64).sqrt();
    format!("{name},{kind},{shape},{min:.6e},{max:.6e},{mean:.6e},{std:.6e}")
}

fn dump_cmd(path: &Path) -> Outcome {
    let io = |e: Error| Failure::Io(format!("{}: {e}", path.display()));
    println!("name,kind,shape,min,max,mean,std");
    match Checkpoint::load(path) {
        Ok(ck) => {
            for e in &ck.entries {
                println!("{}", stats_row(&e.name, if e.trainable { "param" } else { "buffer" }, &e.tensor));
            }
        }
        // not a checkpoint; maybe a bare tensor
        Err(Error::Format(first)) => {
            let t = load_tensor(path).map_err(|_| io(Error::Format(first)))?;
            println!("{}", stats_row("tensor", "tensor", &t));
        }
        Err(e) => return Err(io(e)),
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(cli.config.as_deref())?;
    if cli.print_defaults {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::Invalid("no subcommand given; see --help".into()));
    };
    match command {
        Command::Gradcheck { tol, seed, filter } => gradcheck_cmd(tol, seed, filter),
        Command::Ablate { preset, all, seed, macs_at } => ablate_cmd(&cfg, preset, all, seed, macs_at),
        Command::Train { attention, seed, checkpoint, dtype } => train_cmd(&cfg, attention, seed, checkpoint, dtype),
        Command::Bench { sweep, preset, batch, reps, warmups, seed } => {
            let opts = BenchOptions { batch, reps, warmups, seed: resolve_seed(seed, 0)? };
            bench_cmd(&sweep, &preset, opts)
        }
        Command::Dump { checkpoint } => dump_cmd(&checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
