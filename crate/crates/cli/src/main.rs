//! `sfgp`: dataset generation, registration, sweeps and evaluation.
//!
//! Logs go to standard error; all data goes to files under `--out`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use sfgp::experiment::{self, ExperimentConfig, Variant};
use sfgp::io;
use sfgp::kernels::KernelSpec;
use sfgp::RegistrationConfig;

#[derive(Parser)]
#[command(name = "sfgp", version, about = "Non-rigid point-set registration experiments")]
struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Worker threads; 0 uses one per core.
    #[arg(long, env = "SFGP_THREADS", default_value_t = 0, global = true)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset described by an experiment config.
    Generate(GenerateArgs),
    /// Register a single target, or every instance of a dataset.
    Register(RegisterArgs),
    /// Generate, register and score every instance of an experiment.
    Sweep(SweepArgs),
    /// Score result directories against a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RegisterArgs {
    /// Experiment config supplying the kernel, registration settings and
    /// reference. Individual files below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference point CSV.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Kernel spec JSON.
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Registration config JSON.
    #[arg(long)]
    registration: Option<PathBuf>,
    /// Target point CSV.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    target: Option<PathBuf>,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// SFGP_Full, SFGP_bcpdReg, GPReg_noTresh or GPClosestPnt.
    #[arg(long, default_value = "SFGP_Full", value_parser = parse_variant)]
    variant: Variant,
    /// Override the registration seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run only this variant instead of the config's list.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of per-instance results written by `register --dataset`.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Report directory; defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: sfgp::Error| e.to_string())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn generate(args: GenerateArgs, threads: usize) -> Result<()> {
    let cfg = load_config(&args.config, args.seed)?;
    let index = experiment::with_threads(threads, || experiment::generate_dataset(&cfg, &args.out))??;
    info!("wrote {} instances to {}", index.instances.len(), args.out.display());
    Ok(())
}

fn register(args: RegisterArgs, threads: usize) -> Result<()> {
    let exp = args.config.as_deref().map(|p| load_config(p, None)).transpose()?;

    let kernel: KernelSpec = match (&args.kernel, &exp) {
        (Some(p), _) => io::read_json(p).with_context(|| format!("reading kernel {}", p.display()))?,
        (None, Some(e)) => e.kernel.clone(),
        (None, None) => bail!("a kernel is required: pass --kernel or --config"),
    };
    let mut reg: RegistrationConfig = match (&args.registration, &exp) {
        (Some(p), _) => io::read_json(p).with_context(|| format!("reading registration config {}", p.display()))?,
        (None, Some(e)) => e.registration.clone(),
        (None, None) => RegistrationConfig::default(),
    };
    if let Some(s) = args.seed {
        reg.seed = s;
    }
    let reference = match (&args.reference, &args.dataset, &exp) {
        (Some(p), _, _) => io::read_points_csv(p)?,
        (None, Some(d), _) => io::read_points_csv(&experiment::dataset_reference(d))?,
        (None, None, Some(e)) => e.load_reference()?,
        (None, None, None) => bail!("a reference is required: pass --reference, --dataset or --config"),
    };

    if let Some(dataset) = &args.dataset {
        let errors = experiment::with_threads(threads, || {
            experiment::register_dataset(dataset, &reference, &kernel, &reg, args.variant, &args.out)
        })??;
        info!("dataset registered with {errors} failed instance(s)");
        return Ok(());
    }

    let target_path = args.target.expect("clap requires --target without --dataset");
    let target = io::read_points_csv(&target_path)?;
    let t0 = Instant::now();
    let result = experiment::with_threads(threads, || {
        experiment::run_variant(&reference, &target, &kernel, &reg, args.variant)
    })??;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    io::write_result(&args.out, &result, args.variant.name(), ms)?;
    info!(
        "{}: {} iterations, converged={}, failed={}, {} missing",
        args.variant,
        result.iters,
        result.converged,
        result.failed,
        result.state.missing.len()
    );
    Ok(())
}

fn sweep(args: SweepArgs, threads: usize) -> Result<()> {
    let mut cfg = load_config(&args.config, args.seed)?;
    if let Some(v) = args.variant {
        cfg.variants = vec![v];
    }
    let reference = cfg.load_reference()?;
    let t0 = Instant::now();
    let runs = experiment::with_threads(threads, || experiment::run_sweep(&cfg, &reference))??;
    let records: Vec<_> = runs.into_iter().flat_map(|r| r.records).collect();
    std::fs::create_dir_all(&args.out)?;
    io::write_json(&args.out.join("config.json"), &cfg)?;
    let table = experiment::write_reports(&args.out, &records)?;
    info!("sweep finished in {:.1} s\n{table}", t0.elapsed().as_secs_f64());
    Ok(())
}

fn eval(args: EvalArgs, threads: usize) -> Result<()> {
    let records = experiment::with_threads(threads, || experiment::evaluate_results(&args.results, &args.dataset))??;
    let out = args.out.unwrap_or(args.results);
    std::fs::create_dir_all(&out)?;
    let table = experiment::write_reports(&out, &records)?;
    print!("{table}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let threads = cli.threads;
    let outcome = match cli.command {
        Command::Generate(a) => generate(a, threads),
        Command::Register(a) => register(a, threads),
        Command::Sweep(a) => sweep(a, threads),
        Command::Eval(a) => eval(a, threads),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
