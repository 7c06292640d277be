//! `symwalk`: configuration-driven experiment runner.
//!
//! Exit codes: 0 success, 1 failed `verify`, 2 configuration error,
//! 3 numerical failure.

mod checks;
mod commands;
mod config;
mod output;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use commands::{Rendered, RunContext};
use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "symwalk",
    version,
    about = "Experiment runner for symmetrised random-walk ensembles"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration file.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker thread count.
    #[arg(long, global = true, default_value_t = 1, value_name = "K")]
    threads: usize,
    /// Directory receiving output files with relative names.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Subcommand)]
enum Command {
    /// Transition, Feynman-Kac and Boltzmann kernels of the model.
    Kernel,
    /// Draw symmetrised ensemble replicas and tabulate their statistics.
    Sample,
    /// Donsker-Varadhan rate of the target occupation on a lattice box.
    DvRate,
    /// Saddle-point certificate for the symmetrised rate function.
    Jsym,
    /// Finite-N free-energy sweep with its variational limit.
    FreeEnergy,
    /// Symmetric-subspace traces by every available route.
    Trace,
    /// Run the invariant suite; nonzero exit on any failure.
    Verify,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let bytes = fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
    config.validate()?;
    let ctx = RunContext {
        config: &config,
        config_hash: config::fnv1a64(&bytes),
        seed: cli.seed.unwrap_or(config.seed),
    };
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;

    if matches!(cli.command, Command::Verify) {
        let ok = pool.install(|| checks::verify(&ctx));
        return Ok(if ok { 0 } else { 1 });
    }

    let rendered = pool.install(|| dispatch(cli.command, &ctx))?;
    let target = resolve_out(&cli.out, &rendered.file_name);
    if let Some(parent) = target.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                CliError::Config(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    fs::write(&target, rendered.content.as_bytes())
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", target.display())))?;
    println!("{}", rendered.summary);
    println!("wrote {}", target.display());
    Ok(0)
}

fn dispatch(cmd: Command, ctx: &RunContext) -> Result<Rendered, CliError> {
    match cmd {
        Command::Kernel => commands::kernel(ctx),
        Command::Sample => commands::sample(ctx),
        Command::DvRate => commands::dv_rate(ctx),
        Command::Jsym => commands::jsym(ctx),
        Command::FreeEnergy => commands::free_energy(ctx),
        Command::Trace => commands::trace(ctx),
        Command::Verify => unreachable!("verify is dispatched separately"),
    }
}

fn resolve_out(dir: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
