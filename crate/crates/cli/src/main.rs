mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::parse_config;
use crate::output::{sha256_hex, Manifest, OutputDir, Versions};

/// Where outputs go when neither `--out-dir` nor `[output] directory` is set.
const OUT_DIR_ENV: &str = "STOCHLINE_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "stochline-out";

#[derive(Parser)]
#[command(name = "stochline", version, about = "Non-degeneracy diagnostics for line integrals along rough differential equations")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "STOCHLINE_WORKERS")]
    workers: Option<usize>,
    /// Output directory, overriding `[output] directory` and STOCHLINE_OUT_DIR.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a non-degeneracy criterion on a grid.
    Criterion { config: PathBuf },
    /// Build a one-form from a constructor and check its postcondition.
    Construct { config: PathBuf },
    /// Monte Carlo samples of a line integral with atom and kernel diagnostics.
    Density { config: PathBuf },
    /// Recover cube routes from extended signatures.
    Reconstruct { config: PathBuf },
    /// Solve one path and write the driver and trajectory.
    Simulate {
        config: PathBuf,
        /// Replicate index of the random driver.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Criterion { .. } => "criterion",
            Command::Construct { .. } => "construct",
            Command::Density { .. } => "density",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Simulate { .. } => "simulate",
            Command::Selftest => "selftest",
        }
    }

    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::Criterion { config }
            | Command::Construct { config }
            | Command::Density { config }
            | Command::Reconstruct { config }
            | Command::Simulate { config, .. } => Some(config),
            Command::Selftest => None,
        }
    }
}

fn out_dir(flag: Option<&Path>, from_config: Option<&str>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = from_config {
        return PathBuf::from(p);
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

fn run(cli: &Cli) -> Result<u8> {
    // read and validate the whole config before anything is computed
    let loaded = match cli.command.config_path() {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let prepared = parse_config(&text)?;
            Some((path, text, prepared))
        }
        None => None,
    };
    let hash = loaded.as_ref().map(|(_, text, _)| sha256_hex(text.as_bytes()));
    let dir = out_dir(cli.out_dir.as_deref(), loaded.as_ref().and_then(|(_, _, p)| p.config.output.directory.as_deref()));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        anyhow::ensure!(w >= 1, "--workers must be at least 1");
        pool = pool.num_threads(w);
    }
    let pool = pool.build()?;
    let workers = pool.current_num_threads();

    let mut out = OutputDir::create(&dir, hash.as_deref())?;
    let code = pool.install(|| match (&cli.command, &loaded) {
        (Command::Criterion { .. }, Some((_, _, p))) => commands::criterion(p, &mut out),
        (Command::Construct { .. }, Some((_, _, p))) => commands::construct(p, &mut out),
        (Command::Density { .. }, Some((_, _, p))) => commands::density(p, &mut out),
        (Command::Reconstruct { .. }, Some((_, _, p))) => commands::reconstruct(p, &mut out),
        (Command::Simulate { replicate, .. }, Some((_, _, p))) => commands::simulate(p, &mut out, *replicate),
        (Command::Selftest, _) => commands::selftest(&mut out),
        _ => unreachable!("every command but selftest has a config"),
    })?;

    let manifest = Manifest {
        command: cli.command.name().to_string(),
        config_file: loaded.as_ref().map(|(p, _, _)| p.display().to_string()),
        config_sha256: hash,
        config: loaded.as_ref().map(|(_, t, _)| t.clone()),
        seed: loaded.as_ref().and_then(|(_, _, p)| p.seed()),
        workers,
        versions: Versions { stochline: stochline::VERSION, stochline_cli: env!("CARGO_PKG_VERSION") },
        exit_code: code,
        outputs: Vec::new(),
    };
    let path = out.finish(manifest)?;
    println!("wrote {}", path.display());
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
