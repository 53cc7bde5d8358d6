//! Experiment runner: `cauchy-bpre <experiment> --config run.toml`.
//!
//! Exit codes: 0 on success, 1 when a hard assertion fails (the failing
//! invariant is named on stderr), 2 for invalid configuration.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::Config;
use output::{write_manifest, RunManifest};

#[derive(Parser, Debug)]
#[command(
    name = "cauchy-bpre",
    about = "Experiments for critical branching processes in heavy-tailed random environments",
    version
)]
struct Cli {
    /// Experiment name; overrides [run].experiment when given.
    experiment: Option<String>,
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker count (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Override the output directory (env: CAUCHY_BPRE_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = std::time::Instant::now();

    let mut cfg = match Config::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(exp) = &cli.experiment {
        cfg.run.experiment = exp.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.run.workers = workers;
    }
    if let Ok(dir) = std::env::var("CAUCHY_BPRE_OUT") {
        cfg.run.output_dir = dir;
    }
    if let Some(dir) = &cli.out {
        cfg.run.output_dir = dir.display().to_string();
    }
    if let Err(e) = cfg.validate() {
        eprintln!("config error: {e:#}");
        return ExitCode::from(2);
    }

    if cfg.run.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build_global()
        {
            eprintln!("worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    let out_dir = PathBuf::from(&cfg.run.output_dir);
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("cannot create output dir {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }

    let result = match experiments::dispatch(&cfg, &out_dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("experiment failed: {e:#}");
            return ExitCode::from(1);
        }
    };

    let manifest = RunManifest {
        experiment: &cfg.run.experiment,
        build: concat!("cauchy-bpre ", env!("CARGO_PKG_VERSION")),
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: &cfg,
        outputs: result
            .files
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        verdicts: &result.verdicts,
    };
    match write_manifest(&out_dir, &manifest) {
        Ok(path) => println!("manifest: {}", path.display()),
        Err(e) => {
            eprintln!("manifest: {e:#}");
            return ExitCode::from(1);
        }
    }

    let mut failed = false;
    for v in &result.verdicts {
        let status = if v.pass { "pass" } else { "FAIL" };
        println!("[{status}] {}: {}", v.name, v.detail);
        failed |= !v.pass;
    }
    if failed {
        eprintln!("hard assertion failed; see verdicts above");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
