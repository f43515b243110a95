use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use steklov::config::{ExperimentConfig, SeedSpec};
use steklov::pipeline::{run, Step};

#[derive(Parser)]
#[command(name = "steklov", version, about = "Run sinh-Steklov experiments from a config file")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and write the mesh.
    Mesh(Common),
    /// Steklov eigenpairs.
    Spectrum(Common),
    /// Green's functions and concentration scales.
    Green(Common),
    /// Two-bubble ansatz and its residual.
    Ansatz(Common),
    /// Newton solve at the first λ.
    Solve(Common),
    /// Continuation along the λ schedule.
    Continue(Common),
    /// Concentration diagnostics along the branch.
    Diagnose(Common),
    /// Axisymmetric lift to 3D.
    Axisym(Common),
    /// Every step, then a summary report.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config, or a run manifest to replay.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: runs/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// `trivial`, `eigen:n:amp`, `ansatz` or `ansatz:x,y:x,y`.
    #[arg(long, visible_alias = "seed")]
    seed_spec: Option<String>,
    #[arg(long)]
    lambda_start: Option<f64>,
    #[arg(long)]
    lambda_end: Option<f64>,
    #[arg(long)]
    lambda_factor: Option<f64>,
    /// Branch directory to deflate; repeatable.
    #[arg(long)]
    deflate: Vec<PathBuf>,
}

impl Command {
    fn split(self) -> (Step, Common) {
        match self {
            Command::Mesh(c) => (Step::Mesh, c),
            Command::Spectrum(c) => (Step::Spectrum, c),
            Command::Green(c) => (Step::Green, c),
            Command::Ansatz(c) => (Step::Ansatz, c),
            Command::Solve(c) => (Step::Solve, c),
            Command::Continue(c) => (Step::Continue, c),
            Command::Diagnose(c) => (Step::Diagnose, c),
            Command::Axisym(c) => (Step::Axisym, c),
            Command::Report(c) => (Step::Report, c),
        }
    }
}

fn configure(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    let overrides =
        c.seed_spec.is_some() || c.lambda_start.is_some() || c.lambda_end.is_some() || c.lambda_factor.is_some() || !c.deflate.is_empty();
    if overrides {
        let s = cfg.solve.get_or_insert_with(Default::default);
        if let Some(seed) = &c.seed_spec {
            SeedSpec::parse(seed)?;
            s.seed = seed.clone();
        }
        s.lambda_start = c.lambda_start.unwrap_or(s.lambda_start);
        s.lambda_end = c.lambda_end.unwrap_or(s.lambda_end);
        s.lambda_factor = c.lambda_factor.unwrap_or(s.lambda_factor);
        s.deflate.extend(c.deflate.iter().cloned());
        cfg.validate().context("command-line overrides")?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let (step, common) = Cli::parse().command.split();
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting the worker pool")?;
    }
    let cfg = configure(&common)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let outcome = run(&cfg, &out, step)?;
    for s in &outcome.steps {
        println!("{:<9} {}", s.step.name(), s.status);
    }
    for c in &outcome.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {}", c.check, c.detail);
    }
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    println!("artifacts in {}", outcome.out.display());
    Ok(outcome.success())
}
