use anyhow::Context;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use vortexlab::pipeline::{self, RunError, EXIT_CONFIG, EXIT_IO};
use vortexlab::RunConfig;

/// Solve, verify and develop the vortex equation on a truncated square.
#[derive(Parser)]
#[command(name = "vortexlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline of a JSON config and write its artifacts.
    Run { config: PathBuf },
    /// Max difference of the primary solutions of two configs on their shared inner square.
    Compare { a: PathBuf, b: PathBuf },
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("VORTEXLAB_THREADS") else { return Ok(()) };
    let threads: usize = raw.trim().parse().with_context(|| format!("VORTEXLAB_THREADS={raw:?} is not a count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("cannot size the thread pool")?;
    Ok(())
}

fn load(path: &Path) -> Result<RunConfig, RunError> {
    Ok(RunConfig::from_path(path)?)
}

fn fail(err: &RunError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn run(path: &Path) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match pipeline::run(&cfg) {
        Ok(outcome) => {
            let report = &outcome.report;
            if let Some(err) = &report.error {
                eprintln!("error: {err}");
            }
            for inv in report.invariants.iter().filter(|r| !r.passed) {
                eprintln!("invariant failed: {} (margin {:e})", inv.name, inv.margin);
            }
            eprintln!("{:?}: report written to {}", report.status, cfg.output_dir.join("report.json").display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => fail(&e),
    }
}

fn compare(a: &Path, b: &Path) -> ExitCode {
    let result = load(a).and_then(|ca| load(b).and_then(|cb| pipeline::compare(&ca, &cb)));
    match result {
        Ok(cmp) => match serde_json::to_string_pretty(&cmp) {
            Ok(text) => {
                println!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_IO as u8)
            }
        },
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    match cli.command {
        Command::Run { config } => run(&config),
        Command::Compare { a, b } => compare(&a, &b),
    }
}
