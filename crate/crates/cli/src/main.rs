//! Command-line entry point: single runs, analysis sweeps and reports.

mod analyze;
mod artifacts;
mod error;
mod manifest;
mod report;
mod run;
mod seeds;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::analyze::{AxisArg, Experiment};
use crate::error::{CliError, CliResult};
use crate::manifest::load_config;
use crate::seeds::parse_seeds;

#[derive(Parser)]
#[command(name = "tepkit", version, about = "Test-time search with embedding perturbation on an analytic diffusion model")]
struct Cli {
    /// Worker threads for parallel trajectories and sweep points.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured search strategy and write its artifacts.
    Run(RunArgs),
    /// Run one analysis sweep and write its CSV.
    Analyze(AnalyzeArgs),
    /// Aggregate run outputs into a with/without table.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config; defaults apply to anything it leaves out.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one field, e.g. --set tep.w1.end=0.5. Later flags win.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Root seed; defaults to the config's seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Several root seeds: a..b, a..=b or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    experiment: Experiment,
    /// Seeds to pair across arms: a..b, a..=b or a comma list.
    #[arg(long)]
    seeds: String,
    /// Compute axis of the scaling experiment (default nrfe).
    #[arg(long)]
    axis: Option<AxisArg>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directories of `run`.
    #[arg(required = true, value_name = "DIR")]
    dirs: Vec<PathBuf>,
    /// Also write report.csv into this directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    }
    match cli.command {
        Command::Run(a) => {
            let cfg = load_config(a.config.config.as_deref(), &a.config.set)?;
            let seeds = match (a.seed, &a.seeds) {
                (_, Some(s)) => parse_seeds(s)?,
                (Some(s), None) => vec![s],
                (None, None) => vec![cfg.seed],
            };
            let m = run::cmd_run(cfg, &seeds, &a.out)?;
            println!("wrote {} files to {} (config {})", m.files.len(), m.out_dir, &m.config_hash[..12]);
        }
        Command::Analyze(a) => {
            let cfg = load_config(a.config.config.as_deref(), &a.config.set)?;
            let seeds = parse_seeds(&a.seeds)?;
            let m = analyze::cmd_analyze(cfg, a.experiment, a.axis, &seeds, &a.out)?;
            println!("wrote {} files to {} (config {})", m.files.len(), m.out_dir, &m.config_hash[..12]);
        }
        Command::Report(a) => {
            let rows = report::summarize(&a.dirs)?;
            print!("{}", report::to_table(&rows));
            if let Some(dir) = a.out {
                artifacts::with_artifacts(&dir, |art| art.write("report.csv", report::to_csv(&rows).as_bytes()))?;
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
