//! Experiment CLI: `run` macro-replicated solver comparisons, `sweep`
//! hyperparameters, and `report` (rebuild summaries from progress.csv).

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use psas_core::harness::{
    checkpoint_grid, read_progress_csv, run_experiment, summarize, sweep, write_summary_csv,
    ExperimentConfig, SweepGrid,
};

#[derive(Parser)]
#[command(name = "psas", version, about = "Trust-region simulation calibration with dynamic post-stratified adaptive sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a macro-replicated experiment and write CSV outputs.
    Run(RunArgs),
    /// Run one experiment per hyperparameter grid cell (one parameter
    /// perturbed at a time).
    Sweep(SweepArgs),
    /// Rebuild summary.csv from an existing run directory's progress.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key-value (TOML) config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem id: wake | quad | two-regime.
    #[arg(long)]
    problem: Option<String>,
    /// Comma-separated strata modes: ns,bt,conv-r,conv-s.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    /// Total simulation budget per run.
    #[arg(long)]
    budget: Option<usize>,
    /// Number of macro-replications.
    #[arg(long)]
    macroreps: Option<usize>,
    /// Master seed; identical seeds reproduce byte-identical outputs.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Grid spec, e.g. "theta0=0.02,0.2;delta0=0.04,0.16;lambda0=40,80".
    #[arg(long)]
    grid: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing progress.csv.
    #[arg(long)]
    dir: PathBuf,
    /// Budget for the checkpoint grid; read from manifest.toml when absent.
    #[arg(long)]
    budget: Option<usize>,
    /// Number of checkpoints (default from manifest, else 21).
    #[arg(long)]
    checkpoints: Option<usize>,
}

fn load_config(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml_path(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(problem) = &args.problem {
        config.problem = problem.clone();
    }
    if let Some(modes) = &args.modes {
        config.modes = modes.clone();
    }
    if let Some(budget) = args.budget {
        config.budget = budget;
    }
    if let Some(macroreps) = args.macroreps {
        config.macroreps = macroreps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let config = load_config(&args)?;
    let artifacts = run_experiment(&config).context("experiment failed at startup")?;
    println!(
        "wrote {} progress rows for {} mode(s) to {}",
        artifacts.progress.len(),
        config.modes.len(),
        config.out_dir.display()
    );
    if !artifacts.failures.is_empty() {
        eprintln!("{} run(s) failed; see manifest.toml", artifacts.failures.len());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let config = load_config(&args.run)?;
    let grid = SweepGrid::parse(&args.grid).context("parsing --grid")?;
    let rows = sweep(&config, &grid).context("sweep failed")?;
    println!(
        "swept {} cell(s); terminal error bars in {}",
        rows.iter().map(|r| &r.cell).collect::<std::collections::BTreeSet<_>>().len(),
        config.out_dir.join("sweep_summary.csv").display()
    );
    Ok(())
}

fn manifest_value(dir: &std::path::Path, key: &str) -> Option<i64> {
    let text = std::fs::read_to_string(dir.join("manifest.toml")).ok()?;
    let value: toml::Value = text.parse().ok()?;
    value.get("config")?.get(key)?.as_integer()
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let progress_path = args.dir.join("progress.csv");
    if !progress_path.exists() {
        bail!("no progress.csv in {}", args.dir.display());
    }
    let records = read_progress_csv(&progress_path).context("reading progress.csv")?;
    let budget = args
        .budget
        .or_else(|| manifest_value(&args.dir, "budget").map(|v| v as usize))
        .or_else(|| records.iter().map(|r| r.calls).max())
        .context("cannot infer budget; pass --budget")?;
    let checkpoints = args
        .checkpoints
        .or_else(|| manifest_value(&args.dir, "checkpoints").map(|v| v as usize))
        .unwrap_or(21);
    let rows = summarize(&records, &checkpoint_grid(budget, checkpoints));
    write_summary_csv(&args.dir.join("summary.csv"), &rows)?;
    println!(
        "rebuilt summary.csv with {} row(s) in {}",
        rows.len(),
        args.dir.display()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
