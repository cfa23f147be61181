use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jlsgev_cli::commands::{fit, predict, score, simulate, sweep};
use jlsgev_cli::config;
use jlsgev_cli::{exit, CliError, CliResult};

/// Joint spatial GEV modelling of two extreme-value processes.
#[derive(Parser)]
#[command(name = "jlsgev", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenario files.
    Simulate(SimulateArgs),
    /// Fit one model variant and write draws and diagnostics.
    Fit(FitArgs),
    /// Posterior summaries of μ, σ and return levels at given sites.
    Predict(PredictArgs),
    /// Holdout metrics of one or more fits.
    Score(ScoreArgs),
    /// Simulate, fit and score a grid of scenarios, seeds and variants.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario configuration JSON.
    #[arg(long, conflicts_with_all = ["scenario", "all"])]
    config: Option<PathBuf>,
    /// Scenario number of the 20-scenario grid.
    #[arg(long, conflicts_with = "all")]
    scenario: Option<usize>,
    #[arg(long, default_value_t = 1, conflicts_with = "all")]
    seed: u64,
    /// Every scenario of the grid, one directory each.
    #[arg(long, requires = "seeds")]
    all: bool,
    /// Seeds for --all, e.g. 1..3 or 1,4.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    /// Exit successfully even when some R̂ exceeds the limit.
    #[arg(long)]
    allow_unconverged: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// CSV with x,y and optional site and process columns.
    #[arg(long)]
    sites: PathBuf,
    /// Return periods in years.
    #[arg(long, value_delimiter = ',', default_value = "10,100")]
    periods: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Fit directory; repeat for several variants.
    #[arg(long = "fit", required = true)]
    fits: Vec<PathBuf>,
    #[arg(long)]
    holdout: PathBuf,
    /// Site-level truth CSV of a simulated scenario.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the variant-per-column comparison table here.
    #[arg(long)]
    paper_table: Option<PathBuf>,
    /// Scoring options JSON.
    #[arg(long)]
    options: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker count, capped by JLSGEV_THREADS.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => {
            let spec = if let Some(c) = a.config {
                simulate::SimulateSpec::Config(c)
            } else if a.all {
                let seeds = config::parse_seed_list(a.seeds.as_deref().unwrap_or_default()).map_err(CliError::Validation)?;
                simulate::SimulateSpec::All { seeds }
            } else if let Some(scenario) = a.scenario {
                simulate::SimulateSpec::Numbered { scenario, seed: a.seed }
            } else {
                return Err(CliError::Validation("give --config, --scenario or --all".into()));
            };
            let dirs = simulate::run(&spec, &a.out)?;
            println!("wrote {} scenario director{}", dirs.len(), if dirs.len() == 1 { "y" } else { "ies" });
            Ok(())
        }
        Command::Fit(a) => {
            let cfg = fit::load_config(&a.config)?;
            let outcome = fit::run(&cfg)?;
            println!("wrote {} (max R̂ {:.3})", outcome.out.display(), outcome.diagnostics.max_rhat);
            fit::check_converged(&outcome, a.allow_unconverged)
        }
        Command::Predict(a) => {
            let cfg = predict::PredictConfig { fit: a.fit, sites: a.sites, periods: a.periods, out: a.out };
            predict::run(&cfg)?;
            println!("wrote {}", cfg.out.display());
            Ok(())
        }
        Command::Score(a) => {
            let options = match &a.options {
                Some(p) => config::load(p)?,
                None => Default::default(),
            };
            let cfg = score::ScoreConfig {
                fits: a.fits,
                holdout: a.holdout,
                truth: a.truth,
                out: a.out,
                paper_table: a.paper_table,
                options,
            };
            let rows = score::run(&cfg)?;
            println!("wrote {} metric rows to {}", rows.len(), cfg.out.display());
            Ok(())
        }
        Command::Sweep(a) => {
            let cfg = sweep::load_config(&a.config)?;
            let workers = sweep::worker_count(a.jobs);
            let res = sweep::run(&cfg, workers)?;
            let unconverged = res.jobs.iter().filter(|j| !j.converged).count();
            println!("{} fits on {workers} worker(s), {unconverged} above the R̂ limit; results in {}", res.jobs.len(), cfg.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
