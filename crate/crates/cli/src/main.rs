use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmpc_cli::commands::{cmd_check_homogeneity, cmd_estimate_growth, cmd_run_mpc, cmd_solve_ocp};
use hmpc_cli::{reproduce, CliError, ScenarioConfig, Status, BUNDLES, EXIT_USAGE};

/// Homogeneity-based MPC experiments.
#[derive(Parser)]
#[command(name = "hmpc", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the homogeneity identity (and an approximation certificate if configured).
    CheckHomogeneity(Run),
    /// Solve one open-loop optimal control problem.
    SolveOcp(Run),
    /// Run the MPC loop, or a horizon sweep.
    RunMpc(Run),
    /// Tabulate the value-to-stage-cost ratio bound.
    EstimateGrowth(Run),
    /// Run a named bundle of scenarios and write a summary.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(BUNDLES))]
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = seed_parser())]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`, else `out/<id>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = seed_parser())]
    seed: Option<u64>,
}

fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(0..=i64::MAX as u64)
}

type Exec = fn(&ScenarioConfig, &Path) -> Result<Status, CliError>;

fn run(cli: Cli) -> Result<Status, CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    let (run, command) = match cli.command {
        Command::Reproduce { name, out, seed } => {
            let report = reproduce(&name, &out, seed)?;
            print!("{}", report.to_csv());
            return Ok(if report.pass() { Status::Success } else { Status::CheckFailed });
        }
        Command::CheckHomogeneity(r) => (r, (|c, d| Ok(cmd_check_homogeneity(c, d)?.0)) as Exec),
        Command::SolveOcp(r) => (r, (|c, d| Ok(cmd_solve_ocp(c, d)?.0)) as Exec),
        Command::RunMpc(r) => (r, (|c, d| Ok(cmd_run_mpc(c, d)?.0)) as Exec),
        Command::EstimateGrowth(r) => (r, (|c, d| Ok(cmd_estimate_growth(c, d)?.0)) as Exec),
    };
    let mut cfg = ScenarioConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        cfg = cfg.with_seed(seed);
    }
    let dir = run
        .out
        .or_else(|| cfg.output.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.id));
    let status = command(&cfg, &dir)?;
    eprintln!("{}: wrote {}", cfg.id, dir.display());
    Ok(status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
