//! `infeas`: batch front end for the fixed-point infeasibility toolkit.
//!
//! Exit codes: 0 success, 1 audit failure under `--strict`, 2 usage or
//! configuration error, 3 runtime failure (non-finite iterates, solver
//! breakdown, I/O).

mod commands;
mod config;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{CliError, Report};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "infeas", version, about = "Infeasibility detection with nonexpansive fixed-point iterations")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV and SDPA outputs.
    #[arg(long, global = true, env = "INFEAS_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with status 1 when any audit fails.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one schedule on one operator, write the trajectory and rate audits.
    Iterate(IterateArgs),
    /// Audit the span lower bound and the resisting rotation.
    Lowerbound(LowerBoundArgs),
    /// Build, export or solve the performance-estimation SDP.
    #[command(subcommand)]
    Pep(PepCommand),
    /// Run the decentralized SDP infeasibility experiment.
    Pgextra(PgExtraArgs),
    /// Short tour of every component with small sizes.
    Demo,
}

#[derive(Debug, Args)]
pub struct IterateArgs {
    /// Operator spec, e.g. `worst-case:k=10` or `translation:v=0,0,1`.
    #[arg(long = "op")]
    pub operator: Option<String>,
    /// `picard`, `ohm`, `km:λ`, `halpern:λ`, `mann:picard` or `mann:ohm`.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Number of steps.
    #[arg(long = "k")]
    pub horizon: Option<usize>,
    /// Envelope id to audit; repeatable. Defaults depend on the schedule.
    #[arg(long = "audit")]
    pub audits: Vec<String>,
    /// Starting point as comma-separated numbers.
    #[arg(long)]
    pub x0: Option<String>,
}

#[derive(Debug, Args)]
pub struct LowerBoundArgs {
    /// Horizons: `8`, `4,8,16` or `2..6`.
    #[arg(long)]
    pub k: Option<String>,
    /// Random simplex weight vectors per horizon.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Horizon of the resisting-rotation check.
    #[arg(long)]
    pub resist_k: Option<usize>,
    /// Skip the resisting-rotation check.
    #[arg(long)]
    pub no_resist: bool,
}

#[derive(Debug, Subcommand)]
pub enum PepCommand {
    /// Write the SDP for each k.
    Gen(PepGenArgs),
    /// Solve the SDP for each k and compare against the rate brackets.
    Solve(PepSolveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PepFormat {
    Sdpa,
    Text,
}

#[derive(Debug, Args)]
pub struct PepGenArgs {
    #[arg(long)]
    pub k: Option<String>,
    /// Output file; only valid with a single k.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PepFormat::Sdpa)]
    pub format: PepFormat,
}

#[derive(Debug, Args)]
pub struct PepSolveArgs {
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PgExtraArgs {
    /// `reduced` (m=5, n=4, p=5) or `full` (m=11, n=10, p=10).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// `random` or `zero`.
    #[arg(long)]
    pub objective: Option<String>,
    /// `picard`, `ohm` or `km:λ`; repeatable.
    #[arg(long = "variant")]
    pub variants: Vec<String>,
    #[arg(long)]
    pub reference_factor: Option<usize>,
}

fn run(cli: Cli) -> Result<(Report, bool), CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    let strict = cli.strict || cfg.strict.unwrap_or(false);
    let ctx = commands::Context::new(
        cli.out_dir.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("infeas-out")),
        cli.seed.or(cfg.seed).unwrap_or(0),
    )?;
    let report = match cli.command {
        Command::Iterate(a) => commands::iterate(&ctx, &a, &cfg.iterate)?,
        Command::Lowerbound(a) => commands::lowerbound(&ctx, &a, &cfg.lowerbound)?,
        Command::Pep(PepCommand::Gen(a)) => commands::pep_gen(&ctx, &a, &cfg.pep)?,
        Command::Pep(PepCommand::Solve(a)) => commands::pep_solve(&ctx, &a, &cfg.pep)?,
        Command::Pgextra(a) => commands::pgextra(&ctx, &a, &cfg.pgextra)?,
        Command::Demo => commands::demo(&ctx)?,
    };
    Ok((report, strict))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok((report, strict)) => {
            for f in &report.failures {
                eprintln!("audit failed: {f}");
            }
            if strict && !report.failures.is_empty() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {:#}", e.inner());
            ExitCode::from(e.code())
        }
    }
}
