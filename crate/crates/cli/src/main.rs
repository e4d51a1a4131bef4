mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Ctx, Status};
use config::{CliError, CliResult, Loaded, Regime};

#[derive(Parser)]
#[command(name = "netlearn", version, about = "Social learning on networks: equilibria, welfare and estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bayesian equilibrium.
    Equilibrium(Common),
    /// Naive (correlation-neglect) learning.
    Naive(Common),
    /// Steady state under fixed weights.
    SteadyState(Common),
    /// Welfare-optimal group-symmetric weights.
    Planner(Common),
    /// Simulate a panel of actions under the configured regime.
    Simulate(Common),
    /// Estimate weights, links and signal variances from a panel.
    Identify(Common),
    /// Solve over a grid of values for one config key.
    Sweep(Common),
    /// Solve every network in a directory of edge lists.
    Villages(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Equilibrium(c)
            | Command::Naive(c)
            | Command::SteadyState(c)
            | Command::Planner(c)
            | Command::Simulate(c)
            | Command::Identify(c)
            | Command::Sweep(c)
            | Command::Villages(c) => c,
        }
    }
}

fn load(common: &Common) -> CliResult<Ctx> {
    let mut loaded = Loaded::read(&common.config)?;
    let mut overrides = false;
    let run = loaded
        .table
        .entry("run")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let run = run
        .as_table_mut()
        .ok_or_else(|| CliError::Config("run: expected a table".into()))?;
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::Config("--seed: too large".into()))?;
        run.insert("seed".into(), toml::Value::Integer(seed));
        overrides = true;
    }
    if let Some(t) = common.threads {
        run.insert("threads".into(), toml::Value::Integer(t as i64));
        overrides = true;
    }
    if overrides {
        loaded = Loaded::from_table(loaded.table, loaded.base)?;
    }
    let out = match &common.out {
        Some(p) => p.clone(),
        None => loaded.resolve(&loaded.config.run.out),
    };
    Ok(Ctx { loaded, out })
}

fn execute(command: &Command) -> CliResult<Status> {
    let ctx = load(command.common())?;
    let threads = ctx.loaded.config.run.threads;
    if threads > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match command {
        Command::Equilibrium(_) => commands::run(&ctx, Regime::Bayesian),
        Command::Naive(_) => commands::run(&ctx, Regime::Naive),
        Command::SteadyState(_) => commands::run(&ctx, Regime::SteadyState),
        Command::Planner(_) => commands::run(&ctx, Regime::Planner),
        Command::Simulate(_) => commands::simulate(&ctx),
        Command::Identify(_) => commands::identify_cmd(&ctx),
        Command::Sweep(_) => commands::sweep(&ctx),
        Command::Villages(_) => commands::villages(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Unconverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("netlearn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
