use std::path::PathBuf;
use std::process::ExitCode;

use cfs_dmpc::harness::{self, RunOptions, ScenarioSpec, BUILTIN_SCENARIOS};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cfs-dmpc",
    version,
    about = "Distributed multi-vehicle motion coordination"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectories.csv, metrics.toml and optionally trajectories.svg.
    Simulate {
        /// Built-in scenario name or path to a TOML scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of rounds.
        #[arg(long)]
        rounds: Option<usize>,
        /// Plan all vehicles in one joint problem per round.
        #[arg(long)]
        centralized: bool,
        #[arg(long)]
        no_deadlock_resolution: bool,
        /// Seed for the initial-position jitter.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        svg: bool,
        /// Write every non-optimal QP to this directory.
        #[arg(long)]
        dump_qp: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
    /// Print a built-in scenario as TOML.
    Show { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> cfs_dmpc::Result<ExitCode> {
    match cli.command {
        Command::List => {
            for name in BUILTIN_SCENARIOS {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Show { name } => {
            print!("{}", harness::builtin_scenario(&name)?.to_toml()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            scenario,
            out,
            rounds,
            centralized,
            no_deadlock_resolution,
            seed,
            svg,
            dump_qp,
        } => {
            let mut spec = ScenarioSpec::resolve(&scenario)?;
            if let Some(r) = rounds {
                spec.total_rounds = r;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let options = RunOptions {
                centralized,
                deadlock_resolution: !no_deadlock_resolution,
                ..RunOptions::default()
            }
            .with_qp_dump(dump_qp);
            let output = harness::run_with(&spec, &options)?;
            for path in harness::export(&output, &out, svg)? {
                log::info!("wrote {}", path.display());
            }
            let m = &output.metrics;
            println!(
                "{}: {} rounds, min distance {:.3} m (margin {}), consensus round {}, total cost {:.3}",
                m.scenario,
                m.rounds,
                m.min_distance,
                m.safety_margin,
                m.consensus_round.map_or("none".to_string(), |r| r.to_string()),
                m.total_cost
            );
            if m.collision_free {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "safety violation: min distance {} below {}",
                    m.min_distance, m.safety_margin
                );
                Ok(ExitCode::from(2))
            }
        }
    }
}
