use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdr_cli::{
    cmd_compare, cmd_print_config, cmd_run, cmd_simulate, cmd_sweep, CompareArgs, GaitSource, RunArgs, SimulateArgs,
    SweepArgs, EXIT_INPUT,
};
use pdr_core::runner::FilterKind;
use pdr_core::sim::Scenario;

/// Foot-mounted inertial dead reckoning with zero-velocity updates.
#[derive(Parser, Debug)]
#[command(name = "pdr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one filter over an IMU log and write the trajectory.
    Run {
        /// IMU log (`t,wx,wy,wz,ax,ay,az`).
        log: PathBuf,
        #[arg(long, default_value = "inekf")]
        filter: FilterKind,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ground-truth trajectory; prints the metric report when given.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Output trajectory CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a scenario or gait file into imu.csv, gt.csv and stance.csv.
    Simulate {
        /// Gait file; overrides `--scenario`.
        #[arg(value_name = "GAIT")]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "square_loop")]
        scenario: Scenario,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both filters over scaled process noise and write the row table.
    Sweep {
        /// Sweep file.
        #[arg(value_name = "SWEEP")]
        spec: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base seed; overrides the sweep file.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads, 0 for one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Output table CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both filters on the same log and detector output.
    Compare {
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Output directory for inekf.csv and ekf.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration with every default filled in.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run { log, filter, config, gt, out } => cmd_run(&RunArgs { log, config, filter, out, gt }),
        Command::Simulate { spec, scenario, config, seed, out } => {
            let source = spec.map_or(GaitSource::Scenario(scenario), GaitSource::File);
            cmd_simulate(&SimulateArgs { source, config, out_dir: out, seed })
        }
        Command::Sweep { spec, config, seed, jobs, out } => cmd_sweep(&SweepArgs { spec, config, out, seed, jobs }),
        Command::Compare { log, config, gt, out } => cmd_compare(&CompareArgs { log, config, gt, out_dir: out }),
        Command::PrintConfig { config } => cmd_print_config(config.as_deref()),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
