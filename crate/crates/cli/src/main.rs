use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use graphopt_cli::commands::{gen, report, simulate_cmd, SimulateArgs};
use graphopt_cli::report::format_table;
use graphopt_cli::run::{finetune, optimize, pretrain};
use graphopt_cli::{CliError, ExperimentConfig};
use graphopt_core::sim::SchedulePolicy;
use graphopt_core::workload::{Family, WorkloadSpec};

#[derive(Parser)]
#[command(name = "graphopt", version, about = "Learned and baseline graph optimisation on a simulated multi-device machine")]
struct Cli {
    /// Global seed for commands whose config lists none.
    #[arg(long, global = true, env = "GRAPHOPT_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload graph.
    Gen {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 256)]
        width: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Simulate one step of a graph under given assignments.
    Simulate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        /// `node_id,task,action` CSV; missing tasks use their defaults.
        #[arg(long)]
        assignments: Option<PathBuf>,
        #[arg(long)]
        policy: Option<SchedulePolicy>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        max_group: Option<usize>,
    },
    /// Run an experiment config and write results.csv.
    Optimize {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one policy on every graph of a config.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; defaults to policy.json in the output dir.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Zero-shot and fine-tuned runs from a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Geomean speedups per method and family over result CSVs.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen { family, layers, steps, width, output } => {
            let n = gen(&WorkloadSpec::new(family, layers, steps, width, seed), &output)?;
            println!("wrote {} ({n} nodes)", output.display());
        }
        Command::Simulate { graph, topology, assignments, policy, trace, max_group } => {
            let args = SimulateArgs { graph, topology, assignments, policy, trace, max_group };
            match simulate_cmd(&args) {
                Ok(result) => print_json(&result)?,
                Err((result, e)) => {
                    if let Some(r) = result {
                        print_json(&r)?;
                    }
                    return Err(e);
                }
            }
        }
        Command::Optimize { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (path, rows) = optimize(&cfg, seed)?;
            for r in &rows {
                println!("{} {} {} step_time={} speedup={:.4}", r.graph, r.method, r.tasks, r.step_time, r.speedup);
            }
            println!("wrote {}", path.display());
        }
        Command::Pretrain { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = pretrain(&cfg, seed, output.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Finetune { config, checkpoint } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (path, rows) = finetune(&cfg, seed, &checkpoint)?;
            for r in &rows {
                println!("{} {} step_time={} speedup={:.4}", r.graph, r.method, r.step_time, r.speedup);
            }
            println!("wrote {}", path.display());
        }
        Command::Report { inputs, output } => {
            let summary = report(&inputs, output.as_deref())?;
            print!("{}", format_table(&summary));
        }
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io("json", e))?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
