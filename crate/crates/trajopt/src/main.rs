use std::fs::{self, File};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use trajopt::io::{append_result, report, write_trajectory_dump};
use trajopt::runner::{run_solver, RunConfig, SolverKind};
use trajopt::scenario::{gen_scenario, GenParams, Scenario, ScenarioKind};

#[derive(Parser)]
#[command(name = "trajopt", version, about = "Trajectory optimization benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver on a scenario file and append the result.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        solver: SolverKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Iteration count; solver default when absent.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a scenario file.
    Gen {
        #[arg(long)]
        kind: ScenarioKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        obstacles: Option<usize>,
        #[arg(long)]
        agents: Option<usize>,
        #[arg(long)]
        n_p: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a results directory per scenario kind and solver.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Command::Run {
            scenario,
            solver,
            seed,
            iters,
            out,
        } => {
            let text = fs::read_to_string(&scenario).with_context(|| format!("reading {}", scenario.display()))?;
            let sc = Scenario::from_json(&text)?;
            let cfg = RunConfig { solver, seed, iters };
            let run = run_solver(&sc, &cfg)?;
            fs::create_dir_all(&out)?;
            if let Some(name) = &run.record.dump {
                write_trajectory_dump(File::create(out.join(name))?, &run.trajectories)?;
            }
            append_result(&out, &run.record)?;
            let m = &run.record.metrics;
            println!(
                "{} {} seed {}: success {} iters {} residual {:.3e} ({:.1} ms)",
                run.record.scenario_id, solver, seed, m.success, m.iterations, m.residual_final, m.wall_time_ms
            );
        }
        Command::Gen {
            kind,
            seed,
            obstacles,
            agents,
            n_p,
            out,
        } => {
            let params = GenParams {
                n_obstacles: obstacles,
                n_agents: agents,
                n_p,
            };
            let sc = gen_scenario(kind, &params, seed)?;
            fs::write(&out, sc.to_json()?).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Report { input, out } => {
            for r in report(&input, &out)? {
                println!(
                    "{:<22} {:<10} {:>3}/{:<3} success {:.2}",
                    r.kind, r.solver, r.successes, r.runs, r.success_rate
                );
            }
        }
    }
    Ok(())
}
