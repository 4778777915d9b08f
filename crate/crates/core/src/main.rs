use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info, warn};

use mars_core::harness::{
    batch, compare, execute, output_dir, plan_scenario, write_artifacts, write_plan,
    HarnessError, PlanReport, ReferenceSpec, RunOptions, Scenario,
};

#[derive(Parser)]
#[command(name = "mars", version, about = "Fault-tolerant modular multirotor simulator")]
struct Cli {
    /// Output root (default: the scenario's output.dir, else ./out).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Override the plant integration step, seconds.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// More output; repeat for debug detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only report errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its artifacts.
    Run { scenario: PathBuf },
    /// Paired runs: A (ours) against B (baseline); files or directories.
    Compare { a: PathBuf, b: PathBuf },
    /// Plan and optimize only.
    Plan { scenario: PathBuf },
    /// Run every scenario file in a directory.
    Batch { dir: PathBuf },
}

fn fail(e: HarnessError) -> ExitCode {
    error!("{e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();

    if let Some(dt) = cli.dt {
        if !(dt > 0.0 && dt <= 0.01) {
            error!("--dt must lie in (0, 0.01], got {dt}");
            return ExitCode::from(4);
        }
    }
    let opts = RunOptions {
        out_dir: cli.out.clone(),
        dt: cli.dt,
        write: true,
    };

    match cli.command {
        Command::Run { scenario } => {
            let s = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let ex = match execute(&s, opts.dt) {
                Ok(ex) => ex,
                Err(e) => return fail(e),
            };
            let dir = output_dir(&s, &opts);
            if let Err(e) = write_artifacts(&s, &ex, &dir) {
                return fail(e);
            }
            let m = &ex.summary;
            println!(
                "{}: rms {:.4} m (std {:.4}), max {:.4} m, collisions {}, trials {}{}",
                m.name,
                m.mean_rms,
                m.std_rms,
                m.worst_max_error,
                m.collisions,
                m.trials.len(),
                if m.diverged { ", DIVERGED" } else { "" }
            );
            info!("artifacts in {}", dir.display());
            ExitCode::from(m.exit_code() as u8)
        }
        Command::Compare { a, b } => match compare(&a, &b, &opts) {
            Ok(report) => {
                print!("{}", report.to_table());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Plan { scenario } => {
            let s = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let ReferenceSpec::Planned(p) = &s.reference else {
                error!("{}: reference kind is not `planned`", scenario.display());
                return ExitCode::from(4);
            };
            let plan = match plan_scenario(&s, p) {
                Ok(plan) => plan,
                Err(e) => return fail(e),
            };
            let dir = output_dir(&s, &opts);
            if let Err(e) = write_plan(&plan, s.output.plot_dt, &dir) {
                return fail(e);
            }
            let r = PlanReport::new(&plan);
            println!(
                "{}: {} nodes, {} segments, {:.2} s, cost {:.4} -> {:.4} ({} iterations), G_o {:.3e}",
                s.name, r.nodes, r.segments, r.duration, r.initial_cost, r.final_cost, r.iterations, r.g_o
            );
            if !r.converged {
                warn!("optimizer stopped before convergence");
            }
            ExitCode::SUCCESS
        }
        Command::Batch { dir } => {
            let results = match batch(&dir, &opts) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let mut code = 0;
            for (path, r) in results {
                match r {
                    Ok(m) => {
                        println!(
                            "{:<32} rms {:.4} m  max {:.4} m  collisions {}{}",
                            m.name,
                            m.mean_rms,
                            m.worst_max_error,
                            m.collisions,
                            if m.diverged { "  DIVERGED" } else { "" }
                        );
                        code = code.max(m.exit_code());
                    }
                    Err(e) => {
                        error!("{}: {e}", path.display());
                        code = code.max(e.exit_code());
                    }
                }
            }
            ExitCode::from(code as u8)
        }
    }
}
