//! `layertrack` — dataset generation, penalty training, dynamics-aware
//! planning, closed-loop evaluation, and runtime benchmarking for layered
//! reference tracking on the unicycle and quadrotor.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use layertrack_cli::{commands, config};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "layertrack",
    about = "Learned tracking penalties for layered reference generation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the low-layer controller on sampled tasks and store the
    /// closed-loop records as JSONL.
    GenerateData {
        /// Experiment config (TOML, or JSON with a .json extension).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one penalty network per tracking weight from a stored dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset JSONL; defaults to the one generate-data writes into the
        /// output directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Restrict training to a single tracking weight.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan one mission with a trained model and write the plan plus its
    /// objective trace.
    Plan {
        /// Trained model checkpoint (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Mission file: waypoints, horizon, step size, optional start state.
        #[arg(long)]
        mission: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan held-out tasks with the trained models and compare realized
    /// closed-loop cost against the no-smoothness baseline.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the learned-penalty planner against the trajectory-optimization
    /// reference on matched tasks.
    BenchRuntime {
        #[arg(long)]
        config: PathBuf,
        /// Matched tasks to time (each timed once per method).
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(
    config: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> layertrack::Result<(config::ResolvedConfig, PathBuf)> {
    let mut exp = ExperimentConfig::from_path(config)?;
    if let Some(seed) = seed {
        exp.seed = seed;
    }
    if let Some(out) = out {
        exp.output_dir = Some(out);
    }
    let resolved = exp.resolve()?;
    let dir = resolved.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    Ok((resolved, dir))
}

fn restrict_rhos(rhos: &[f64], rho: Option<f64>) -> layertrack::Result<Vec<f64>> {
    match rho {
        None => Ok(rhos.to_vec()),
        Some(r) if r.is_finite() && r > 0.0 => Ok(vec![r]),
        Some(r) => Err(layertrack::Error::InvalidConfig {
            message: format!("--rho must be a positive finite number, got {r}"),
        }),
    }
}

fn run(cli: Cli) -> layertrack::Result<()> {
    match cli.command {
        Command::GenerateData { config, seed, out } => {
            let (cfg, dir) = resolve(&config, seed, out)?;
            let summary = cmd_summary_line(commands::cmd_generate_data(&cfg, &dir)?)?;
            println!("{summary}");
        }
        Command::Train {
            config,
            dataset,
            rho,
            seed,
            out,
        } => {
            let (cfg, dir) = resolve(&config, seed, out)?;
            let dataset = dataset.unwrap_or_else(|| cfg.dataset_path(&dir));
            let rhos = restrict_rhos(&cfg.rhos, rho)?;
            for artifact in commands::cmd_train(&cfg, &dataset, &rhos, &dir)? {
                println!("{}", cmd_summary_line(artifact)?);
            }
        }
        Command::Plan { model, mission, out } => {
            let dir = out.unwrap_or_else(|| PathBuf::from("runs/plan"));
            let artifacts = commands::cmd_plan(&model, &mission, &dir)?;
            println!(
                "{}",
                serde_json::json!({
                    "plan": artifacts.plan_path,
                    "trace": artifacts.trace_path,
                    "objective": artifacts.plan.objective,
                    "converged": artifacts.plan.converged,
                    "iterations": artifacts.plan.iterations,
                })
            );
        }
        Command::Evaluate {
            config,
            rho,
            seed,
            out,
        } => {
            let (cfg, dir) = resolve(&config, seed, out)?;
            let rhos = restrict_rhos(&cfg.rhos, rho)?;
            let report = commands::cmd_evaluate(&cfg, &dir, &rhos)?;
            for s in &report.summaries {
                println!("{}", cmd_summary_line(s)?);
            }
        }
        Command::BenchRuntime {
            config,
            instances,
            seed,
            out,
        } => {
            let (cfg, dir) = resolve(&config, seed, out)?;
            let report = commands::cmd_bench_runtime(&cfg, &dir, instances)?;
            for m in &report.methods {
                println!("{}", cmd_summary_line(m)?);
            }
        }
    }
    Ok(())
}

fn cmd_summary_line<T: serde::Serialize>(value: T) -> layertrack::Result<String> {
    Ok(serde_json::to_string(&value)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
