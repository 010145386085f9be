use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vaoi::commands;
use vaoi::config::ExperimentConfig;
use vaoi::estimation::ChannelObservation;
use vaoi::qlearning::LambdaUpdate;
use vaoi::Error;

#[derive(Parser)]
#[command(name = "vaoi", version, about = "Average VAoI minimization for an energy-harvesting sensor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long = "p-g", global = true)]
    p_g: Option<f64>,
    #[arg(long = "p-s", global = true)]
    p_s: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Battery capacity.
    #[arg(long = "B", global = true)]
    battery_capacity: Option<u32>,
    #[arg(long = "delta-max", global = true)]
    delta_max: Option<u32>,
    /// Monte Carlo evaluation runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Monte Carlo evaluation horizon in slots.
    #[arg(long, global = true)]
    horizon: Option<u64>,
    /// Episodes for estimate, qlearn and compare.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long = "estimator-mode", global = true, value_parser = parse_mode)]
    estimator_mode: Option<ChannelObservation>,
    #[arg(long = "lambda-update", global = true, value_parser = parse_lambda)]
    lambda_update: Option<LambdaUpdate>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the known model and export the optimal policy.
    Solve,
    /// Optimal average VAoI for each truncation ceiling.
    TableDmax,
    /// Optimal vs greedy over the beta and battery grids.
    SweepBeta {
        /// Also run Monte Carlo for every point.
        #[arg(long)]
        mc: bool,
    },
    /// Estimate-then-solve learning curve.
    Estimate,
    /// Average-cost Q-learning curve.
    Qlearn,
    /// All regimes side by side.
    Compare,
}

fn parse_mode(s: &str) -> Result<ChannelObservation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_lambda(s: &str) -> Result<LambdaUpdate, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn build_config(c: &Common) -> vaoi::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = c.p_g {
        cfg.system.p_g = v;
    }
    if let Some(v) = c.p_s {
        cfg.system.p_s = v;
    }
    if let Some(v) = c.beta {
        cfg.system.beta = v;
    }
    if let Some(v) = c.battery_capacity {
        cfg.system.battery_capacity = v;
    }
    if let Some(v) = c.delta_max {
        cfg.system.delta_max = v;
    }
    if let Some(v) = c.runs {
        cfg.evaluation.runs = v;
    }
    if let Some(v) = c.horizon {
        cfg.evaluation.horizon = v;
    }
    if let Some(v) = c.episodes {
        cfg.learner.episodes = v;
        cfg.estimation.episodes = v;
    }
    if let Some(v) = c.estimator_mode {
        cfg.estimation.mode = v;
    }
    if let Some(v) = c.lambda_update {
        cfg.learner.lambda_update = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> vaoi::Result<serde_json::Value> {
    let cfg = build_config(&cli.common)?;
    let out = cfg.output_dir.display().to_string();
    Ok(match &cli.command {
        Command::Solve => {
            let r = commands::cmd_solve(&cfg)?;
            json!({
                "command": "solve",
                "avg_vaoi": r.avg_cost,
                "exact_avg_vaoi": r.exact_avg_vaoi,
                "iterations": r.iterations,
                "threshold_structure": r.threshold.holds(),
                "output_dir": out,
            })
        }
        Command::TableDmax => {
            let rows = commands::cmd_table_dmax(&cfg)?;
            let table: Vec<_> = rows
                .iter()
                .map(|r| json!({"delta_max": r.delta_max, "avg_vaoi": r.rvia_avg_cost, "mc_mean": r.monte_carlo.mean_vaoi}))
                .collect();
            json!({"command": "table-dmax", "rows": table, "output_dir": out})
        }
        Command::SweepBeta { mc } => {
            let rows = commands::cmd_sweep_beta(&cfg, *mc)?;
            json!({"command": "sweep-beta", "points": rows.len(), "output_dir": out})
        }
        Command::Estimate => {
            let r = commands::cmd_estimate(&cfg)?;
            json!({
                "command": "estimate",
                "estimator_mode": r.estimator_mode,
                "reference_optimal": r.reference_optimal,
                "final_exact_avg_vaoi": r.episodes.last().map(|e| e.exact_avg_vaoi),
                "output_dir": out,
            })
        }
        Command::Qlearn => {
            let r = commands::cmd_qlearn(&cfg)?;
            json!({
                "command": "qlearn",
                "reference_optimal": r.reference_optimal,
                "final_exact_avg_vaoi": r.final_exact_avg_vaoi,
                "steps": r.steps,
                "output_dir": out,
            })
        }
        Command::Compare => {
            let r = commands::cmd_compare(&cfg)?;
            json!({"command": "compare", "seed": cfg.seed, "result": r, "output_dir": out})
        }
    })
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::StateOutOfRange(_) => "state_out_of_range",
        Error::InfeasibleAction(_) => "infeasible_action",
        Error::NotConverged { .. } => "not_converged",
        Error::PolicyShape { .. } => "policy_shape",
        Error::SingularChain => "singular_chain",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = json!({"error": {"kind": error_kind(&e), "message": e.to_string()}});
            eprintln!("{body}");
            ExitCode::from(2)
        }
    }
}
