//! Batch commands behind the `vaoi` binary. Each command validates the
//! config, runs, and writes its artifacts into `config.output_dir` only.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::chain::evaluate_chain;
use crate::config::{ExperimentConfig, RunManifest};
use crate::error::Result;
use crate::estimation::{run_estimation_based_mdp, write_estimation_csv, ChannelObservation, EstimationEpisode};
use crate::model::{GridShape, State, SystemParams};
use crate::policy::{greedy_policy, threshold_profile, Policy, ThresholdProfile};
use crate::qlearning::{run_q_learning, write_learning_curve_csv, LearningCurvePoint, QTable};
use crate::sim::{monte_carlo_eval, sweep, write_sweep_csv, EvalReport, Evaluator, PolicySource, SweepRow};
use crate::solver::{rvia_solve_kernel, Kernel};

pub const TABLE_DELTA_MAX: [u32; 9] = [1, 2, 3, 4, 5, 10, 15, 20, 25];
pub const SWEEP_BETA: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];
pub const SWEEP_BATTERY: [u32; 5] = [1, 2, 5, 10, 15];

fn prepare(config: &ExperimentConfig) -> Result<&Path> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    Ok(&config.output_dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutput {
    pub avg_cost: f64,
    pub exact_avg_vaoi: f64,
    pub iterations: usize,
    pub span_residual: f64,
    pub threshold: ThresholdProfile,
    #[serde(skip)]
    pub policy: Policy,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// Solves the known model. Writes `policy_grid.csv`, `policy.json`,
/// `value.json` and `solve.json`.
pub fn cmd_solve(config: &ExperimentConfig) -> Result<SolveOutput> {
    let started = Instant::now();
    let out = prepare(config)?;
    let kernel = Kernel::new(&config.system)?;
    let solved = rvia_solve_kernel(&kernel, &config.solver)?;
    let exact = evaluate_chain(&kernel, &solved.policy, State::new(0, 0))?.average_vaoi;
    let manifest = RunManifest::new("solve", config, started.elapsed().as_secs_f64());

    let grid = out.join("policy_grid.csv");
    solved.policy.write_csv_grid(File::create(&grid)?)?;

    #[derive(Serialize)]
    struct PolicyBody<'a> {
        shape: GridShape,
        state_order: &'static str,
        avg_cost: f64,
        policy: &'a Policy,
    }
    let policy_json = out.join("policy.json");
    write_json(
        &policy_json,
        &Artifact {
            manifest: &manifest,
            body: PolicyBody {
                shape: kernel.shape(),
                state_order: "delta-major",
                avg_cost: solved.avg_cost,
                policy: &solved.policy,
            },
        },
    )?;

    #[derive(Serialize)]
    struct ValueBody<'a> {
        shape: GridShape,
        state_order: &'static str,
        avg_cost: f64,
        values: &'a [f64],
    }
    let value_json = out.join("value.json");
    write_json(
        &value_json,
        &Artifact {
            manifest: &manifest,
            body: ValueBody {
                shape: kernel.shape(),
                state_order: "delta-major",
                avg_cost: solved.avg_cost,
                values: solved.value.values(),
            },
        },
    )?;

    let output = SolveOutput {
        avg_cost: solved.avg_cost,
        exact_avg_vaoi: exact,
        iterations: solved.iterations,
        span_residual: solved.span_residual,
        threshold: threshold_profile(&solved.policy),
        policy: solved.policy,
        files: vec![grid, policy_json, value_json, out.join("solve.json")],
    };
    write_json(&out.join("solve.json"), &Artifact { manifest: &manifest, body: &output })?;
    Ok(output)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaMaxRow {
    pub delta_max: u32,
    pub rvia_avg_cost: f64,
    pub exact_avg_vaoi: f64,
    pub iterations: usize,
    pub monte_carlo: EvalReport,
}

/// Optimal average VAoI for each truncation ceiling in [`TABLE_DELTA_MAX`].
/// Writes `table_dmax.csv` and `table_dmax.json`.
pub fn cmd_table_dmax(config: &ExperimentConfig) -> Result<Vec<DeltaMaxRow>> {
    let started = Instant::now();
    let out = prepare(config)?;
    let mut rows = Vec::with_capacity(TABLE_DELTA_MAX.len());
    for delta_max in TABLE_DELTA_MAX {
        let params = SystemParams {
            delta_max,
            ..config.system
        };
        let kernel = Kernel::new(&params)?;
        let solved = rvia_solve_kernel(&kernel, &config.solver)?;
        let exact = evaluate_chain(&kernel, &solved.policy, State::new(0, 0))?.average_vaoi;
        let mc = monte_carlo_eval(&params, &solved.policy, &config.monte_carlo())?;
        rows.push(DeltaMaxRow {
            delta_max,
            rvia_avg_cost: solved.avg_cost,
            exact_avg_vaoi: exact,
            iterations: solved.iterations,
            monte_carlo: mc,
        });
    }
    let mut w = csv::Writer::from_path(out.join("table_dmax.csv"))?;
    w.write_record([
        "delta_max",
        "rvia_avg_cost",
        "exact_avg_vaoi",
        "mc_mean",
        "mc_std_error",
        "mc_ci99_lo",
        "mc_ci99_hi",
        "iterations",
    ])?;
    for r in &rows {
        w.write_record([
            r.delta_max.to_string(),
            r.rvia_avg_cost.to_string(),
            r.exact_avg_vaoi.to_string(),
            r.monte_carlo.mean_vaoi.to_string(),
            r.monte_carlo.std_error.to_string(),
            r.monte_carlo.confidence_interval_99.0.to_string(),
            r.monte_carlo.confidence_interval_99.1.to_string(),
            r.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    let manifest = RunManifest::new("table-dmax", config, started.elapsed().as_secs_f64());
    #[derive(Serialize)]
    struct Body<'a> {
        rows: &'a [DeltaMaxRow],
    }
    write_json(&out.join("table_dmax.json"), &Artifact { manifest: &manifest, body: Body { rows: &rows } })?;
    Ok(rows)
}

/// Optimal and greedy average VAoI over [`SWEEP_BETA`] x [`SWEEP_BATTERY`]
/// with the other parameters from the config. Writes `sweep_beta.csv` and
/// `sweep_beta.json`.
pub fn cmd_sweep_beta(config: &ExperimentConfig, with_monte_carlo: bool) -> Result<Vec<SweepRow>> {
    let started = Instant::now();
    let out = prepare(config)?;
    let grid: Vec<SystemParams> = SWEEP_BATTERY
        .iter()
        .flat_map(|&b| {
            SWEEP_BETA.iter().map(move |&beta| SystemParams {
                beta,
                battery_capacity: b,
                ..config.system
            })
        })
        .collect();
    let mut evaluators = vec![Evaluator::Exact];
    if with_monte_carlo {
        evaluators.push(Evaluator::MonteCarlo(config.monte_carlo()));
    }
    let rows = sweep(
        &grid,
        &[PolicySource::Optimal, PolicySource::Greedy],
        &evaluators,
        &config.solver,
    )?;
    write_sweep_csv(&rows, File::create(out.join("sweep_beta.csv"))?)?;
    let manifest = RunManifest::new("sweep-beta", config, started.elapsed().as_secs_f64());
    #[derive(Serialize)]
    struct Body<'a> {
        rows: &'a [SweepRow],
    }
    write_json(&out.join("sweep_beta.json"), &Artifact { manifest: &manifest, body: Body { rows: &rows } })?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub estimator_mode: ChannelObservation,
    pub reference_optimal: f64,
    pub episodes: Vec<EstimationEpisode>,
}

/// Estimate-then-solve curve. Writes `estimation_curve.csv` and `estimate.json`.
pub fn cmd_estimate(config: &ExperimentConfig) -> Result<EstimateOutput> {
    let started = Instant::now();
    let out = prepare(config)?;
    let reference = rvia_solve_kernel(&Kernel::new(&config.system)?, &config.solver)?.avg_cost;
    let run = run_estimation_based_mdp(&config.system, &config.estimation())?;
    write_estimation_csv(&run, File::create(out.join("estimation_curve.csv"))?)?;
    let output = EstimateOutput {
        estimator_mode: run.mode,
        reference_optimal: reference,
        episodes: run.episodes,
    };
    let manifest = RunManifest::new("estimate", config, started.elapsed().as_secs_f64());
    write_json(&out.join("estimate.json"), &Artifact { manifest: &manifest, body: &output })?;
    Ok(output)
}

#[derive(Debug, Clone, Serialize)]
pub struct QLearnOutput {
    pub reference_optimal: f64,
    pub final_exact_avg_vaoi: Option<f64>,
    pub steps: u64,
    pub curve: Vec<LearningCurvePoint>,
    #[serde(skip)]
    pub table: QTable,
}

/// Q-learning curve. Writes `learning_curve.csv`, `qtable.json` and `qlearn.json`.
pub fn cmd_qlearn(config: &ExperimentConfig) -> Result<QLearnOutput> {
    let started = Instant::now();
    let out = prepare(config)?;
    let reference = rvia_solve_kernel(&Kernel::new(&config.system)?, &config.solver)?.avg_cost;
    let run = run_q_learning(&config.system, &config.q_learning())?;
    write_learning_curve_csv(&run, File::create(out.join("learning_curve.csv"))?)?;
    let manifest = RunManifest::new("qlearn", config, started.elapsed().as_secs_f64());
    #[derive(Serialize)]
    struct TableBody<'a> {
        state_order: &'static str,
        table: &'a QTable,
    }
    write_json(
        &out.join("qtable.json"),
        &Artifact {
            manifest: &manifest,
            body: TableBody {
                state_order: "delta-major",
                table: &run.table,
            },
        },
    )?;
    let output = QLearnOutput {
        reference_optimal: reference,
        final_exact_avg_vaoi: run.curve.last().map(|p| p.exact_avg_vaoi),
        steps: run.steps,
        curve: run.curve,
        table: run.table,
    };
    write_json(&out.join("qlearn.json"), &Artifact { manifest: &manifest, body: &output })?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub known_optimal: f64,
    pub estimation_endpoint: f64,
    pub qlearning_endpoint: f64,
    pub greedy: f64,
    pub estimator_mode: ChannelObservation,
    pub estimation_episodes: usize,
    pub qlearning_episodes: usize,
}

/// Runs all regimes on one config and writes `compare.json`.
pub fn cmd_compare(config: &ExperimentConfig) -> Result<Comparison> {
    let started = Instant::now();
    let out = prepare(config)?;
    let kernel = Kernel::new(&config.system)?;
    let known = rvia_solve_kernel(&kernel, &config.solver)?;
    let greedy = evaluate_chain(&kernel, &greedy_policy(config.system.shape()), State::new(0, 0))?.average_vaoi;
    let mut est_cfg = config.estimation();
    est_cfg.curve_mc = None;
    let est = run_estimation_based_mdp(&config.system, &est_cfg)?;
    let mut q_cfg = config.q_learning();
    q_cfg.curve_mc = None;
    let q = run_q_learning(&config.system, &q_cfg)?;
    let q_end = evaluate_chain(&kernel, &q.policy, State::new(0, 0))?.average_vaoi;
    let comparison = Comparison {
        known_optimal: known.avg_cost,
        estimation_endpoint: est.episodes.last().map(|e| e.exact_avg_vaoi).expect("episode 0 always exists"),
        qlearning_endpoint: q_end,
        greedy,
        estimator_mode: est.mode,
        estimation_episodes: est_cfg.episodes,
        qlearning_episodes: q_cfg.episodes,
    };
    let manifest = RunManifest::new("compare", config, started.elapsed().as_secs_f64());
    write_json(&out.join("compare.json"), &Artifact { manifest: &manifest, body: &comparison })?;
    Ok(comparison)
}
