//! Stochastic environment, episode runner, Monte Carlo evaluation and
//! parameter sweeps.
//!
//! Randomness comes from ChaCha8 streams. A `(seed, stream_id)` pair keys
//! the generator as `ChaCha8Rng::seed_from_u64(seed)` followed by
//! `set_stream(stream_id)`; Monte Carlo run `i` uses stream `i`. Within a
//! slot the draws are taken in the order g, h, e, each as
//! `uniform[0,1) < p`, and h is drawn even when idling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::chain::evaluate_chain;
use crate::error::{Error, Result};
use crate::model::{battery_step, is_feasible, vaoi_step, Action, GridShape, State, SystemParams};
use crate::policy::{greedy_policy, Policy};
use crate::solver::{rvia_solve_kernel, Kernel, RviaSettings};

/// SplitMix64 finalizer, used to derive independent master seeds for
/// sub-experiments (episode evaluations, sweep points) from one seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    pub generated: bool,
    pub delivered: bool,
    pub harvested: bool,
    pub next_state: State,
    /// VAoI after the action.
    pub cost: f64,
}

/// Ground-truth environment drawing the Bernoulli processes.
#[derive(Debug, Clone)]
pub struct Environment {
    params: SystemParams,
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(params: SystemParams, seed: u64, stream_id: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            seed,
            stream_id,
            rng: stream_rng(seed, stream_id),
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    fn draw(&mut self) -> (bool, bool, bool) {
        let g = self.rng.gen::<f64>() < self.params.p_g;
        let h = self.rng.gen::<f64>() < self.params.p_s;
        let e = self.rng.gen::<f64>() < self.params.beta;
        (g, h, e)
    }

    pub fn step(&mut self, state: State, action: Action) -> Result<StepOutcome> {
        if !self.params.shape().contains(state) {
            return Err(Error::StateOutOfRange(state));
        }
        if !is_feasible(state, action) {
            return Err(Error::InfeasibleAction(state));
        }
        let (g, h, e) = self.draw();
        let next_state = State::new(
            vaoi_step(state.delta, g, action, h, self.params.delta_max),
            battery_step(state.battery, e, action, self.params.battery_capacity)?,
        );
        Ok(StepOutcome {
            generated: g,
            delivered: h,
            harvested: e,
            next_state,
            cost: next_state.delta as f64,
        })
    }
}

/// What a model-free agent sees of the world: states, its own actions, and
/// incurred costs.
pub trait Interact {
    fn shape(&self) -> GridShape;
    fn reset(&mut self, state: State) -> Result<()>;
    fn current(&self) -> State;
    /// Applies `action` and returns `(cost, next_state)`.
    fn act(&mut self, action: Action) -> Result<(f64, State)>;
}

/// An [`Environment`] with a current state, exposed only through [`Interact`].
#[derive(Debug, Clone)]
pub struct EpisodicEnv {
    env: Environment,
    state: State,
}

impl EpisodicEnv {
    pub fn new(env: Environment) -> Self {
        Self {
            env,
            state: State::new(0, 0),
        }
    }
}

impl Interact for EpisodicEnv {
    fn shape(&self) -> GridShape {
        self.env.params.shape()
    }

    fn reset(&mut self, state: State) -> Result<()> {
        self.env.params.shape().checked_index(state)?;
        self.state = state;
        Ok(())
    }

    fn current(&self) -> State {
        self.state
    }

    fn act(&mut self, action: Action) -> Result<(f64, State)> {
        let out = self.env.step(self.state, action)?;
        self.state = out.next_state;
        Ok((out.cost, out.next_state))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeSummary {
    /// `(1/T) * sum` of the VAoI after each of the `T` steps.
    pub average_vaoi: f64,
    pub transmissions: u64,
    pub deliveries: u64,
    pub arrivals: u64,
    pub final_state: State,
    pub max_battery: u32,
    pub max_delta: u32,
}

pub fn run_episode(env: &mut Environment, policy: &Policy, horizon: u64, s0: State) -> Result<EpisodeSummary> {
    run_with_burn_in(env, policy, 0, horizon, s0)
}

fn run_with_burn_in(
    env: &mut Environment,
    policy: &Policy,
    burn_in: u64,
    horizon: u64,
    s0: State,
) -> Result<EpisodeSummary> {
    if horizon == 0 {
        return Err(Error::InvalidParameter {
            field: "horizon",
            reason: "horizon must be at least one slot".into(),
        });
    }
    if policy.shape() != env.params.shape() {
        return Err(Error::PolicyShape {
            expected: env.params.shape().num_states(),
            got: policy.actions().len(),
        });
    }
    let mut state = s0;
    for _ in 0..burn_in {
        state = env.step(state, policy.action(state))?.next_state;
    }
    let mut total = 0u64;
    let mut summary = EpisodeSummary {
        average_vaoi: 0.0,
        transmissions: 0,
        deliveries: 0,
        arrivals: 0,
        final_state: state,
        max_battery: state.battery,
        max_delta: state.delta,
    };
    for _ in 0..horizon {
        let action = policy.action(state);
        let out = env.step(state, action)?;
        if action == Action::Transmit {
            summary.transmissions += 1;
            summary.deliveries += out.delivered as u64;
        }
        summary.arrivals += out.harvested as u64;
        state = out.next_state;
        total += state.delta as u64;
        summary.max_battery = summary.max_battery.max(state.battery);
        summary.max_delta = summary.max_delta.max(state.delta);
    }
    summary.final_state = state;
    summary.average_vaoi = total as f64 / horizon as f64;
    Ok(summary)
}

pub const DEFAULT_MC_RUNS: usize = 1000;
pub const DEFAULT_MC_HORIZON: u64 = 10_000;
pub const DEFAULT_BURN_IN: u64 = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub runs: usize,
    pub horizon: u64,
    /// Slots simulated and discarded before averaging starts.
    pub burn_in: u64,
    pub seed: u64,
    pub start: State,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            runs: DEFAULT_MC_RUNS,
            horizon: DEFAULT_MC_HORIZON,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
            start: State::new(0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean_vaoi: f64,
    pub std_error: f64,
    pub runs: usize,
    pub horizon: u64,
    pub burn_in: u64,
    pub confidence_interval_99: (f64, f64),
}

impl EvalReport {
    pub fn covers(&self, value: f64) -> bool {
        self.confidence_interval_99.0 <= value && value <= self.confidence_interval_99.1
    }
}

/// Averages independent runs, run `i` on stream `i` of `settings.seed`.
/// Runs execute in parallel; the reduction is in run order.
pub fn monte_carlo_eval(params: &SystemParams, policy: &Policy, settings: &McSettings) -> Result<EvalReport> {
    if settings.runs < 2 {
        return Err(Error::InvalidParameter {
            field: "runs",
            reason: "Monte Carlo evaluation needs at least two runs".into(),
        });
    }
    params.validate()?;
    params.shape().checked_index(settings.start)?;
    let per_run: Vec<f64> = (0..settings.runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut env = Environment::new(*params, settings.seed, i)?;
            run_with_burn_in(&mut env, policy, settings.burn_in, settings.horizon, settings.start)
                .map(|s| s.average_vaoi)
        })
        .collect::<Result<_>>()?;
    Ok(summarize(&per_run, settings))
}

fn summarize(samples: &[f64], settings: &McSettings) -> EvalReport {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_error = (var / n).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.995);
    EvalReport {
        mean_vaoi: mean,
        std_error,
        runs: samples.len(),
        horizon: settings.horizon,
        burn_in: settings.burn_in,
        confidence_interval_99: (mean - t * std_error, mean + t * std_error),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicySource {
    Optimal,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Evaluator {
    Exact,
    MonteCarlo(McSettings),
}

impl Evaluator {
    pub fn name(&self) -> &'static str {
        match self {
            Evaluator::Exact => "exact",
            Evaluator::MonteCarlo(_) => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub params: SystemParams,
    pub policy: PolicySource,
    pub evaluator: &'static str,
    pub avg_vaoi: Option<f64>,
    pub std_error: Option<f64>,
    pub ci_99: Option<(f64, f64)>,
    /// Relative value iteration iterations for optimal points.
    pub solver_iterations: Option<usize>,
    /// Set when this point failed; the sweep carries on.
    pub error: Option<String>,
}

/// Solves and evaluates each grid point independently. Points run in
/// parallel; rows come back in grid order, then policy order, then
/// evaluator order. A failing point yields rows with `error` set.
pub fn sweep(
    grid: &[SystemParams],
    sources: &[PolicySource],
    evaluators: &[Evaluator],
    solver: &RviaSettings,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || sources.is_empty() || evaluators.is_empty() {
        return Err(Error::InvalidParameter {
            field: "grid",
            reason: "sweep needs at least one point, policy source and evaluator".into(),
        });
    }
    let rows: Vec<Vec<SweepRow>> = grid
        .par_iter()
        .map(|params| sweep_point(params, sources, evaluators, solver))
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn sweep_point(
    params: &SystemParams,
    sources: &[PolicySource],
    evaluators: &[Evaluator],
    solver: &RviaSettings,
) -> Vec<SweepRow> {
    let failed = |source: PolicySource, evaluator: &Evaluator, err: &Error| SweepRow {
        params: *params,
        policy: source,
        evaluator: evaluator.name(),
        avg_vaoi: None,
        std_error: None,
        ci_99: None,
        solver_iterations: None,
        error: Some(err.to_string()),
    };
    let kernel = match Kernel::new(params) {
        Ok(k) => k,
        Err(e) => {
            return sources
                .iter()
                .flat_map(|&s| evaluators.iter().map(move |ev| (s, ev)))
                .map(|(s, ev)| failed(s, ev, &e))
                .collect()
        }
    };
    let mut rows = Vec::new();
    for &source in sources {
        let (policy, iterations) = match source {
            PolicySource::Greedy => (Ok(greedy_policy(params.shape())), None),
            PolicySource::Optimal => match rvia_solve_kernel(&kernel, solver) {
                Ok(s) => (Ok(s.policy), Some(s.iterations)),
                Err(e) => (Err(e), None),
            },
        };
        for evaluator in evaluators {
            let policy = match &policy {
                Ok(p) => p,
                Err(e) => {
                    rows.push(failed(source, evaluator, e));
                    continue;
                }
            };
            let row = match evaluator {
                Evaluator::Exact => evaluate_chain(&kernel, policy, State::new(0, 0)).map(|ev| SweepRow {
                    params: *params,
                    policy: source,
                    evaluator: evaluator.name(),
                    avg_vaoi: Some(ev.average_vaoi),
                    std_error: None,
                    ci_99: None,
                    solver_iterations: iterations,
                    error: None,
                }),
                Evaluator::MonteCarlo(mc) => monte_carlo_eval(params, policy, mc).map(|r| SweepRow {
                    params: *params,
                    policy: source,
                    evaluator: evaluator.name(),
                    avg_vaoi: Some(r.mean_vaoi),
                    std_error: Some(r.std_error),
                    ci_99: Some(r.confidence_interval_99),
                    solver_iterations: iterations,
                    error: None,
                }),
            };
            rows.push(row.unwrap_or_else(|e| failed(source, evaluator, &e)));
        }
    }
    rows
}

/// Long-format CSV, one row per grid point, policy and evaluator.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "p_g", "p_s", "beta", "B", "delta_max", "policy", "evaluator", "avg_vaoi", "std_error", "ci99_lo",
        "ci99_hi", "solver_iterations", "status",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let p = &r.params;
        let policy = match r.policy {
            PolicySource::Optimal => "optimal",
            PolicySource::Greedy => "greedy",
        };
        w.write_record([
            p.p_g.to_string(),
            p.p_s.to_string(),
            p.beta.to_string(),
            p.battery_capacity.to_string(),
            p.delta_max.to_string(),
            policy.to_string(),
            r.evaluator.to_string(),
            opt(r.avg_vaoi),
            opt(r.std_error),
            opt(r.ci_99.map(|c| c.0)),
            opt(r.ci_99.map(|c| c.1)),
            r.solver_iterations.map(|i| i.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_else(|| "ok".into()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
