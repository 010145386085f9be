//! Model-free average-cost tabular Q-learning.
//!
//! The learner sees the world only through [`Interact`]: the current state,
//! its own action, the incurred cost and the next state.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::evaluate_chain;
use crate::error::{Error, Result};
use crate::model::{feasible_actions, Action, GridShape, State, SystemParams};
use crate::policy::Policy;
use crate::sim::{derive_seed, monte_carlo_eval, stream_rng, Environment, EpisodicEnv, Interact, McSettings};
use crate::solver::{greedy_action, Kernel};

/// Step-size schedule for the Q-values or the average-cost estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearningSchedule {
    /// `1 / (t + 1)` with `t` the global step index.
    Harmonic,
    /// `1 / N(s, a)^omega` with `N` the visit count including this visit.
    VisitPower { omega: f64 },
}

impl LearningSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LearningSchedule::Harmonic => Ok(()),
            LearningSchedule::VisitPower { omega } if omega > 0.5 && omega <= 1.0 => Ok(()),
            LearningSchedule::VisitPower { omega } => Err(Error::InvalidParameter {
                field: "omega",
                reason: format!("{omega} is outside (0.5, 1]"),
            }),
        }
    }

    /// Rate for global step `step` (0-based) and a pair visited `visits`
    /// times so far, counting the current visit.
    pub fn rate(&self, step: u64, visits: u64) -> f64 {
        match *self {
            LearningSchedule::Harmonic => 1.0 / (step as f64 + 1.0),
            LearningSchedule::VisitPower { omega } => 1.0 / (visits.max(1) as f64).powf(omega),
        }
    }

    /// Exponent `p` such that the `n`-th rate is `n^-p`. Both variants are
    /// of this form, so `sum rate = inf` iff `p <= 1` and
    /// `sum rate^2 < inf` iff `p > 1/2`.
    pub fn decay_exponent(&self) -> f64 {
        match *self {
            LearningSchedule::Harmonic => 1.0,
            LearningSchedule::VisitPower { omega } => omega,
        }
    }

    pub fn is_admissible(&self) -> bool {
        let p = self.decay_exponent();
        p > 0.5 && p <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EpsilonDecay {
    /// `eps0 / (1 + mu k)`
    Polynomial { eps0: f64, mu: f64 },
    /// `eps0 exp(-mu k)`
    Exponential { eps0: f64, mu: f64 },
    /// `eps0 / sqrt(k + 1)`
    InverseSqrt { eps0: f64 },
}

/// Episode-indexed exploration probability, clamped to `[floor, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub decay: EpsilonDecay,
    pub floor: f64,
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<()> {
        let (eps0, mu) = match self.decay {
            EpsilonDecay::Polynomial { eps0, mu } | EpsilonDecay::Exponential { eps0, mu } => (eps0, mu),
            EpsilonDecay::InverseSqrt { eps0 } => (eps0, 1.0),
        };
        if !(eps0 > 0.0) || !(mu > 0.0) {
            return Err(Error::InvalidParameter {
                field: "exploration",
                reason: "eps0 and mu must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.floor) {
            return Err(Error::InvalidParameter {
                field: "exploration.floor",
                reason: format!("{} is not a probability", self.floor),
            });
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: u64) -> f64 {
        let k = episode as f64;
        let raw = match self.decay {
            EpsilonDecay::Polynomial { eps0, mu } => eps0 / (1.0 + mu * k),
            EpsilonDecay::Exponential { eps0, mu } => eps0 * (-mu * k).exp(),
            EpsilonDecay::InverseSqrt { eps0 } => eps0 / (k + 1.0).sqrt(),
        };
        raw.max(self.floor).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaUpdate {
    /// Update the average-cost estimate after every step.
    #[default]
    EveryStep,
    /// Update it only on steps taken from the reference state.
    RefGated,
}

impl std::str::FromStr for LambdaUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "every-step" => Ok(Self::EveryStep),
            "ref-gated" => Ok(Self::RefGated),
            other => Err(Error::Config(format!(
                "lambda update must be `every-step` or `ref-gated`, got `{other}`"
            ))),
        }
    }
}

/// Action values, visit counts and the running average-cost estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    shape: GridShape,
    q: Vec<[f64; 2]>,
    visits: Vec<[u64; 2]>,
    pub lambda_hat: f64,
    pub ref_state: State,
}

impl QTable {
    pub fn new(shape: GridShape, ref_state: State) -> Result<Self> {
        shape.checked_index(ref_state)?;
        let n = shape.num_states();
        Ok(Self {
            shape,
            q: vec![[0.0; 2]; n],
            visits: vec![[0; 2]; n],
            lambda_hat: 0.0,
            ref_state,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn q(&self, state: State, action: Action) -> f64 {
        self.q[self.shape.index(state)][action.as_index()]
    }

    pub fn set_q(&mut self, state: State, action: Action, value: f64) {
        let i = self.shape.index(state);
        self.q[i][action.as_index()] = value;
    }

    pub fn visits(&self, state: State, action: Action) -> u64 {
        self.visits[self.shape.index(state)][action.as_index()]
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().map(|v| v[0] + v[1]).sum()
    }

    /// Q pair with the infeasible entry masked to `+inf`.
    fn masked(&self, state: State) -> [f64; 2] {
        let q = self.q[self.shape.index(state)];
        if state.battery == 0 {
            [q[0], f64::INFINITY]
        } else {
            q
        }
    }

    /// `min_a Q(s, a)` over the feasible actions at `s`.
    pub fn min_q(&self, state: State) -> f64 {
        let q = self.masked(state);
        q[0].min(q[1])
    }

    pub fn greedy(&self, state: State) -> Action {
        greedy_action(self.masked(state))
    }
}

/// Epsilon-greedy choice: uniform over feasible actions with probability
/// `epsilon`, otherwise the feasible argmin (ties to idle).
pub fn select_action<R: Rng + ?Sized>(qt: &QTable, state: State, epsilon: f64, rng: &mut R) -> Action {
    let actions = feasible_actions(state);
    if actions.len() == 1 {
        return actions[0];
    }
    if rng.gen::<f64>() < epsilon {
        actions[rng.gen_range(0..actions.len())]
    } else {
        qt.greedy(state)
    }
}

/// `cost - lambda_hat + min_a' Q(s', a') - Q(s, a)`.
pub fn td_error(qt: &QTable, state: State, action: Action, cost: f64, next: State) -> f64 {
    cost - qt.lambda_hat + qt.min_q(next) - qt.q(state, action)
}

/// `Q(s, a) += alpha * delta` and bumps the visit count.
pub fn q_update(qt: &mut QTable, state: State, action: Action, delta: f64, alpha: f64) {
    let i = qt.shape.index(state);
    qt.visits[i][action.as_index()] += 1;
    qt.q[i][action.as_index()] += alpha * delta;
}

/// `lambda_hat += gamma * delta`, skipped when gated and away from the
/// reference state.
pub fn avg_cost_update(qt: &mut QTable, delta: f64, gamma: f64, mode: LambdaUpdate, at_ref: bool) {
    if mode == LambdaUpdate::EveryStep || at_ref {
        qt.lambda_hat += gamma * delta;
    }
}

/// Per-state feasible argmin, ties to idle.
pub fn extract_policy(qt: &QTable) -> Policy {
    Policy::from_fn(qt.shape, |s| qt.greedy(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QLearningConfig {
    pub episodes: usize,
    pub horizon: u64,
    pub alpha: LearningSchedule,
    pub gamma: LearningSchedule,
    pub exploration: ExplorationSchedule,
    pub lambda_update: LambdaUpdate,
    pub ref_state: State,
    pub seed: u64,
    /// Per-episode Monte Carlo check of the extracted policy; `None` skips it.
    pub curve_mc: Option<McSettings>,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            horizon: 2000,
            alpha: LearningSchedule::VisitPower { omega: 0.55 },
            gamma: LearningSchedule::VisitPower { omega: 0.6 },
            exploration: ExplorationSchedule {
                decay: EpsilonDecay::InverseSqrt { eps0: 1.0 },
                floor: 0.1,
            },
            lambda_update: LambdaUpdate::EveryStep,
            ref_state: State::new(0, 0),
            seed: 0,
            curve_mc: None,
        }
    }
}

impl QLearningConfig {
    pub fn validate(&self) -> Result<()> {
        self.alpha.validate()?;
        self.gamma.validate()?;
        self.exploration.validate()
    }
}

/// Tabular learner with its own exploration generator.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub table: QTable,
    config: QLearningConfig,
    rng: ChaCha8Rng,
    steps: u64,
}

pub(crate) const STREAM_LEARNER_ENV: u64 = 1 << 41;
pub(crate) const STREAM_LEARNER_AGENT: u64 = (1 << 41) + 1;

impl QLearner {
    pub fn new(shape: GridShape, config: QLearningConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            table: QTable::new(shape, config.ref_state)?,
            rng: stream_rng(config.seed, STREAM_LEARNER_AGENT),
            config,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One interaction: choose, act, and apply both updates. Returns the cost.
    pub fn step<E: Interact>(&mut self, env: &mut E, epsilon: f64) -> Result<f64> {
        let state = env.current();
        let action = select_action(&self.table, state, epsilon, &mut self.rng);
        let (cost, next) = env.act(action)?;
        let delta = td_error(&self.table, state, action, cost, next);
        let visits = self.table.visits(state, action) + 1;
        let alpha = self.config.alpha.rate(self.steps, visits);
        let gamma = self.config.gamma.rate(self.steps, visits);
        let at_ref = state == self.table.ref_state;
        q_update(&mut self.table, state, action, delta, alpha);
        avg_cost_update(&mut self.table, delta, gamma, self.config.lambda_update, at_ref);
        self.steps += 1;
        Ok(cost)
    }

    /// Runs episode `k` from a uniformly drawn start state and returns the
    /// mean cost incurred.
    pub fn run_episode<E: Interact>(&mut self, env: &mut E, episode: u64) -> Result<f64> {
        let shape = env.shape();
        let start = shape.state(self.rng.gen_range(0..shape.num_states()));
        env.reset(start)?;
        let epsilon = self.config.exploration.epsilon(episode);
        let mut total = 0.0;
        for _ in 0..self.config.horizon {
            total += self.step(env, epsilon)?;
        }
        Ok(total / self.config.horizon.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurvePoint {
    /// 1-based count of completed episodes.
    pub episode: usize,
    pub lambda_hat: f64,
    pub exact_avg_vaoi: f64,
    pub mc_avg_vaoi: Option<f64>,
    /// Exploration probability used during this episode.
    pub epsilon: f64,
    /// Mean cost the learner incurred while exploring in this episode.
    pub episode_mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QLearningRun {
    pub curve: Vec<LearningCurvePoint>,
    pub table: QTable,
    pub policy: Policy,
    pub steps: u64,
}

/// Trains against the true environment; the true parameters are used only
/// to build the environment and to evaluate extracted policies.
pub fn run_q_learning(true_params: &SystemParams, config: &QLearningConfig) -> Result<QLearningRun> {
    let truth = Kernel::new(true_params)?;
    let mut env = EpisodicEnv::new(Environment::new(*true_params, config.seed, STREAM_LEARNER_ENV)?);
    let mut learner = QLearner::new(true_params.shape(), *config)?;
    let mut curve = Vec::with_capacity(config.episodes);
    for k in 0..config.episodes {
        let episode_mean_cost = learner.run_episode(&mut env, k as u64)?;
        let policy = extract_policy(&learner.table);
        let exact = evaluate_chain(&truth, &policy, State::new(0, 0))?.average_vaoi;
        let mc = match &config.curve_mc {
            Some(mc) => Some(
                monte_carlo_eval(
                    true_params,
                    &policy,
                    &McSettings {
                        seed: derive_seed(mc.seed, k as u64),
                        ..*mc
                    },
                )?
                .mean_vaoi,
            ),
            None => None,
        };
        curve.push(LearningCurvePoint {
            episode: k + 1,
            lambda_hat: learner.table.lambda_hat,
            exact_avg_vaoi: exact,
            mc_avg_vaoi: mc,
            epsilon: config.exploration.epsilon(k as u64),
            episode_mean_cost,
        });
    }
    let policy = extract_policy(&learner.table);
    Ok(QLearningRun {
        curve,
        steps: learner.steps,
        policy,
        table: learner.table,
    })
}

/// Means over consecutive non-overlapping windows of `window` points.
pub fn smoothed_curve(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks(window.max(1))
        .filter(|c| c.len() == window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// `episode,lambda_hat,exact_avg_vaoi,mc_avg_vaoi,epsilon`.
pub fn write_learning_curve_csv<W: Write>(run: &QLearningRun, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["episode", "lambda_hat", "exact_avg_vaoi", "mc_avg_vaoi", "epsilon"])?;
    for p in &run.curve {
        w.write_record([
            p.episode.to_string(),
            p.lambda_hat.to_string(),
            p.exact_avg_vaoi.to_string(),
            p.mc_avg_vaoi.map(|v| v.to_string()).unwrap_or_default(),
            p.epsilon.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> GridShape {
        GridShape {
            delta_max: 10,
            battery_capacity: 10,
        }
    }

    fn table() -> QTable {
        QTable::new(shape(), State::new(0, 0)).unwrap()
    }

    #[test]
    fn exploitation_picks_lower_q() {
        let mut qt = table();
        let s = State::new(3, 2);
        qt.set_q(s, Action::Idle, 1.0);
        qt.set_q(s, Action::Transmit, 0.2);
        let mut rng = stream_rng(1, 0);
        assert_eq!(select_action(&qt, s, 0.0, &mut rng), Action::Transmit);
    }

    #[test]
    fn empty_battery_always_idles() {
        let mut qt = table();
        let s = State::new(3, 0);
        qt.set_q(s, Action::Transmit, -100.0);
        let mut rng = stream_rng(1, 0);
        for eps in [0.0, 0.5, 1.0] {
            for _ in 0..100 {
                assert_eq!(select_action(&qt, s, eps, &mut rng), Action::Idle);
            }
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let qt = table();
        let mut rng = stream_rng(5, 0);
        let n = 10_000;
        let tx = (0..n)
            .filter(|_| select_action(&qt, State::new(1, 1), 1.0, &mut rng) == Action::Transmit)
            .count() as f64;
        // binomial(n, 1/2): sigma = sqrt(n)/2 = 50
        assert!((tx - n as f64 / 2.0).abs() <= 3.0 * 50.0, "{tx}");
    }

    #[test]
    fn td_error_examples() {
        let mut qt = table();
        let (s, s2) = (State::new(2, 2), State::new(3, 1));
        assert_eq!(td_error(&qt, s, Action::Idle, 2.0, s2), 2.0);

        qt.set_q(s, Action::Transmit, 5.0);
        qt.set_q(s2, Action::Idle, 3.0);
        qt.set_q(s2, Action::Transmit, 4.0);
        qt.lambda_hat = 1.0;
        assert_eq!(td_error(&qt, s, Action::Transmit, 2.0, s2), -1.0);

        // b = 0 successor: the transmit entry is not a candidate
        let empty = State::new(3, 0);
        qt.set_q(empty, Action::Idle, 2.0);
        qt.set_q(empty, Action::Transmit, -50.0);
        assert_eq!(qt.min_q(empty), 2.0);
    }

    #[test]
    fn q_update_examples() {
        let mut qt = table();
        let s = State::new(1, 1);
        q_update(&mut qt, s, Action::Idle, 2.0, 0.5);
        assert_eq!(qt.q(s, Action::Idle), 1.0);
        assert_eq!(qt.visits(s, Action::Idle), 1);

        let before = qt.clone();
        q_update(&mut qt, s, Action::Idle, 0.0, 0.5);
        assert_eq!(qt.q(s, Action::Idle), before.q(s, Action::Idle));
        assert_eq!(qt.visits(s, Action::Idle), 2);
        assert_eq!(qt.total_visits(), 2);
    }

    #[test]
    fn visit_power_rates() {
        let sched = LearningSchedule::VisitPower { omega: 0.55 };
        assert_eq!(sched.rate(0, 1), 1.0);
        assert!((sched.rate(1, 2) - 2f64.powf(-0.55)).abs() < 1e-15);
        assert_eq!(LearningSchedule::Harmonic.rate(3, 1), 0.25);
        assert!(sched.is_admissible());
        assert!(LearningSchedule::Harmonic.is_admissible());
        assert!(LearningSchedule::VisitPower { omega: 0.5 }.validate().is_err());
        assert!(LearningSchedule::VisitPower { omega: 1.1 }.validate().is_err());
    }

    #[test]
    fn lambda_update_modes() {
        let mut qt = table();
        avg_cost_update(&mut qt, 2.0, 0.1, LambdaUpdate::EveryStep, false);
        assert!((qt.lambda_hat - 0.2).abs() < 1e-15);
        avg_cost_update(&mut qt, 2.0, 0.1, LambdaUpdate::RefGated, false);
        assert!((qt.lambda_hat - 0.2).abs() < 1e-15);
        avg_cost_update(&mut qt, 2.0, 0.1, LambdaUpdate::RefGated, true);
        assert!((qt.lambda_hat - 0.4).abs() < 1e-15);
    }

    #[test]
    fn default_exploration_schedule() {
        let sched = QLearningConfig::default().exploration;
        assert_eq!(sched.epsilon(0), 1.0);
        assert_eq!(sched.epsilon(3), 0.5);
        assert_eq!(sched.epsilon(99), 0.1);
        assert_eq!(sched.epsilon(10_000), 0.1);
    }

    #[test]
    fn untrained_table_extracts_all_idle() {
        let policy = extract_policy(&table());
        assert_eq!(policy, Policy::all_idle(shape()));
    }

    #[test]
    fn zero_episodes_gives_all_idle() {
        let params = SystemParams::default();
        let run = run_q_learning(
            &params,
            &QLearningConfig {
                episodes: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(run.curve.is_empty());
        assert_eq!(run.policy, Policy::all_idle(params.shape()));
    }

    #[test]
    fn lambda_mode_parsing() {
        assert_eq!("every-step".parse::<LambdaUpdate>().unwrap(), LambdaUpdate::EveryStep);
        assert_eq!("ref-gated".parse::<LambdaUpdate>().unwrap(), LambdaUpdate::RefGated);
        assert!("never".parse::<LambdaUpdate>().is_err());
    }
}
