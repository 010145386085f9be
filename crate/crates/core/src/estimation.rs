//! Online maximum-likelihood tracking of the generation and channel
//! probabilities, and the estimate-then-solve loop built on it.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::evaluate_chain;
use crate::error::{Error, Result};
use crate::model::{Action, State, SystemParams};
use crate::policy::Policy;
use crate::sim::{derive_seed, monte_carlo_eval, stream_rng, Environment, McSettings};
use crate::solver::{rvia_solve_kernel, Kernel, RviaSettings};

/// How the channel outcome becomes visible to the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelObservation {
    /// Only transmission attempts reveal `h` (through ACK feedback).
    #[default]
    Attempt,
    /// `h` is revealed every slot, attempted or not.
    Oracle,
}

impl std::str::FromStr for ChannelObservation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attempt" => Ok(Self::Attempt),
            "oracle" => Ok(Self::Oracle),
            other => Err(Error::Config(format!(
                "estimator mode must be `attempt` or `oracle`, got `{other}`"
            ))),
        }
    }
}

/// Sample mean of a 0/1 sequence, kept both as exact counts and through the
/// recursive update `m_t = x / t + (t - 1) / t * m_{t-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BernoulliMean {
    pub observations: u64,
    pub successes: u64,
    recursive: f64,
}

impl BernoulliMean {
    pub fn observe(&mut self, outcome: bool) {
        self.observations += 1;
        self.successes += outcome as u64;
        let t = self.observations as f64;
        self.recursive = (outcome as u8 as f64) / t + (t - 1.0) / t * self.recursive;
    }

    /// Batch maximum-likelihood estimate, `None` before the first observation.
    pub fn mle(&self) -> Option<f64> {
        (self.observations > 0).then(|| self.successes as f64 / self.observations as f64)
    }

    /// The same estimate carried by the recursive form.
    pub fn recursive_mle(&self) -> Option<f64> {
        (self.observations > 0).then_some(self.recursive)
    }

    /// Add-one smoothed estimate `(k + 1) / (n + 2)`, always in (0, 1).
    pub fn smoothed(&self) -> f64 {
        (self.successes as f64 + 1.0) / (self.observations as f64 + 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub generation: BernoulliMean,
    /// Channel observations: attempts in `Attempt` mode, every slot in
    /// `Oracle` mode.
    pub channel: BernoulliMean,
    pub slot_count: u64,
    pub mode: ChannelObservation,
}

impl EstimatorState {
    pub fn new(mode: ChannelObservation) -> Self {
        Self {
            generation: BernoulliMean::default(),
            channel: BernoulliMean::default(),
            slot_count: 0,
            mode,
        }
    }

    pub fn update_generation_estimate(&mut self, generated: bool) {
        self.generation.observe(generated);
    }

    /// `h` is ignored when the mode does not reveal it for this slot.
    pub fn update_channel_estimate(&mut self, attempted: bool, delivered: bool) {
        match self.mode {
            ChannelObservation::Attempt if attempted => self.channel.observe(delivered),
            ChannelObservation::Attempt => {}
            ChannelObservation::Oracle => self.channel.observe(delivered),
        }
    }

    /// Records one slot's observations.
    pub fn observe_slot(&mut self, generated: bool, attempted: bool, delivered: bool) {
        self.slot_count += 1;
        self.update_generation_estimate(generated);
        self.update_channel_estimate(attempted, delivered);
    }

    /// Raw MLE values, `None` where nothing has been observed yet.
    pub fn raw_estimates(&self) -> (Option<f64>, Option<f64>) {
        (self.generation.mle(), self.channel.mle())
    }

    /// Smoothed `(p_g, p_s)` used to build the model that gets solved.
    pub fn smoothed_estimates(&self) -> (f64, f64) {
        (self.generation.smoothed(), self.channel.smoothed())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub episodes: usize,
    pub horizon: u64,
    pub mode: ChannelObservation,
    pub solver: RviaSettings,
    /// Per-episode Monte Carlo check of the current policy; `None` skips it.
    pub curve_mc: Option<McSettings>,
    pub seed: u64,
    /// Estimates used before any data arrives; defaults to (0.5, 0.5).
    pub initial_estimates: Option<(f64, f64)>,
    /// Keep the initial estimates for every episode instead of learning.
    pub freeze_estimates: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            horizon: 2000,
            mode: ChannelObservation::Attempt,
            solver: RviaSettings::default(),
            curve_mc: None,
            seed: 0,
            initial_estimates: None,
            freeze_estimates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationEpisode {
    /// 0 is the policy built before any observation; `k` is the policy
    /// re-solved after episode `k`.
    pub episode: usize,
    pub p_g_hat: f64,
    pub p_s_hat: f64,
    pub raw_p_g: Option<f64>,
    pub raw_p_s: Option<f64>,
    /// Exact long-run VAoI of this episode's policy under the true model.
    pub exact_avg_vaoi: f64,
    pub mc_avg_vaoi: Option<f64>,
    pub solver_iterations: usize,
    #[serde(skip)]
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationRun {
    pub mode: ChannelObservation,
    pub episodes: Vec<EstimationEpisode>,
    pub final_state: EstimatorState,
}

pub(crate) const STREAM_ESTIMATION_ENV: u64 = 1 << 40;
pub(crate) const STREAM_ESTIMATION_START: u64 = (1 << 40) + 1;

/// Runs the estimate-then-solve loop against the true environment. Only
/// `beta`, `B` and `delta_max` of `true_params` are known to the loop; the
/// generation and channel probabilities are touched only by the environment
/// and the evaluators.
pub fn run_estimation_based_mdp(true_params: &SystemParams, config: &EstimationConfig) -> Result<EstimationRun> {
    true_params.validate()?;
    let truth = Kernel::new(true_params)?;
    let mut estimator = EstimatorState::new(config.mode);
    let mut estimates = config.initial_estimates.unwrap_or_else(|| estimator.smoothed_estimates());

    let mut env = Environment::new(*true_params, config.seed, STREAM_ESTIMATION_ENV)?;
    let mut starts = stream_rng(config.seed, STREAM_ESTIMATION_START);
    let shape = true_params.shape();

    let mut episodes: Vec<EstimationEpisode> = Vec::with_capacity(config.episodes + 1);
    for k in 0..=config.episodes {
        if k > 0 {
            let mut state = shape.state(starts.gen_range(0..shape.num_states()));
            let policy = &episodes.last().expect("episode 0 exists").policy;
            for _ in 0..config.horizon {
                let action = policy.action(state);
                let out = env.step(state, action)?;
                estimator.observe_slot(out.generated, action == Action::Transmit, out.delivered);
                state = out.next_state;
            }
            if !config.freeze_estimates {
                estimates = estimator.smoothed_estimates();
            }
        }
        let model = SystemParams {
            p_g: estimates.0,
            p_s: estimates.1,
            ..*true_params
        };
        let solved = rvia_solve_kernel(&Kernel::new(&model)?, &config.solver)?;
        let exact = evaluate_chain(&truth, &solved.policy, State::new(0, 0))?.average_vaoi;
        let mc = match &config.curve_mc {
            Some(mc) => Some(
                monte_carlo_eval(
                    true_params,
                    &solved.policy,
                    &McSettings {
                        seed: derive_seed(mc.seed, k as u64),
                        ..*mc
                    },
                )?
                .mean_vaoi,
            ),
            None => None,
        };
        let (raw_p_g, raw_p_s) = estimator.raw_estimates();
        episodes.push(EstimationEpisode {
            episode: k,
            p_g_hat: estimates.0,
            p_s_hat: estimates.1,
            raw_p_g,
            raw_p_s,
            exact_avg_vaoi: exact,
            mc_avg_vaoi: mc,
            solver_iterations: solved.iterations,
            policy: solved.policy,
        });
    }
    Ok(EstimationRun {
        mode: config.mode,
        episodes,
        final_state: estimator,
    })
}

/// Per-episode curve: `episode,p_g_hat,p_s_hat,exact_avg_vaoi,mc_avg_vaoi,solver_iterations`.
pub fn write_estimation_csv<W: Write>(run: &EstimationRun, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "episode",
        "p_g_hat",
        "p_s_hat",
        "exact_avg_vaoi",
        "mc_avg_vaoi",
        "solver_iterations",
    ])?;
    for e in &run.episodes {
        w.write_record([
            e.episode.to_string(),
            e.p_g_hat.to_string(),
            e.p_s_hat.to_string(),
            e.exact_avg_vaoi.to_string(),
            e.mc_avg_vaoi.map(|v| v.to_string()).unwrap_or_default(),
            e.solver_iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::stream_rng;

    #[test]
    fn generation_mean_examples() {
        let mut est = EstimatorState::new(ChannelObservation::Attempt);
        est.update_generation_estimate(true);
        assert_eq!(est.generation.mle(), Some(1.0));
        for g in [false, true, false] {
            est.update_generation_estimate(g);
        }
        assert_eq!(est.generation.mle(), Some(0.5));
        assert_eq!(est.generation.recursive_mle(), Some(0.5));
    }

    #[test]
    fn attempt_mode_counts_only_attempts() {
        let mut est = EstimatorState::new(ChannelObservation::Attempt);
        assert_eq!(est.raw_estimates().1, None);
        assert_eq!(est.smoothed_estimates(), (0.5, 0.5));
        for h in [true, true, false, true] {
            est.update_channel_estimate(true, h);
            est.update_channel_estimate(false, false);
        }
        assert_eq!(est.channel.observations, 4);
        assert_eq!(est.raw_estimates().1, Some(0.75));
    }

    #[test]
    fn oracle_mode_counts_every_slot() {
        let mut est = EstimatorState::new(ChannelObservation::Oracle);
        est.update_channel_estimate(false, true);
        est.update_channel_estimate(true, false);
        assert_eq!(est.channel.observations, 2);
        assert_eq!(est.raw_estimates().1, Some(0.5));
    }

    #[test]
    fn smoothing_examples() {
        let mut est = EstimatorState::new(ChannelObservation::Attempt);
        for i in 0..8 {
            est.update_generation_estimate(i % 2 == 0);
        }
        for _ in 0..3 {
            est.update_channel_estimate(true, false);
        }
        let (pg, ps) = est.smoothed_estimates();
        assert_eq!(pg, 0.5);
        assert!((ps - 0.2).abs() < 1e-15);
        assert_eq!(est.raw_estimates().1, Some(0.0));
    }

    #[test]
    fn estimates_concentrate() {
        let mut rng = stream_rng(2024, 0);
        let mut est = EstimatorState::new(ChannelObservation::Oracle);
        for _ in 0..100_000 {
            est.update_generation_estimate(rng.gen::<f64>() < 0.3);
        }
        assert!((est.generation.mle().unwrap() - 0.3).abs() < 0.01);
        for _ in 0..2000 {
            est.update_channel_estimate(false, rng.gen::<f64>() < 0.8);
        }
        assert!((est.channel.mle().unwrap() - 0.8).abs() < 0.03);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("attempt".parse::<ChannelObservation>().unwrap(), ChannelObservation::Attempt);
        assert_eq!("oracle".parse::<ChannelObservation>().unwrap(), ChannelObservation::Oracle);
        assert!("sometimes".parse::<ChannelObservation>().is_err());
    }
}
