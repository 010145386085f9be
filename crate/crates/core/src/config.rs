//! Experiment configuration and the run manifest written next to every
//! artifact.
//!
//! Config files are TOML (or JSON when the extension is `.json`):
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [system]
//! p_g = 0.3
//! p_s = 0.8
//! beta = 0.1
//! B = 10
//! delta_max = 10
//! ```
//!
//! Every section is optional and falls back to the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{ChannelObservation, EstimationConfig};
use crate::model::SystemParams;
use crate::qlearning::{ExplorationSchedule, LambdaUpdate, LearningSchedule, QLearningConfig};
use crate::sim::{McSettings, DEFAULT_BURN_IN, DEFAULT_MC_HORIZON, DEFAULT_MC_RUNS};
use crate::solver::RviaSettings;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub runs: usize,
    pub horizon: u64,
    pub burn_in: u64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            runs: DEFAULT_MC_RUNS,
            horizon: DEFAULT_MC_HORIZON,
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

impl EvaluationSettings {
    pub fn mc(&self, seed: u64) -> McSettings {
        McSettings {
            runs: self.runs,
            horizon: self.horizon,
            burn_in: self.burn_in,
            seed,
            ..McSettings::default()
        }
    }
}

/// Monte Carlo settings for the per-episode points of learning curves.
/// `runs = 0` disables them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveEvaluation {
    pub runs: usize,
    pub horizon: u64,
    pub burn_in: u64,
}

impl Default for CurveEvaluation {
    fn default() -> Self {
        Self {
            runs: 20,
            horizon: 2000,
            burn_in: 1000,
        }
    }
}

impl CurveEvaluation {
    fn mc(&self, seed: u64) -> Option<McSettings> {
        (self.runs > 0).then(|| McSettings {
            runs: self.runs,
            horizon: self.horizon,
            burn_in: self.burn_in,
            seed,
            ..McSettings::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSettings {
    pub episodes: usize,
    pub horizon: u64,
    pub alpha: LearningSchedule,
    pub gamma: LearningSchedule,
    pub exploration: ExplorationSchedule,
    pub lambda_update: LambdaUpdate,
    pub ref_state: crate::model::State,
    pub curve: CurveEvaluation,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        let q = QLearningConfig::default();
        Self {
            episodes: q.episodes,
            horizon: q.horizon,
            alpha: q.alpha,
            gamma: q.gamma,
            exploration: q.exploration,
            lambda_update: q.lambda_update,
            ref_state: q.ref_state,
            curve: CurveEvaluation::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSettings {
    pub episodes: usize,
    pub horizon: u64,
    pub mode: ChannelObservation,
    pub curve: CurveEvaluation,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            episodes: 100,
            horizon: 2000,
            mode: ChannelObservation::Attempt,
            curve: CurveEvaluation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemParams,
    pub solver: RviaSettings,
    pub learner: LearnerSettings,
    pub estimation: EstimationSettings,
    pub evaluation: EvaluationSettings,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemParams::default(),
            solver: RviaSettings::default(),
            learner: LearnerSettings::default(),
            estimation: EstimationSettings::default(),
            evaluation: EvaluationSettings::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {reason}"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Field-level validation; every command calls this before running.
    pub fn validate(&self) -> Result<()> {
        self.system.validate().map_err(|e| match e {
            Error::InvalidParameter { field, reason } => invalid(&format!("system.{field}"), reason),
            other => other,
        })?;
        if !(self.solver.tol > 0.0) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        if self.solver.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be at least 1"));
        }
        if !self.system.shape().contains(self.solver.ref_state) {
            return Err(invalid("solver.ref_state", "outside the state grid"));
        }
        if !self.system.shape().contains(self.learner.ref_state) {
            return Err(invalid("learner.ref_state", "outside the state grid"));
        }
        if self.learner.horizon == 0 {
            return Err(invalid("learner.horizon", "must be at least 1"));
        }
        self.learner
            .alpha
            .validate()
            .map_err(|e| invalid("learner.alpha", e))?;
        self.learner
            .gamma
            .validate()
            .map_err(|e| invalid("learner.gamma", e))?;
        self.learner
            .exploration
            .validate()
            .map_err(|e| invalid("learner.exploration", e))?;
        if self.estimation.horizon == 0 {
            return Err(invalid("estimation.horizon", "must be at least 1"));
        }
        if self.evaluation.runs < 2 {
            return Err(invalid("evaluation.runs", "must be at least 2"));
        }
        if self.evaluation.horizon == 0 {
            return Err(invalid("evaluation.horizon", "must be at least 1"));
        }
        for (field, curve) in [
            ("learner.curve", &self.learner.curve),
            ("estimation.curve", &self.estimation.curve),
        ] {
            if curve.runs == 1 {
                return Err(invalid(&format!("{field}.runs"), "must be 0 (disabled) or at least 2"));
            }
            if curve.runs > 0 && curve.horizon == 0 {
                return Err(invalid(&format!("{field}.horizon"), "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn q_learning(&self) -> QLearningConfig {
        QLearningConfig {
            episodes: self.learner.episodes,
            horizon: self.learner.horizon,
            alpha: self.learner.alpha,
            gamma: self.learner.gamma,
            exploration: self.learner.exploration,
            lambda_update: self.learner.lambda_update,
            ref_state: self.learner.ref_state,
            seed: self.seed,
            curve_mc: self.learner.curve.mc(self.seed),
        }
    }

    pub fn estimation(&self) -> EstimationConfig {
        EstimationConfig {
            episodes: self.estimation.episodes,
            horizon: self.estimation.horizon,
            mode: self.estimation.mode,
            solver: self.solver,
            curve_mc: self.estimation.curve.mc(self.seed),
            seed: self.seed,
            initial_estimates: None,
            freeze_estimates: false,
        }
    }

    pub fn monte_carlo(&self) -> McSettings {
        self.evaluation.mc(self.seed)
    }
}

/// Everything needed to re-run a command: the full config plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, wall_time_secs: f64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
            wall_time_secs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.system.p_g, 0.3);
        assert_eq!(cfg.evaluation.runs, 1000);
        assert_eq!(cfg.learner.horizon, 2000);
    }

    #[test]
    fn system_keys_parse() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 5\n[system]\np_g = 0.4\np_s = 0.9\nbeta = 0.2\nB = 4\ndelta_max = 6\n",
        )
        .unwrap();
        assert_eq!(cfg.system, SystemParams::new(0.4, 0.9, 0.2, 4, 6).unwrap());
        assert_eq!(cfg.seed, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[system]\nq = 1\n").is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = ExperimentConfig::default();
        cfg.system.beta = 1.5;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("system.beta"), "{msg}");

        let mut cfg = ExperimentConfig::default();
        cfg.learner.alpha = LearningSchedule::VisitPower { omega: 0.3 };
        assert!(cfg.validate().unwrap_err().to_string().contains("learner.alpha"));

        let mut cfg = ExperimentConfig::default();
        cfg.evaluation.runs = 1;
        assert!(cfg.validate().unwrap_err().to_string().contains("evaluation.runs"));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 123;
        cfg.estimation.mode = ChannelObservation::Oracle;
        cfg.learner.lambda_update = LambdaUpdate::RefGated;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&json).unwrap(), cfg);
    }
}
