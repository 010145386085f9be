//! System dynamics: state grid, action feasibility, one-step recursions and
//! the factored transition kernel.
//!
//! States are indexed in (delta major, battery minor) order:
//! `index = delta * (B + 1) + b`. Every table in the crate uses this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five scalars defining the stochastic system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Probability that the source generates a new version in a slot.
    pub p_g: f64,
    /// Probability that a transmission attempt is delivered.
    pub p_s: f64,
    /// Probability that one unit of energy is harvested in a slot.
    pub beta: f64,
    /// Battery capacity in energy units.
    #[serde(rename = "B")]
    pub battery_capacity: u32,
    /// VAoI truncation ceiling.
    pub delta_max: u32,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            p_g: 0.3,
            p_s: 0.8,
            beta: 0.1,
            battery_capacity: 10,
            delta_max: 10,
        }
    }
}

impl SystemParams {
    pub fn new(p_g: f64, p_s: f64, beta: f64, battery_capacity: u32, delta_max: u32) -> Result<Self> {
        let params = Self {
            p_g,
            p_s,
            beta,
            battery_capacity,
            delta_max,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, p) in [("p_g", self.p_g), ("p_s", self.p_s), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("{p} is not a probability in [0, 1]"),
                });
            }
        }
        if self.battery_capacity < 1 {
            return Err(Error::InvalidParameter {
                field: "B",
                reason: "battery capacity must be at least 1".into(),
            });
        }
        if self.delta_max < 1 {
            return Err(Error::InvalidParameter {
                field: "delta_max",
                reason: "truncation ceiling must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            delta_max: self.delta_max,
            battery_capacity: self.battery_capacity,
        }
    }
}

/// Dimensions of the (delta, battery) grid. Carries no probabilities, so a
/// model-free learner can hold one without learning anything about the
/// dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub delta_max: u32,
    #[serde(rename = "B")]
    pub battery_capacity: u32,
}

impl GridShape {
    pub fn num_states(&self) -> usize {
        (self.delta_max as usize + 1) * (self.battery_capacity as usize + 1)
    }

    pub fn contains(&self, state: State) -> bool {
        state.delta <= self.delta_max && state.battery <= self.battery_capacity
    }

    pub fn index(&self, state: State) -> usize {
        debug_assert!(self.contains(state));
        state.delta as usize * (self.battery_capacity as usize + 1) + state.battery as usize
    }

    pub fn checked_index(&self, state: State) -> Result<usize> {
        if self.contains(state) {
            Ok(self.index(state))
        } else {
            Err(Error::StateOutOfRange(state))
        }
    }

    pub fn state(&self, index: usize) -> State {
        let width = self.battery_capacity as usize + 1;
        State::new((index / width) as u32, (index % width) as u32)
    }

    /// All states in canonical order.
    pub fn states(&self) -> impl ExactSizeIterator<Item = State> + '_ {
        (0..self.num_states()).map(|i| self.state(i))
    }
}

/// Enumerates the full grid in canonical (delta major, battery minor) order.
pub fn enumerate_states(params: &SystemParams) -> Vec<State> {
    params.shape().states().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub delta: u32,
    #[serde(rename = "b")]
    pub battery: u32,
}

impl State {
    pub const fn new(delta: u32, battery: u32) -> Self {
        Self { delta, battery }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Action {
    Idle = 0,
    Transmit = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Idle, Action::Transmit];

    pub fn as_index(self) -> usize {
        self as usize
    }

    pub fn as_bit(self) -> u32 {
        self as u32
    }
}

pub fn is_feasible(state: State, action: Action) -> bool {
    action == Action::Idle || state.battery >= 1
}

/// Idle is always admissible; transmit needs at least one unit of energy.
pub fn feasible_actions(state: State) -> &'static [Action] {
    if state.battery == 0 {
        &[Action::Idle]
    } else {
        &Action::ALL
    }
}

/// `min(b + e - a, B)`.
pub fn battery_step(battery: u32, energy: bool, action: Action, capacity: u32) -> Result<u32> {
    if action == Action::Transmit && battery == 0 {
        return Err(Error::InfeasibleAction(State::new(0, battery)));
    }
    Ok((battery + energy as u32 - action.as_bit()).min(capacity))
}

/// VAoI recursion with truncation: resets to `g` on a delivered update,
/// otherwise grows by `g` up to `delta_max`.
pub fn vaoi_step(delta: u32, generated: bool, action: Action, delivered: bool, delta_max: u32) -> u32 {
    let g = generated as u32;
    if action == Action::Transmit && delivered {
        g.min(delta_max)
    } else {
        (delta + g).min(delta_max)
    }
}

/// Explicit successor distribution for one (state, action) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDist {
    entries: Vec<(State, f64)>,
}

impl TransitionDist {
    pub fn entries(&self) -> &[(State, f64)] {
        &self.entries
    }

    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn probability_of(&self, state: State) -> f64 {
        self.entries
            .iter()
            .find(|(s, _)| *s == state)
            .map_or(0.0, |(_, p)| *p)
    }

    /// Marginal over the successor VAoI, sorted by VAoI.
    pub fn delta_marginal(&self) -> Vec<(u32, f64)> {
        marginal(self.entries.iter().map(|(s, p)| (s.delta, *p)))
    }

    /// Marginal over the successor battery level, sorted by level.
    pub fn battery_marginal(&self) -> Vec<(u32, f64)> {
        marginal(self.entries.iter().map(|(s, p)| (s.battery, *p)))
    }

    /// Expected successor VAoI, i.e. the expected one-step cost.
    pub fn expected_delta(&self) -> f64 {
        self.entries.iter().map(|(s, p)| p * s.delta as f64).sum()
    }
}

fn marginal(items: impl Iterator<Item = (u32, f64)>) -> Vec<(u32, f64)> {
    let mut out: Vec<(u32, f64)> = Vec::new();
    for (k, p) in items {
        match out.iter_mut().find(|(key, _)| *key == k) {
            Some((_, acc)) => *acc += p,
            None => out.push((k, p)),
        }
    }
    out.sort_by_key(|(k, _)| *k);
    out
}

fn bernoulli_weight(p: f64, outcome: bool) -> f64 {
    if outcome {
        p
    } else {
        1.0 - p
    }
}

/// Enumerates the eight joint outcomes of (g, h, e) and pushes each through
/// the recursions, merging duplicate successors. Zero-weight outcomes are
/// dropped.
pub fn transition_dist(params: &SystemParams, state: State, action: Action) -> Result<TransitionDist> {
    params.shape().checked_index(state)?;
    if !is_feasible(state, action) {
        return Err(Error::InfeasibleAction(state));
    }
    let mut entries: Vec<(State, f64)> = Vec::with_capacity(8);
    for g in [false, true] {
        for h in [false, true] {
            for e in [false, true] {
                let weight = bernoulli_weight(params.p_g, g)
                    * bernoulli_weight(params.p_s, h)
                    * bernoulli_weight(params.beta, e);
                if weight == 0.0 {
                    continue;
                }
                let next = State::new(
                    vaoi_step(state.delta, g, action, h, params.delta_max),
                    battery_step(state.battery, e, action, params.battery_capacity)?,
                );
                match entries.iter_mut().find(|(s, _)| *s == next) {
                    Some((_, p)) => *p += weight,
                    None => entries.push((next, weight)),
                }
            }
        }
    }
    Ok(TransitionDist { entries })
}

/// Expected cost `C(s, a) = sum_s' P(s'|s,a) * delta'`.
pub fn expected_cost(params: &SystemParams, state: State, action: Action) -> Result<f64> {
    Ok(transition_dist(params, state, action)?.expected_delta())
}
