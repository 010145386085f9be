//! Deterministic stationary policies over the full state grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{is_feasible, Action, GridShape, State};

/// One action per canonical state index. Every state with an empty battery
/// holds `Idle`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    shape: GridShape,
    actions: Vec<Action>,
}

impl Policy {
    /// Builds a policy from a full action table, rejecting tables that
    /// transmit on an empty battery.
    pub fn new(shape: GridShape, actions: Vec<Action>) -> Result<Self> {
        if actions.len() != shape.num_states() {
            return Err(Error::PolicyShape {
                expected: shape.num_states(),
                got: actions.len(),
            });
        }
        for (i, &a) in actions.iter().enumerate() {
            let s = shape.state(i);
            if !is_feasible(s, a) {
                return Err(Error::InfeasibleAction(s));
            }
        }
        Ok(Self { shape, actions })
    }

    /// Builds a policy from a rule, masking transmit to idle on empty batteries.
    pub fn from_fn(shape: GridShape, mut rule: impl FnMut(State) -> Action) -> Self {
        let actions = shape
            .states()
            .map(|s| {
                let a = rule(s);
                if is_feasible(s, a) {
                    a
                } else {
                    Action::Idle
                }
            })
            .collect();
        Self { shape, actions }
    }

    pub fn all_idle(shape: GridShape) -> Self {
        Self::from_fn(shape, |_| Action::Idle)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn action(&self, state: State) -> Action {
        self.actions[self.shape.index(state)]
    }

    pub fn action_at(&self, index: usize) -> Action {
        self.actions[index]
    }

    pub fn is_feasible(&self) -> bool {
        self.actions
            .iter()
            .enumerate()
            .all(|(i, &a)| is_feasible(self.shape.state(i), a))
    }

    /// Writes the policy as a grid: one row per VAoI value, one column per
    /// battery level, cells 0 (idle) or 1 (transmit).
    pub fn write_csv_grid<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["delta".to_string()];
        header.extend((0..=self.shape.battery_capacity).map(|b| format!("b{b}")));
        w.write_record(&header)?;
        for delta in 0..=self.shape.delta_max {
            let mut row = vec![delta.to_string()];
            row.extend(
                (0..=self.shape.battery_capacity)
                    .map(|b| self.action(State::new(delta, b)).as_bit().to_string()),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_grid(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv_grid(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// The myopic baseline: transmit whenever there is energy.
pub fn greedy_policy(shape: GridShape) -> Policy {
    Policy::from_fn(shape, |_| Action::Transmit)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatteryThreshold {
    pub battery: u32,
    /// Smallest VAoI at which the policy transmits, `None` if it never does.
    pub threshold: Option<u32>,
    /// The transmit set at this battery level is `{delta >= threshold}`.
    pub is_upset: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThresholdProfile {
    pub levels: Vec<BatteryThreshold>,
}

impl ThresholdProfile {
    pub fn holds(&self) -> bool {
        self.levels.iter().all(|l| l.is_upset)
    }

    pub fn violations(&self) -> impl Iterator<Item = &BatteryThreshold> {
        self.levels.iter().filter(|l| !l.is_upset)
    }
}

pub fn threshold_profile(policy: &Policy) -> ThresholdProfile {
    let shape = policy.shape();
    let levels = (0..=shape.battery_capacity)
        .map(|battery| {
            let column: Vec<Action> = (0..=shape.delta_max)
                .map(|delta| policy.action(State::new(delta, battery)))
                .collect();
            let threshold = column
                .iter()
                .position(|&a| a == Action::Transmit)
                .map(|d| d as u32);
            let is_upset = match threshold {
                Some(t) => column[t as usize..].iter().all(|&a| a == Action::Transmit),
                None => true,
            };
            BatteryThreshold {
                battery,
                threshold,
                is_upset,
            }
        })
        .collect();
    ThresholdProfile { levels }
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

    #[test]
    fn greedy_actions() {
        let g = greedy_policy(shape());
        assert_eq!(g.action(State::new(0, 1)), Action::Transmit);
        assert_eq!(g.action(State::new(7, 0)), Action::Idle);
        assert!(g.is_feasible());
    }

    #[test]
    fn new_rejects_infeasible_tables() {
        let s = GridShape {
            delta_max: 1,
            battery_capacity: 1,
        };
        let bad = vec![Action::Transmit, Action::Idle, Action::Idle, Action::Idle];
        assert!(matches!(Policy::new(s, bad), Err(Error::InfeasibleAction(_))));
        assert!(matches!(
            Policy::new(s, vec![Action::Idle]),
            Err(Error::PolicyShape { .. })
        ));
    }

    #[test]
    fn threshold_of_greedy_and_idle() {
        let prof = threshold_profile(&greedy_policy(shape()));
        assert_eq!(prof.levels[0].threshold, None);
        for level in &prof.levels[1..] {
            assert_eq!(level.threshold, Some(0));
        }
        assert!(prof.holds());

        let idle = threshold_profile(&Policy::all_idle(shape()));
        assert!(idle.levels.iter().all(|l| l.threshold.is_none()));
        assert!(idle.holds());
    }

    #[test]
    fn threshold_detects_non_upset() {
        let p = Policy::from_fn(shape(), |s| {
            if s.battery == 3 && s.delta == 4 {
                Action::Transmit
            } else {
                Action::Idle
            }
        });
        let prof = threshold_profile(&p);
        assert!(!prof.holds());
        let v: Vec<_> = prof.violations().collect();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].battery, 3);
        assert_eq!(v[0].threshold, Some(4));
    }

    #[test]
    fn csv_grid_layout() {
        let s = GridShape {
            delta_max: 1,
            battery_capacity: 2,
        };
        let text = greedy_policy(s).to_csv_grid();
        assert_eq!(text, "delta,b0,b1,b2\n0,0,1,1\n1,0,1,1\n");
    }
}
