//! Battery-limited double integrator.
//!
//! The agent accelerates a point mass along a line and is rewarded for its
//! forward velocity each step. Every unit of acceleration spends battery:
//! the step cost is `½‖a‖²`, the battery is decremented by it, and
//! depletion ends the episode. Driving hard is rewarding but burns the
//! budget; the cost return measures total energy spent, so a cost threshold
//! below the capacity constrains how aggressively the policy may accelerate.
//!
//! This is deliberately the smallest environment exercising the
//! diagonal-Gaussian policy path: one action dimension, smooth dynamics,
//! deterministic transitions.

use super::{Action, ActionSpace, AugmentedState, CmdpSpec, Environment, StepOutcome};
use crate::{Error, Result};

/// Battery toy parameters.
#[derive(Debug, Clone)]
pub struct BatteryConfig {
    /// Energy budget; the episode terminates when it is spent.
    pub capacity: f64,
    /// Integration step.
    pub dt: f64,
    /// Reward discount γ.
    pub reward_discount: f64,
    /// Cost discount γ_c.
    pub cost_discount: f64,
    /// Step limit; reaching it truncates.
    pub max_episode_steps: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            capacity: 10.0,
            dt: 0.1,
            reward_discount: 0.99,
            cost_discount: 1.0,
            max_episode_steps: 200,
        }
    }
}

/// The battery environment. Observation: `[position·0.01, velocity,
/// battery/capacity]`; action: acceleration in `[-1, 1]`.
pub struct Battery {
    config: BatteryConfig,
    spec: CmdpSpec,
    position: f64,
    velocity: f64,
    battery: f64,
    steps: usize,
    finished: bool,
}

impl Battery {
    /// Builds the environment, validating parameters.
    pub fn new(config: BatteryConfig) -> Result<Self> {
        if !(config.capacity > 0.0 && config.capacity.is_finite()) {
            return Err(Error::Env(format!("capacity must be > 0, got {}", config.capacity)));
        }
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(Error::Env(format!("dt must be > 0, got {}", config.dt)));
        }
        let spec = CmdpSpec {
            observation_dim: 3,
            action_space: ActionSpace::Box { dim: 1, low: -1.0, high: 1.0 },
            reward_discount: config.reward_discount,
            cost_discount: config.cost_discount,
            max_episode_steps: config.max_episode_steps,
        };
        Ok(Battery {
            spec,
            position: 0.0,
            velocity: 0.0,
            battery: config.capacity,
            steps: 0,
            finished: true,
            config,
        })
    }

    /// Builds the environment with default parameters.
    pub fn default_env() -> Self {
        Battery::new(BatteryConfig::default()).expect("default config is valid")
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.position * 0.01, self.velocity, self.battery / self.config.capacity]
    }
}

impl Environment for Battery {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> AugmentedState {
        self.position = 0.0;
        self.velocity = 0.0;
        self.battery = self.config.capacity;
        self.steps = 0;
        self.finished = false;
        AugmentedState::initial(self.observation())
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::Env("step called on a finished Battery episode".into()));
        }
        let raw = match action {
            Action::Continuous(a) if a.len() == 1 => a[0],
            other => {
                return Err(Error::Env(format!("invalid Battery action {other:?}")));
            }
        };
        if !raw.is_finite() {
            return Err(Error::Env("non-finite Battery action".into()));
        }
        let a = raw.clamp(-1.0, 1.0);
        let cost = 0.5 * a * a;
        self.battery -= cost;
        let terminated = self.battery <= 0.0;
        if terminated {
            self.battery = 0.0;
        }
        self.velocity += a * self.config.dt;
        self.position += self.velocity * self.config.dt;
        self.steps += 1;
        let truncated = !terminated && self.steps >= self.config.max_episode_steps;
        self.finished = terminated || truncated;
        Ok(StepOutcome {
            next_observation: self.observation(),
            reward: self.velocity,
            cost,
            terminated,
            truncated,
            cost_from_ice: false,
        })
    }
}
