//! Constrained-MDP environments and state augmentation.
//!
//! An environment emits a reward and a non-negative cost on every step. The
//! risk machinery never sees environment internals; it works on
//! [`AugmentedState`]s, which extend the raw observation with the running
//! discounted cost `y_t` and the current discount power `γ_c^t` so that the
//! squared cost return can be expressed through local augmented costs.
//!
//! Shipped environments:
//!
//! - [`icy_lake::IcyLake`] — a 4×4 gridworld with a safe-but-costly deep
//!   snow corridor and a cheap-on-average ice corridor carrying rare large
//!   cost spikes; the tabular testbed for tail-risk constraints.
//! - [`battery::Battery`] — a one-dimensional double integrator spending a
//!   battery budget on acceleration; the minimal continuous-action path.

pub mod battery;
pub mod icy_lake;

use crate::{Error, Result};

/// Action-space description.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    /// `n` discrete actions, `n ≥ 2`.
    Categorical(usize),
    /// Axis-aligned box of dimension `dim`; actions outside are clamped by
    /// the environment.
    Box {
        /// Number of action dimensions.
        dim: usize,
        /// Per-dimension lower bound.
        low: f64,
        /// Per-dimension upper bound.
        high: f64,
    },
}

impl ActionSpace {
    /// Number of policy outputs needed for this space (logits or means).
    pub fn policy_output_dim(&self) -> usize {
        match self {
            ActionSpace::Categorical(n) => *n,
            ActionSpace::Box { dim, .. } => *dim,
        }
    }
}

/// A single action, matching the environment's [`ActionSpace`].
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Index into a categorical space.
    Discrete(usize),
    /// Vector for a box space.
    Continuous(Vec<f64>),
}

/// Static description of an environment.
#[derive(Debug, Clone)]
pub struct CmdpSpec {
    /// Length of the raw observation vector.
    pub observation_dim: usize,
    /// Action space.
    pub action_space: ActionSpace,
    /// Reward discount γ.
    pub reward_discount: f64,
    /// Cost discount γ_c (1.0 means undiscounted episodic costs).
    pub cost_discount: f64,
    /// Hard episode-length cap; reaching it truncates.
    pub max_episode_steps: usize,
}

impl CmdpSpec {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reward_discount)
            || !(0.0..=1.0).contains(&self.cost_discount)
        {
            return Err(Error::Env("discounts must lie in [0,1]".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Env("max_episode_steps must be ≥ 1".into()));
        }
        if let ActionSpace::Categorical(n) = self.action_space {
            if n < 2 {
                return Err(Error::Env("categorical action space needs n ≥ 2".into()));
            }
        }
        Ok(())
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Observation after the transition.
    pub next_observation: Vec<f64>,
    /// Reward `r_t`.
    pub reward: f64,
    /// Cost `c_t ≥ 0`.
    pub cost: f64,
    /// Episode ended by the MDP itself (absorbing state reached).
    pub terminated: bool,
    /// Episode cut by the step limit; value bootstrapping applies.
    pub truncated: bool,
    /// Whether the cost of this step was drawn from an ice tile. Metrics
    /// plumbing for the gridworld's visitation diagnostics; always `false`
    /// in other environments.
    pub cost_from_ice: bool,
}

/// Environment observation extended with the cost-accumulator pair.
#[derive(Debug, Clone)]
pub struct AugmentedState {
    /// Raw environment observation.
    pub base_observation: Vec<f64>,
    /// Accumulated discounted cost `y_t = Σ_{i<t} γ_c^i c_i`.
    pub y: f64,
    /// Current discount power `γ_c^t` (1 at episode start).
    pub discount: f64,
}

impl AugmentedState {
    /// Augmented state at episode start: `y = 0`, `discount = 1`.
    pub fn initial(base_observation: Vec<f64>) -> Self {
        AugmentedState { base_observation, y: 0.0, discount: 1.0 }
    }

    /// Network-input featurization: base observation with `y · y_scale` and
    /// the discount appended. `y_scale` is normally `1/ρ`, keeping the
    /// accumulator feature near O(1) for feasible policies.
    pub fn features(&self, y_scale: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.base_observation.len() + 2);
        out.extend_from_slice(&self.base_observation);
        out.push(self.y * y_scale);
        out.push(self.discount);
        out
    }

    /// Featurized input length for an environment with `observation_dim`
    /// raw features.
    pub fn feature_dim(observation_dim: usize) -> usize {
        observation_dim + 2
    }
}

/// Advances the cost accumulators by one step:
/// `y' = y + γ_c^t · c_t`, `discount' = γ_c · discount`.
pub fn augment(outcome: &StepOutcome, prev: &AugmentedState, gamma_c: f64) -> AugmentedState {
    AugmentedState {
        base_observation: outcome.next_observation.clone(),
        y: prev.y + prev.discount * outcome.cost,
        discount: prev.discount * gamma_c,
    }
}

/// A constrained-MDP environment instance.
///
/// Instances are single-owner: one rollout worker drives one instance with
/// its own RNG stream. Determinism contract: equal seeds and equal action
/// sequences produce bit-identical outcomes.
pub trait Environment: Send {
    /// Static environment description.
    fn spec(&self) -> &CmdpSpec;

    /// Starts a new episode, reseeding the environment's RNG, and returns
    /// the initial augmented state (`y = 0`, `discount = 1`).
    fn reset(&mut self, seed: u64) -> AugmentedState;

    /// Advances one step. Stepping a finished episode is a contract
    /// violation and fails with [`Error::Env`].
    fn step(&mut self, action: &Action) -> Result<StepOutcome>;
}
