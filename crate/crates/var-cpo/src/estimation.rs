//! Trajectory post-processing: GAE advantages for the reward, cost, and
//! augmented-cost streams, plus batch moment estimates.
//!
//! The trainer collects raw [`Trajectory`] records, asks the critics for
//! per-step value predictions, and annotates each stream here. Batch moments
//! (mean discounted cost return and mean augmented return) are Monte-Carlo
//! estimates over *completed* episodes only; truncated episodes bootstrap
//! their advantage recursions from the critic but would bias return-level
//! moments, so they are excluded by default.

use crate::env::Action;
use crate::risk::MomentEstimates;
use crate::{Error, Result};

/// The three advantage/return streams every batch carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Environment reward, discounted by `γ`.
    Reward = 0,
    /// Raw constraint cost `c`, discounted by `γ_c`.
    Cost = 1,
    /// Augmented (variance-carrying) cost `c̃`, discounted by `γ_c`.
    AugmentedCost = 2,
}

impl StreamKind {
    /// Short stream label used in diagnostics.
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Reward => "reward",
            StreamKind::Cost => "cost",
            StreamKind::AugmentedCost => "aug",
        }
    }
}

/// Number of streams (array sizing).
pub const STREAM_COUNT: usize = 3;

/// One environment transition as seen by the learner.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Augmented-state featurization fed to every head.
    pub features: Vec<f64>,
    /// Action taken.
    pub action: Action,
    /// Behavior-policy log-probability of `action`.
    pub log_prob: f64,
    /// Reward `r_t`.
    pub reward: f64,
    /// Constraint cost `c_t` on the learning stream.
    pub cost: f64,
    /// Augmented cost `c̃_t` (already includes the discount weighting of its
    /// definition; see the risk module).
    pub aug_cost: f64,
    /// `γ_c^t` at this step — the weight the step carries in episode-level
    /// cost returns and in constraint-gradient assembly.
    pub cost_weight: f64,
    /// Whether the step's cost came from an ice tile (gridworld diagnostics;
    /// false elsewhere).
    pub cost_from_ice: bool,
}

/// Per-stream annotations attached to a trajectory after GAE.
#[derive(Debug, Clone, Default)]
pub struct StreamAnnotations {
    /// Critic predictions per step.
    pub values: Vec<f64>,
    /// GAE advantages per step.
    pub advantages: Vec<f64>,
    /// Regression targets (`advantage + value`) per step.
    pub returns: Vec<f64>,
}

/// One episode (complete or truncated) with its annotations.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Transition records in time order.
    pub steps: Vec<StepRecord>,
    /// Episode ended in a terminal state.
    pub terminated: bool,
    /// Episode was cut off at the step limit.
    pub truncated: bool,
    /// `Σ_t γ_c^t · c_raw,t` where `c_raw` is the *environment* cost, even
    /// when the learning stream is transformed (metrics and quantiles).
    pub raw_cost_return: f64,
    /// Undiscounted reward total.
    pub reward_total: f64,
    /// Featurization of the state after the last step; critics bootstrap
    /// truncated episodes from it. Empty for terminated episodes.
    pub final_features: Vec<f64>,
    /// Annotations, indexed by [`StreamKind`].
    pub streams: [StreamAnnotations; STREAM_COUNT],
}

impl Trajectory {
    /// Empty trajectory shell; the rollout worker pushes steps into it.
    pub fn new() -> Self {
        Trajectory {
            steps: Vec::new(),
            terminated: false,
            truncated: false,
            raw_cost_return: 0.0,
            reward_total: 0.0,
            final_features: Vec::new(),
            streams: Default::default(),
        }
    }

    /// Number of steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    /// Whether the trajectory holds no steps.
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `C(τ) = Σ_t γ_c^t c_t` on the learning stream.
    pub fn discounted_cost_return(&self) -> f64 {
        self.steps.iter().map(|s| s.cost_weight * s.cost).sum()
    }

    /// `Σ_t γ_c^t c̃_t` — the augmented return whose batch mean estimates
    /// the squared-cost surrogate.
    pub fn augmented_return(&self) -> f64 {
        self.steps.iter().map(|s| s.cost_weight * s.aug_cost).sum()
    }

    /// Whether any step's cost came from ice.
    pub fn visited_ice(&self) -> bool {
        self.steps.iter().any(|s| s.cost_from_ice)
    }
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

/// A batch of trajectories collected under one policy.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    /// Episodes in deterministic collection order.
    pub trajectories: Vec<Trajectory>,
}

impl RolloutBatch {
    /// Total environment steps in the batch.
    pub fn step_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Number of episodes that reached a terminal state.
    pub fn completed_count(&self) -> usize {
        self.trajectories.iter().filter(|t| t.terminated).count()
    }

    /// Iterator over completed episodes.
    pub fn completed(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(|t| t.terminated)
    }

    /// All step features in collection order (for KL batches and FVPs).
    pub fn all_features(&self) -> Vec<Vec<f64>> {
        self.trajectories
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.features.clone()))
            .collect()
    }
}

/// GAE hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct GaeConfig {
    /// Bias/variance trade-off `λ ∈ [0, 1]`.
    pub lambda: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig { lambda: 0.95 }
    }
}

impl GaeConfig {
    /// Validates `λ ∈ [0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("gae lambda {} outside [0,1]", self.lambda)));
        }
        Ok(())
    }
}

/// Standard GAE recursion. `bootstrap` is the value of the state after the
/// last step: the critic's prediction for truncated episodes, `0` for
/// terminal ones.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len(), "reward/value arrays must align");
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    advantages
}

/// Computes and stores advantages plus regression targets for one stream of
/// one trajectory. `values` must align with the steps; `bootstrap` follows
/// the [`compute_gae`] convention.
pub fn annotate_stream(
    traj: &mut Trajectory,
    stream: StreamKind,
    values: Vec<f64>,
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) {
    assert_eq!(values.len(), traj.len(), "value predictions must align with steps");
    let signal: Vec<f64> = match stream {
        StreamKind::Reward => traj.steps.iter().map(|s| s.reward).collect(),
        StreamKind::Cost => traj.steps.iter().map(|s| s.cost).collect(),
        StreamKind::AugmentedCost => traj.steps.iter().map(|s| s.aug_cost).collect(),
    };
    let bootstrap = if traj.terminated { 0.0 } else { bootstrap };
    let advantages = compute_gae(&signal, &values, bootstrap, gamma, lambda);
    let returns = advantages.iter().zip(values.iter()).map(|(a, v)| a + v).collect();
    traj.streams[stream as usize] =
        StreamAnnotations { values, advantages, returns };
}

/// Monte-Carlo moment estimates over completed episodes: `μ` is the mean
/// discounted cost return, `j_tilde` the mean augmented return. Errors when
/// the batch has no completed episode — partial episodes would bias
/// return-level moments.
pub fn estimate_moments(batch: &RolloutBatch) -> Result<MomentEstimates> {
    let count = batch.completed_count();
    if count == 0 {
        return Err(Error::Estimation(
            "no completed episodes in batch; cannot form return-level moments".into(),
        ));
    }
    let mut mu = 0.0;
    let mut j_tilde = 0.0;
    for traj in batch.completed() {
        mu += traj.discounted_cost_return();
        j_tilde += traj.augmented_return();
    }
    Ok(MomentEstimates {
        mu: mu / count as f64,
        j_tilde: j_tilde / count as f64,
        sample_count: count,
    })
}

/// Fallback moments that include truncated episodes. Only the trainer uses
/// this, when a batch finishes zero episodes (e.g. an early policy that
/// never reaches a terminal state); the resulting moments under-count tail
/// costs and are flagged upstream.
pub fn estimate_moments_with_truncated(batch: &RolloutBatch) -> Result<MomentEstimates> {
    let count = batch.trajectories.len();
    if count == 0 {
        return Err(Error::Estimation("empty batch".into()));
    }
    let mut mu = 0.0;
    let mut j_tilde = 0.0;
    for traj in &batch.trajectories {
        mu += traj.discounted_cost_return();
        j_tilde += traj.augmented_return();
    }
    Ok(MomentEstimates {
        mu: mu / count as f64,
        j_tilde: j_tilde / count as f64,
        sample_count: count,
    })
}

/// Per-batch advantage normalization. Reward advantages are standardized to
/// zero mean and unit variance; cost-stream advantages pass through
/// unchanged so their return-level scale enters the constraint gradient and
/// offset consistently.
pub fn advantage_normalize(advantages: &mut [f64], stream: StreamKind) {
    if stream != StreamKind::Reward || advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        for a in advantages.iter_mut() {
            *a = 0.0;
        }
        return;
    }
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}
