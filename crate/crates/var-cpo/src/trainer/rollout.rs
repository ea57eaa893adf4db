//! Batch rollout collection with deterministic seeding.
//!
//! A pool of workers (each owning one environment instance) splits the
//! per-iteration step budget, collects whole episodes, and concatenates them
//! in worker order. Every random stream is derived from the master seed with
//! the iteration, worker, and episode indices mixed in, so a fixed worker
//! count reproduces batches bit for bit — including under the parallel
//! executor, which preserves worker order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::approx::{log_prob, sample_action, Approximator};
use crate::env::{augment, Environment};
use crate::estimation::{RolloutBatch, StepRecord, Trajectory};
use crate::exec;
use crate::risk::{augmented_cost, ConstraintSpec};
use crate::trainer::config::derive_seed;
use crate::Result;

/// Which scalar the cost stream carries.
#[derive(Debug, Clone, Copy)]
pub enum CostStream {
    /// The environment's cost as-is (the risk-constrained algorithm and the
    /// unconstrained baseline).
    Raw,
    /// A once-per-episode exceedance indicator: 1 on the step where the
    /// accumulated discounted cost first reaches `rho`, 0 elsewhere. The
    /// expected-cost baseline constrains its mean, i.e. the violation
    /// probability.
    Exceedance {
        /// Threshold the accumulated cost is compared against.
        rho: f64,
    },
}

/// Applies the exceedance transform for one step. `y_next` is the
/// accumulated discounted cost after the step.
fn exceedance_cost(y_next: f64, rho: f64, already_exceeded: &mut bool) -> f64 {
    if !*already_exceeded && y_next >= rho {
        *already_exceeded = true;
        1.0
    } else {
        0.0
    }
}

struct WorkerSlot {
    env: Box<dyn Environment>,
    index: u64,
}

/// A deterministic rollout pool.
pub struct RolloutWorkers {
    slots: Vec<WorkerSlot>,
    y_scale: f64,
    gamma_c: f64,
    cost_stream: CostStream,
    /// `Some` when the optimizer consumes augmented costs (the
    /// tail-risk-constrained modes); `None` leaves them at zero.
    aug_spec: Option<ConstraintSpec>,
}

impl RolloutWorkers {
    /// Builds a pool of `count` workers from an environment factory.
    pub fn new(
        count: usize,
        build_env: impl Fn() -> Result<Box<dyn Environment>>,
        y_scale: f64,
        cost_stream: CostStream,
        aug_spec: Option<ConstraintSpec>,
    ) -> Result<Self> {
        let mut slots = Vec::with_capacity(count);
        for index in 0..count as u64 {
            let env = build_env()?;
            slots.push(WorkerSlot { env, index });
        }
        let gamma_c = slots
            .first()
            .map(|s| s.env.spec().cost_discount)
            .unwrap_or(1.0);
        Ok(RolloutWorkers { slots, y_scale, gamma_c, cost_stream, aug_spec })
    }

    /// Number of workers.
    pub fn worker_count(&self) -> usize {
        self.slots.len()
    }

    /// Collects at least `batch_size` environment steps of whole episodes.
    /// The step budget is split evenly across workers (remainder to the
    /// first workers); each worker finishes the episode it is in, so the
    /// total may overshoot by up to one episode per worker.
    pub fn collect(
        &mut self,
        policy: &Approximator,
        batch_size: usize,
        seed: u64,
        iteration: u64,
    ) -> Result<RolloutBatch> {
        let k = self.slots.len();
        let base = batch_size / k;
        let rem = batch_size % k;
        let y_scale = self.y_scale;
        let gamma_c = self.gamma_c;
        let cost_stream = self.cost_stream;
        let aug_spec = self.aug_spec;

        let per_worker: Vec<Result<Vec<Trajectory>>> = exec::map_mut(&mut self.slots, |slot| {
            let quota = base + usize::from((slot.index as usize) < rem);
            collect_worker(
                slot, policy, quota, seed, iteration, y_scale, gamma_c, cost_stream,
                aug_spec.as_ref(),
            )
        });

        let mut trajectories = Vec::new();
        for result in per_worker {
            trajectories.extend(result?);
        }
        Ok(RolloutBatch { trajectories })
    }
}

#[allow(clippy::too_many_arguments)]
fn collect_worker(
    slot: &mut WorkerSlot,
    policy: &Approximator,
    quota: usize,
    seed: u64,
    iteration: u64,
    y_scale: f64,
    gamma_c: f64,
    cost_stream: CostStream,
    aug_spec: Option<&ConstraintSpec>,
) -> Result<Vec<Trajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, iteration, slot.index]));
    let mut trajectories = Vec::new();
    let mut steps_done = 0usize;
    let mut episode = 0u64;
    while steps_done < quota {
        let reset_seed = derive_seed(&[seed, iteration, slot.index, episode]);
        let mut state = slot.env.reset(reset_seed);
        let mut traj = Trajectory::new();
        let mut exceeded = false;
        loop {
            let features = state.features(y_scale);
            let dist = policy.forward_policy(&features)?;
            let action = sample_action(&dist, &mut rng);
            let log_p = log_prob(&dist, &action);
            let outcome = slot.env.step(&action)?;

            let aug_cost = match aug_spec {
                Some(spec) => augmented_cost(outcome.cost, state.y, state.discount, spec),
                None => 0.0,
            };
            let y_next = state.y + state.discount * outcome.cost;
            let cost = match cost_stream {
                CostStream::Raw => outcome.cost,
                CostStream::Exceedance { rho } => exceedance_cost(y_next, rho, &mut exceeded),
            };
            traj.steps.push(StepRecord {
                features,
                action,
                log_prob: log_p,
                reward: outcome.reward,
                cost,
                aug_cost,
                cost_weight: state.discount,
                cost_from_ice: outcome.cost_from_ice,
            });
            traj.reward_total += outcome.reward;

            let done = outcome.terminated || outcome.truncated;
            let terminated = outcome.terminated;
            state = augment(&outcome, &state, gamma_c);
            if done {
                traj.terminated = terminated;
                traj.truncated = !terminated;
                traj.raw_cost_return = state.y;
                if traj.truncated {
                    traj.final_features = state.features(y_scale);
                }
                break;
            }
        }
        steps_done += traj.len();
        trajectories.push(traj);
        episode += 1;
    }
    Ok(trajectories)
}
