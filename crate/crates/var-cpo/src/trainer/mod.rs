//! End-to-end training orchestration.
//!
//! Each iteration runs the full update cycle: collect a batch of whole
//! episodes, fit advantages for the reward/cost/augmented-cost streams,
//! estimate the constraint moments, resolve the constraint mode (switching
//! into recovery whenever the mean cost breaches the threshold), assemble
//! the trust-region step problem, line-search the proposed direction against
//! importance-sampled surrogates, and finally regress the three value heads.
//! One metrics row is appended per iteration; checkpoints are written on a
//! fixed cadence and at the end.
//!
//! Everything is deterministic for a fixed configuration, seed, and worker
//! count: random streams are derived from the master seed, and parallel
//! reductions run in fixed order.

pub mod config;
pub mod metrics;
pub mod rollout;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::approx::{checkpoint, sample_action, Approximator, HeadKind};
use crate::env::{augment, ActionSpace, AugmentedState, Environment};
use crate::estimation::{
    advantage_normalize, annotate_stream, estimate_moments, estimate_moments_with_truncated,
    RolloutBatch, StreamKind, STREAM_COUNT,
};
use crate::exec;
use crate::risk::{
    recovery_needed, worst_case_bound, ConstraintMode, ConstraintSpec, MomentEstimates,
};
use crate::solver::{
    assemble_constraint_gradient, assemble_objective_gradient, line_search, solve_step,
    AcceptanceRule, DualCase, StepProblem, SurrogateEval,
};
use crate::trainer::config::{derive_seed, CriticConfig, CriticOptimizer, EnvConfig, TrainConfig};
use crate::trainer::metrics::{quantile, wilson_interval, EvalSummary, IterationMetrics, CSV_HEADER};
use crate::trainer::rollout::{CostStream, RolloutWorkers};
use crate::{Error, Result};

/// File names inside a checkpoint directory.
const MANIFEST_FILE: &str = "manifest.txt";
const POLICY_FILE: &str = "policy.txt";
const CRITIC_FILES: [&str; STREAM_COUNT] =
    ["critic_reward.txt", "critic_cost.txt", "critic_aug.txt"];
const MANIFEST_MAGIC: &str = "var-cpo-run v1";

/// The learned heads: one policy and one value critic per stream.
#[derive(Debug, Clone)]
pub struct Heads {
    /// The policy being optimized.
    pub policy: Approximator,
    /// Value critics indexed by [`StreamKind`].
    pub critics: [Approximator; STREAM_COUNT],
}

/// Result of a completed training run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// One metrics row per iteration, in order.
    pub metrics: Vec<IterationMetrics>,
    /// Path of the metrics CSV.
    pub csv_path: PathBuf,
    /// Path of the final checkpoint directory.
    pub final_checkpoint: PathBuf,
    /// Trained heads.
    pub heads: Heads,
}

/// Optional training hooks.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Overrides the environment constructor (the config's environment
    /// section still drives dimensions and discounts, so the replacement
    /// must be shape-compatible).
    pub build_env: Option<&'a (dyn Fn() -> Result<Box<dyn Environment>> + Sync)>,
    /// Called after every iteration with the fresh metrics row.
    pub progress: Option<&'a mut dyn FnMut(&IterationMetrics)>,
}

/// Trains per the configuration and writes metrics plus checkpoints under
/// `config.run.out_dir`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_options(config, TrainOptions::default())
}

/// [`train`] with hooks: a custom environment factory and/or a per-iteration
/// progress callback.
pub fn train_with_options(config: &TrainConfig, options: TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let out_dir = config.run.out_dir.clone();
    fs::create_dir_all(&out_dir)?;

    let spec = config.constraint.spec()?;
    let probe_env = match options.build_env {
        Some(factory) => factory()?,
        None => config.env.build()?,
    };
    let env_spec = probe_env.spec().clone();
    drop(probe_env);

    let mut heads = match &config.run.init_checkpoint {
        Some(dir) => {
            let (_, loaded, _, _) = load_checkpoint(dir)?;
            check_head_shapes(&loaded, &env_spec)?;
            loaded
        }
        None => build_heads(config, &env_spec)?,
    };

    let cost_stream = match config.constraint.mode {
        ConstraintMode::ExpectedCost => CostStream::Exceedance { rho: config.constraint.rho },
        _ => CostStream::Raw,
    };
    let aug_spec = matches!(config.constraint.mode, ConstraintMode::VaR).then_some(spec);
    let mut workers = match options.build_env {
        Some(factory) => RolloutWorkers::new(
            config.run.workers,
            factory,
            config.y_scale(),
            cost_stream,
            aug_spec,
        )?,
        None => RolloutWorkers::new(
            config.run.workers,
            || config.env.build(),
            config.y_scale(),
            cost_stream,
            aug_spec,
        )?,
    };

    // Canonical config echo plus the CSV, opened once and appended per row.
    fs::write(out_dir.join("config.txt"), config.canonical_text())?;
    let csv_path = out_dir.join("metrics.csv");
    let mut csv = fs::File::create(&csv_path)?;
    writeln!(csv, "{CSV_HEADER}")?;

    let track_ice = matches!(config.env, EnvConfig::IcyLake(_));
    let gamma_c = env_spec.cost_discount;
    let gamma_r = env_spec.reward_discount;
    let aug_scale = config.aug_target_scale();
    let mut progress = options.progress;

    let mut all_metrics = Vec::new();
    let mut env_steps_total = 0usize;
    let mut iteration = 0u64;
    while env_steps_total < config.run.total_steps {
        let row = run_iteration(
            config,
            &spec,
            &mut workers,
            &mut heads,
            iteration,
            &mut env_steps_total,
            gamma_r,
            gamma_c,
            aug_scale,
            track_ice,
        )
        .map_err(|e| dump_state(&out_dir, &heads, iteration, e))?;

        writeln!(csv, "{}", row.to_csv_row())?;
        csv.flush()?;
        if let Some(cb) = progress.as_deref_mut() {
            cb(&row);
        }
        all_metrics.push(row);
        iteration += 1;
        if iteration % config.run.checkpoint_every as u64 == 0 {
            let dir = out_dir.join(format!("checkpoint_iter{iteration:06}"));
            save_checkpoint(&dir, config, &heads, iteration, env_steps_total)?;
        }
    }

    let final_dir = out_dir.join("checkpoint_final");
    save_checkpoint(&final_dir, config, &heads, iteration, env_steps_total)?;
    Ok(TrainOutcome {
        metrics: all_metrics,
        csv_path,
        final_checkpoint: final_dir,
        heads,
    })
}

/// One full Algorithm iteration; returns the metrics row.
#[allow(clippy::too_many_arguments)]
fn run_iteration(
    config: &TrainConfig,
    spec: &ConstraintSpec,
    workers: &mut RolloutWorkers,
    heads: &mut Heads,
    iteration: u64,
    env_steps_total: &mut usize,
    gamma_r: f64,
    gamma_c: f64,
    aug_scale: f64,
    track_ice: bool,
) -> Result<IterationMetrics> {
    // Step 1: rollout.
    let mut batch = workers.collect(
        &heads.policy,
        config.run.batch_size,
        config.run.seed,
        iteration,
    )?;
    *env_steps_total += batch.step_count();

    // Step 2: critic values, advantages, return targets.
    annotate_batch(&mut batch, &heads.critics, config.gae.lambda, gamma_r, gamma_c, aug_scale)?;

    // Step 3: constraint moments and mode resolution.
    let moments = match estimate_moments(&batch) {
        Ok(m) => m,
        // A batch of only truncated episodes still needs an update; fall
        // back to truncation-biased moments rather than stalling.
        Err(Error::Estimation(_)) => estimate_moments_with_truncated(&batch)?,
        Err(e) => return Err(e),
    };
    ensure_finite("moment estimates", &[moments.mu, moments.j_tilde])?;
    let mode = match config.constraint.mode {
        ConstraintMode::VaR => {
            if recovery_needed(moments.mu, spec) {
                ConstraintMode::Recovery
            } else {
                ConstraintMode::VaR
            }
        }
        configured => configured,
    };
    let limit = match mode {
        ConstraintMode::Recovery => config.constraint.rho,
        _ => config.constraint.limit,
    };

    // Step 4: trust-region step.
    let g = assemble_objective_gradient(&batch, &heads.policy)?;
    let (b, c) = assemble_constraint_gradient(&batch, mode, spec, &moments, &heads.policy, limit)?;
    ensure_finite("objective gradient", &g)?;
    ensure_finite("constraint gradient", &b)?;
    let features = batch.all_features();
    let policy_ref = &heads.policy;
    let damping = config.solver.damping;
    let fvp = move |v: &[f64]| policy_ref.fisher_vector_product(&features, v, damping);
    let problem = StepProblem { g, b, c, delta: config.solver.delta, fvp: &fvp };
    let (direction, mut report) = solve_step(&problem, &config.solver)?;
    ensure_finite("step direction", &direction)?;

    if report.dual_case != DualCase::Unresolvable {
        let rule = match report.dual_case {
            DualCase::InfeasibleRecovery => AcceptanceRule::ConstraintOnly { offset: c },
            _ => AcceptanceRule::Standard { offset: c },
        };
        let kl_features = batch.all_features();
        let search = line_search(&direction, rule, &config.solver, |step| {
            evaluate_trial(&batch, &heads.policy, step, &kl_features, mode, c, &moments, spec)
        })?;
        report.backtracks = search.backtracks;
        report.step_scale = search.scale;
        report.accepted = search.accepted;
        if search.accepted && search.scale > 0.0 {
            report.achieved_kl = search.eval.kl;
            report.objective_change = search.eval.objective_change;
            report.constraint_after = search.eval.constraint_value;
            let step: Vec<f64> = direction.iter().map(|d| d * search.scale).collect();
            heads.policy.offset_params(&step)?;
        }
    }

    // Theorem diagnostic: defined only for discounted costs in the
    // tail-risk mode, estimated from the accepted step's weighted
    // advantages.
    let bound = if mode == ConstraintMode::VaR
        && gamma_c < 1.0
        && report.accepted
        && report.step_scale > 0.0
    {
        let (alpha_tilde, alpha_c) = alpha_estimates(&batch, &heads.policy);
        worst_case_bound(
            alpha_tilde,
            alpha_c,
            moments.mu,
            config.solver.delta,
            gamma_c,
            spec.epsilon,
        )
        .unwrap_or(-1.0)
    } else {
        -1.0
    };

    // Step 5: critic regression on the same batch.
    update_critics(&batch, &mut heads.critics, &config.critic, aug_scale)?;

    Ok(batch_metrics(
        &batch,
        iteration,
        *env_steps_total,
        &moments,
        c,
        mode,
        config.constraint.rho,
        track_ice,
        bound,
        report,
    ))
}

/// Computes values/advantages/returns for all three streams and standardizes
/// the reward advantages batch-wide.
pub fn annotate_batch(
    batch: &mut RolloutBatch,
    critics: &[Approximator; STREAM_COUNT],
    lambda: f64,
    gamma_r: f64,
    gamma_c: f64,
    aug_scale: f64,
) -> Result<()> {
    let results: Vec<Result<()>> = exec::map_mut(&mut batch.trajectories, |traj| {
        for stream in [StreamKind::Reward, StreamKind::Cost, StreamKind::AugmentedCost] {
            let critic = &critics[stream as usize];
            let scale = if stream == StreamKind::AugmentedCost { aug_scale } else { 1.0 };
            let mut values = Vec::with_capacity(traj.len());
            for step in &traj.steps {
                values.push(critic.value(&step.features)? * scale);
            }
            let bootstrap = if traj.truncated {
                critic.value(&traj.final_features)? * scale
            } else {
                0.0
            };
            let gamma = if stream == StreamKind::Reward { gamma_r } else { gamma_c };
            annotate_stream(traj, stream, values, bootstrap, gamma, lambda);
        }
        Ok(())
    });
    for r in results {
        r?;
    }

    // Reward advantages are standardized across the whole batch.
    let mut flat: Vec<f64> = batch
        .trajectories
        .iter()
        .flat_map(|t| t.streams[StreamKind::Reward as usize].advantages.iter().copied())
        .collect();
    advantage_normalize(&mut flat, StreamKind::Reward);
    let mut cursor = 0;
    for traj in &mut batch.trajectories {
        let adv = &mut traj.streams[StreamKind::Reward as usize].advantages;
        let n = adv.len();
        adv.copy_from_slice(&flat[cursor..cursor + n]);
        cursor += n;
    }
    Ok(())
}

/// Importance-sampled surrogate measurements at a trial step.
#[allow(clippy::too_many_arguments)]
fn evaluate_trial(
    batch: &RolloutBatch,
    policy: &Approximator,
    step: &[f64],
    kl_features: &[Vec<f64>],
    mode: ConstraintMode,
    c: f64,
    moments: &MomentEstimates,
    spec: &ConstraintSpec,
) -> Result<SurrogateEval> {
    let mut params = policy.params().to_vec();
    for (p, s) in params.iter_mut().zip(step.iter()) {
        *p += s;
    }
    let trial = policy.with_params(&params)?;
    let kl = trial.mean_kl(policy, kl_features)?;

    // One pass accumulating the three ratio-weighted sums.
    let sums = exec::sum_vectors(batch.trajectories.len(), 3, |i, acc| {
        let traj = &batch.trajectories[i];
        for (t, s) in traj.steps.iter().enumerate() {
            let lp = trial
                .log_prob_at(&s.features, &s.action)
                .expect("actions recorded from this policy");
            let shift = (lp - s.log_prob).exp() - 1.0;
            acc[0] += shift * traj.streams[StreamKind::Reward as usize].advantages[t];
            acc[1] += s.cost_weight
                * shift
                * traj.streams[StreamKind::AugmentedCost as usize].advantages[t];
            acc[2] +=
                s.cost_weight * shift * traj.streams[StreamKind::Cost as usize].advantages[t];
        }
    });
    let n_steps = batch.step_count().max(1) as f64;
    let n_eps = batch.trajectories.len().max(1) as f64;
    let objective_change = sums[0] / n_steps;
    let delta_aug = sums[1] / n_eps;
    let delta_mu = sums[2] / n_eps;

    let constraint_value = match mode {
        ConstraintMode::Unconstrained => f64::NEG_INFINITY,
        // Full surrogate: the estimated J_C̃ shift minus the bound's change
        // d(μ_k + Z) − d(μ_k) = (2 μ_k Z + Z²)/ε.
        ConstraintMode::VaR => {
            c + delta_aug - (2.0 * moments.mu * delta_mu + delta_mu * delta_mu) / spec.epsilon
        }
        ConstraintMode::Recovery | ConstraintMode::ExpectedCost => c + delta_mu,
    };
    Ok(SurrogateEval { kl, objective_change, constraint_value })
}

/// Maximal importance-weighted advantage magnitudes of the updated policy on
/// the augmented-cost and cost streams.
fn alpha_estimates(batch: &RolloutBatch, new_policy: &Approximator) -> (f64, f64) {
    let mut alpha_tilde = 0.0_f64;
    let mut alpha_c = 0.0_f64;
    for traj in &batch.trajectories {
        for (t, s) in traj.steps.iter().enumerate() {
            let lp = new_policy
                .log_prob_at(&s.features, &s.action)
                .expect("actions recorded from this policy");
            let ratio = (lp - s.log_prob).exp();
            let a_tilde =
                ratio * traj.streams[StreamKind::AugmentedCost as usize].advantages[t];
            let a_cost = ratio * traj.streams[StreamKind::Cost as usize].advantages[t];
            alpha_tilde = alpha_tilde.max(a_tilde.abs());
            alpha_c = alpha_c.max(a_cost.abs());
        }
    }
    (alpha_tilde, alpha_c)
}

/// Fits the three value heads to their return targets by full-batch descent.
/// Returns per-stream final mean squared errors; a stream whose loss grows
/// past ten times its starting value aborts with a divergence report.
pub fn update_critics(
    batch: &RolloutBatch,
    critics: &mut [Approximator; STREAM_COUNT],
    config: &CriticConfig,
    aug_scale: f64,
) -> Result<[f64; STREAM_COUNT]> {
    let xs = batch.all_features();
    let mut finals = [0.0; STREAM_COUNT];
    for stream in [StreamKind::Reward, StreamKind::Cost, StreamKind::AugmentedCost] {
        let scale = if stream == StreamKind::AugmentedCost { aug_scale } else { 1.0 };
        let targets: Vec<f64> = batch
            .trajectories
            .iter()
            .flat_map(|t| t.streams[stream as usize].returns.iter().map(move |r| r / scale))
            .collect();
        let (initial, final_mse) = fit_stream(&mut critics[stream as usize], &xs, &targets, config);
        if !final_mse.is_finite() || final_mse > 10.0 * initial + 1e-12 {
            return Err(Error::CriticDivergence {
                stream: stream.name(),
                initial,
                final_mse,
            });
        }
        finals[stream as usize] = final_mse;
    }
    Ok(finals)
}

/// Runs the configured optimizer for the configured epochs; returns
/// `(initial, final)` mean squared error.
fn fit_stream(
    head: &mut Approximator,
    xs: &[Vec<f64>],
    targets: &[f64],
    config: &CriticConfig,
) -> (f64, f64) {
    let dim = head.param_count();
    // Adaptive-moment state is fresh on every call: the regression is
    // restarted per iteration, so carrying stale curvature across batches
    // would couple updates that the determinism contract keeps independent.
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut initial = 0.0;
    for epoch in 0..config.epochs {
        let (mse, grad) = head.mse_and_grad(xs, targets);
        if epoch == 0 {
            initial = mse;
        }
        let step: Vec<f64> = match config.optimizer {
            CriticOptimizer::GradientDescent => {
                grad.iter().map(|g| -config.lr * g).collect()
            }
            CriticOptimizer::Adam => {
                let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                let t = (epoch + 1) as i32;
                grad.iter()
                    .enumerate()
                    .map(|(i, g)| {
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        let mh = m[i] / (1.0 - b1.powi(t));
                        let vh = v[i] / (1.0 - b2.powi(t));
                        -config.lr * mh / (vh.sqrt() + eps)
                    })
                    .collect()
            }
        };
        if head.offset_params(&step).is_err() {
            // Non-finite parameters: surface as divergence via the final
            // loss below.
            return (initial, f64::INFINITY);
        }
    }
    let (final_mse, _) = head.mse_and_grad(xs, targets);
    (initial, final_mse)
}

/// Assembles one metrics row from the finished iteration.
#[allow(clippy::too_many_arguments)]
fn batch_metrics(
    batch: &RolloutBatch,
    iteration: u64,
    env_steps: usize,
    moments: &MomentEstimates,
    c: f64,
    mode: ConstraintMode,
    rho: f64,
    track_ice: bool,
    bound: f64,
    report: crate::solver::StepReport,
) -> IterationMetrics {
    let n_all = batch.trajectories.len().max(1) as f64;
    let reward_return =
        batch.trajectories.iter().map(|t| t.reward_total).sum::<f64>() / n_all;
    // Cost-distribution statistics prefer completed episodes; with none
    // completed every episode is used rather than reporting nothing.
    let completed = batch.completed_count();
    let costs: Vec<f64> = if completed > 0 {
        batch.completed().map(|t| t.raw_cost_return).collect()
    } else {
        batch.trajectories.iter().map(|t| t.raw_cost_return).collect()
    };
    let eps_ice: f64 = if completed > 0 {
        batch.completed().filter(|t| t.visited_ice()).count() as f64 / costs.len() as f64
    } else {
        batch.trajectories.iter().filter(|t| t.visited_ice()).count() as f64
            / costs.len() as f64
    };
    let violation_fraction =
        costs.iter().filter(|&&x| x >= rho).count() as f64 / costs.len().max(1) as f64;
    IterationMetrics {
        iteration: iteration as usize,
        env_steps,
        reward_return,
        mu: moments.mu,
        j_tilde: moments.j_tilde,
        c_offset: c,
        mode,
        cost_p95: quantile(&costs, 0.95),
        violation_fraction,
        percentile_reliable: completed >= 30,
        ice_visitation: if track_ice { eps_ice } else { -1.0 },
        bound,
        step: report,
    }
}

fn ensure_finite(label: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(label.to_string()))
    }
}

/// Writes an abort dump next to the metrics so failed runs can be inspected,
/// then returns the original error.
fn dump_state(out_dir: &Path, heads: &Heads, iteration: u64, err: Error) -> Error {
    let mut text = format!("aborted at iteration {iteration}: {err}\n");
    text.push_str("policy:\n");
    text.push_str(&checkpoint::to_text(&heads.policy));
    for (name, critic) in CRITIC_FILES.iter().zip(heads.critics.iter()) {
        text.push_str(&format!("{name}:\n"));
        text.push_str(&checkpoint::to_text(critic));
    }
    let _ = fs::write(out_dir.join("abort_dump.txt"), text);
    err
}

/// Builds fresh heads sized for the environment.
pub fn build_heads(config: &TrainConfig, env_spec: &crate::env::CmdpSpec) -> Result<Heads> {
    let input_dim = AugmentedState::feature_dim(env_spec.observation_dim);
    let (kind, out_dim) = match env_spec.action_space {
        ActionSpace::Categorical(n) => (HeadKind::CategoricalPolicy, n),
        ActionSpace::Box { dim, .. } => (HeadKind::GaussianPolicy, dim),
    };
    let seed = config.run.seed;
    let policy = Approximator::new(
        kind,
        input_dim,
        &config.policy.hidden,
        out_dim,
        derive_seed(&[seed, 0x1001]),
        config.policy.log_std_init,
        config.policy.log_std_bounds,
    )?;
    let critic = |salt: u64| {
        Approximator::new(
            HeadKind::ValueHead,
            input_dim,
            &config.policy.hidden,
            1,
            derive_seed(&[seed, salt]),
            0.0,
            config.policy.log_std_bounds,
        )
    };
    Ok(Heads {
        policy,
        critics: [critic(0x2001)?, critic(0x2002)?, critic(0x2003)?],
    })
}

fn check_head_shapes(heads: &Heads, env_spec: &crate::env::CmdpSpec) -> Result<()> {
    let input_dim = AugmentedState::feature_dim(env_spec.observation_dim);
    if heads.policy.input_dim() != input_dim {
        return Err(Error::Dimension(format!(
            "checkpoint policy expects inputs of length {}, environment provides {}",
            heads.policy.input_dim(),
            input_dim
        )));
    }
    let out_dim = env_spec.action_space.policy_output_dim();
    if heads.policy.output_dim() != out_dim {
        return Err(Error::Dimension(format!(
            "checkpoint policy emits {} outputs, environment needs {}",
            heads.policy.output_dim(),
            out_dim
        )));
    }
    for critic in &heads.critics {
        if critic.input_dim() != input_dim {
            return Err(Error::Dimension("checkpoint critic input size mismatch".into()));
        }
    }
    Ok(())
}

/// Writes a checkpoint directory: manifest plus the four head files.
pub fn save_checkpoint(
    dir: &Path,
    config: &TrainConfig,
    heads: &Heads,
    iteration: u64,
    env_steps: usize,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = format!(
        "{MANIFEST_MAGIC}\nconfig_hash = {}\niteration = {iteration}\nenv_steps = {env_steps}\n---\n{}",
        config.hash(),
        config.canonical_text(),
    );
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    checkpoint::save(&heads.policy, &dir.join(POLICY_FILE))?;
    for (name, critic) in CRITIC_FILES.iter().zip(heads.critics.iter()) {
        checkpoint::save(critic, &dir.join(name))?;
    }
    Ok(())
}

/// Loads a checkpoint directory; returns the embedded config, the heads, the
/// iteration, and the env-step count.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainConfig, Heads, u64, usize)> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
    let mut lines = manifest.lines();
    if lines.next() != Some(MANIFEST_MAGIC) {
        return Err(Error::Checkpoint("unrecognized manifest header".into()));
    }
    let mut iteration = None;
    let mut env_steps = None;
    let mut hash = None;
    for line in lines.by_ref() {
        if line == "---" {
            break;
        }
        match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("iteration", v)) => {
                iteration = v.parse::<u64>().ok();
            }
            Some(("env_steps", v)) => {
                env_steps = v.parse::<usize>().ok();
            }
            _ => return Err(Error::Checkpoint(format!("unrecognized manifest line: {line}"))),
        }
    }
    let config_text: String =
        lines.map(|l| format!("{l}\n")).collect();
    let config = TrainConfig::from_text(&config_text)?;
    let (Some(hash), Some(iteration), Some(env_steps)) = (hash, iteration, env_steps) else {
        return Err(Error::Checkpoint("manifest is missing metadata fields".into()));
    };
    if hash != config.hash() {
        return Err(Error::Checkpoint(
            "manifest hash does not match the embedded config".into(),
        ));
    }
    let policy = checkpoint::load(&dir.join(POLICY_FILE))?;
    let critics = [
        checkpoint::load(&dir.join(CRITIC_FILES[0]))?,
        checkpoint::load(&dir.join(CRITIC_FILES[1]))?,
        checkpoint::load(&dir.join(CRITIC_FILES[2]))?,
    ];
    Ok((config, Heads { policy, critics }, iteration, env_steps))
}

/// Evaluates a frozen checkpointed policy on the environment recorded in its
/// manifest.
pub fn evaluate(checkpoint_dir: &Path, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let (config, heads, _, _) = load_checkpoint(checkpoint_dir)?;
    let mut env = config.env.build()?;
    check_head_shapes(&heads, env.spec())?;
    evaluate_policy(
        env.as_mut(),
        &heads.policy,
        episodes,
        seed,
        config.y_scale(),
        config.constraint.rho,
        matches!(config.env, EnvConfig::IcyLake(_)),
    )
}

/// Runs `episodes` frozen-policy episodes and summarizes the cost
/// distribution.
pub fn evaluate_policy(
    env: &mut dyn Environment,
    policy: &Approximator,
    episodes: usize,
    seed: u64,
    y_scale: f64,
    rho: f64,
    track_ice: bool,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let gamma_c = env.spec().cost_discount;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, u64::MAX]));
    let mut rewards = Vec::with_capacity(episodes);
    let mut costs = Vec::with_capacity(episodes);
    let mut ice_episodes = 0usize;
    for episode in 0..episodes as u64 {
        let mut state = env.reset(derive_seed(&[seed, episode]));
        let mut reward_total = 0.0;
        let mut saw_ice = false;
        loop {
            let dist = policy.forward_policy(&state.features(y_scale))?;
            let action = sample_action(&dist, &mut rng);
            let outcome = env.step(&action)?;
            reward_total += outcome.reward;
            saw_ice |= outcome.cost_from_ice;
            let done = outcome.terminated || outcome.truncated;
            state = augment(&outcome, &state, gamma_c);
            if done {
                break;
            }
        }
        rewards.push(reward_total);
        costs.push(state.y);
        ice_episodes += usize::from(saw_ice);
    }
    let n = episodes as f64;
    let reward_mean = rewards.iter().sum::<f64>() / n;
    let cost_mean = costs.iter().sum::<f64>() / n;
    let var = costs.iter().map(|c| (c - cost_mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let violations = costs.iter().filter(|&&c| c >= rho).count();
    Ok(EvalSummary {
        episodes,
        reward_mean,
        cost_mean,
        cost_std: var.sqrt(),
        quantiles: [0.5, 0.9, 0.95, 0.99]
            .iter()
            .map(|&q| (q, quantile(&costs, q)))
            .collect(),
        violation_fraction: violations as f64 / n,
        violation_ci: wilson_interval(violations, episodes),
        ice_visitation: if track_ice { ice_episodes as f64 / n } else { -1.0 },
    })
}
