//! Policies and value heads over augmented states.
//!
//! Each head is a small tanh MLP ([`net::Net`]) owning a flat parameter
//! vector. Three head kinds exist:
//!
//! - `CategoricalPolicy` — network outputs are softmax logits;
//! - `GaussianPolicy` — network outputs are per-dimension means, with
//!   state-independent log-stddevs appended to the parameter vector and
//!   clamped to a configured range;
//! - `ValueHead` — scalar regression output.
//!
//! All derivative quantities (score gradients, KL gradients, Fisher–vector
//! products, value gradients) are exact: reverse mode through the network,
//! closed forms in distribution space. Nothing here samples except
//! [`sample_action`], which consumes the caller's RNG stream.

pub mod checkpoint;
pub mod net;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::Action;
use crate::exec;
use crate::{Error, Result};
use net::{ForwardCache, Net};

/// What a head computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Softmax policy over `n` discrete actions.
    CategoricalPolicy,
    /// Diagonal Gaussian policy with state-independent log-stddev.
    GaussianPolicy,
    /// Scalar value prediction.
    ValueHead,
}

impl HeadKind {
    /// Stable name used in checkpoints.
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::CategoricalPolicy => "categorical_policy",
            HeadKind::GaussianPolicy => "gaussian_policy",
            HeadKind::ValueHead => "value_head",
        }
    }

    /// Inverse of [`HeadKind::name`].
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "categorical_policy" => Ok(HeadKind::CategoricalPolicy),
            "gaussian_policy" => Ok(HeadKind::GaussianPolicy),
            "value_head" => Ok(HeadKind::ValueHead),
            other => Err(Error::Checkpoint(format!("unknown head kind '{other}'"))),
        }
    }
}

/// Action distribution emitted by a policy head at one state.
#[derive(Debug, Clone)]
pub enum PolicyDistribution {
    /// Categorical probabilities (non-negative, sum to 1).
    Categorical {
        /// Per-action probabilities.
        probs: Vec<f64>,
    },
    /// Diagonal Gaussian.
    Gaussian {
        /// Per-dimension means.
        mean: Vec<f64>,
        /// Per-dimension log-stddevs (already clamped).
        log_std: Vec<f64>,
    },
}

/// Default clamp range for Gaussian log-stddevs.
pub const DEFAULT_LOG_STD_BOUNDS: (f64, f64) = (-5.0, 2.0);

/// A parametric policy or value head with a flat `f64` parameter vector.
#[derive(Debug, Clone)]
pub struct Approximator {
    kind: HeadKind,
    net: Net,
    /// Flat parameters: network weights/biases, then (Gaussian only) the
    /// log-stddev block.
    params: Vec<f64>,
    /// Clamp range applied to log-stddevs before use.
    log_std_bounds: (f64, f64),
}

impl Approximator {
    /// Creates a head with freshly initialized parameters: orthogonal-like
    /// hidden layers, zero final layer (uniform categorical policies, zero
    /// means/values), log-stddevs at `log_std_init` for Gaussian heads.
    pub fn new(
        kind: HeadKind,
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        seed: u64,
        log_std_init: f64,
        log_std_bounds: (f64, f64),
    ) -> Result<Self> {
        use rand::SeedableRng;
        if output_dim == 0 || input_dim == 0 {
            return Err(Error::Dimension("zero input or output dimension".into()));
        }
        if kind == HeadKind::ValueHead && output_dim != 1 {
            return Err(Error::Dimension("value heads are scalar".into()));
        }
        if log_std_bounds.0 > log_std_bounds.1 {
            return Err(Error::Config("log_std bounds out of order".into()));
        }
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(output_dim);
        let net = Net::new(sizes);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = net.init_params(&mut rng);
        if kind == HeadKind::GaussianPolicy {
            params.extend(std::iter::repeat(log_std_init).take(output_dim));
        }
        Ok(Approximator { kind, net, params, log_std_bounds })
    }

    /// Reconstructs a head from explicit pieces (checkpoint loading).
    pub(crate) fn from_parts(
        kind: HeadKind,
        sizes: Vec<usize>,
        params: Vec<f64>,
        log_std_bounds: (f64, f64),
    ) -> Result<Self> {
        let net = Net::new(sizes);
        let expected = match kind {
            HeadKind::GaussianPolicy => net.param_count() + *net.sizes.last().unwrap(),
            _ => net.param_count(),
        };
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "parameter count {} does not match architecture ({expected})",
                params.len()
            )));
        }
        Ok(Approximator { kind, net, params, log_std_bounds })
    }

    /// Head kind.
    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    /// Input dimension.
    pub fn input_dim(&self) -> usize {
        self.net.sizes[0]
    }

    /// Output dimension (action count, action dim, or 1).
    pub fn output_dim(&self) -> usize {
        *self.net.sizes.last().unwrap()
    }

    /// Full layer-size list, input first.
    pub fn sizes(&self) -> &[usize] {
        &self.net.sizes
    }

    /// Log-stddev clamp range.
    pub fn log_std_bounds(&self) -> (f64, f64) {
        self.log_std_bounds
    }

    /// Total flat parameter count (including the log-stddev block).
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Read-only view of the flat parameter vector.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the parameter vector.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Clone with different parameters (same architecture); used by the
    /// line search to evaluate trial points.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut clone = self.clone();
        clone.set_params(params)?;
        Ok(clone)
    }

    /// Adds `step` to the parameters in place.
    pub fn offset_params(&mut self, step: &[f64]) -> Result<()> {
        if step.len() != self.params.len() {
            return Err(Error::Dimension("step length mismatch".into()));
        }
        for (p, s) in self.params.iter_mut().zip(step.iter()) {
            *p += s;
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameter vector after step".into()));
        }
        Ok(())
    }

    fn net_param_count(&self) -> usize {
        self.net.param_count()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input length {} does not match network input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn clamped_log_std(&self) -> Vec<f64> {
        let (lo, hi) = self.log_std_bounds;
        self.params[self.net_param_count()..].iter().map(|s| s.clamp(lo, hi)).collect()
    }

    /// 1 where the raw log-stddev parameter is inside the clamp range (so
    /// gradients pass through), 0 where clamping is active.
    fn log_std_mask(&self) -> Vec<f64> {
        let (lo, hi) = self.log_std_bounds;
        self.params[self.net_param_count()..]
            .iter()
            .map(|&s| if (lo..=hi).contains(&s) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Evaluates the policy distribution at one state featurization.
    pub fn forward_policy(&self, x: &[f64]) -> Result<PolicyDistribution> {
        self.check_input(x)?;
        let cache = self.net.forward(&self.params[..self.net_param_count()], x);
        Ok(self.distribution_from_output(cache.output()))
    }

    fn distribution_from_output(&self, out: &[f64]) -> PolicyDistribution {
        match self.kind {
            HeadKind::CategoricalPolicy => {
                PolicyDistribution::Categorical { probs: softmax(out) }
            }
            HeadKind::GaussianPolicy => PolicyDistribution::Gaussian {
                mean: out.to_vec(),
                log_std: self.clamped_log_std(),
            },
            HeadKind::ValueHead => panic!("forward_policy called on a value head"),
        }
    }

    /// Scalar value prediction (value heads only).
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        debug_assert_eq!(self.kind, HeadKind::ValueHead);
        let cache = self.net.forward(&self.params, x);
        Ok(cache.output()[0])
    }

    /// Gradient of the scalar prediction w.r.t. the parameters.
    pub fn value_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let cache = self.net.forward(&self.params, x);
        Ok(self.net.backward(&self.params, &cache, &[1.0]))
    }

    /// Mean squared error and its parameter gradient over a batch.
    pub fn mse_and_grad(&self, xs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(xs.len(), targets.len());
        let n = xs.len().max(1) as f64;
        let dim = self.param_count();
        // Slot `dim` accumulates the squared error so one pass suffices.
        let acc = exec::sum_vectors(xs.len(), dim + 1, |i, acc| {
            let cache = self.net.forward(&self.params, &xs[i]);
            let err = cache.output()[0] - targets[i];
            self.net.backward_into(&self.params, &cache, &[1.0], 2.0 * err, &mut acc[..dim]);
            acc[dim] += err * err;
        });
        let mse = acc[dim] / n;
        let grad = acc[..dim].iter().map(|g| g / n).collect();
        (mse, grad)
    }

    /// Log-probability of `action` under the policy at `x`.
    pub fn log_prob_at(&self, x: &[f64], action: &Action) -> Result<f64> {
        Ok(log_prob(&self.forward_policy(x)?, action))
    }

    /// Exact score gradient `∇_θ log π_θ(a|x)`.
    pub fn log_prob_grad(&self, x: &[f64], action: &Action) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let net_count = self.net_param_count();
        let cache = self.net.forward(&self.params[..net_count], x);
        let mut grad = vec![0.0; self.param_count()];
        self.score_backward_into(&cache, action, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates `scale · ∇_θ log π_θ(a|x)` into `acc` given a cached
    /// forward pass; shared by gradient assembly over batches.
    pub(crate) fn score_backward_into(
        &self,
        cache: &ForwardCache,
        action: &Action,
        scale: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        let net_count = self.net_param_count();
        match (self.kind, action) {
            (HeadKind::CategoricalPolicy, Action::Discrete(a)) => {
                let probs = softmax(cache.output());
                if *a >= probs.len() {
                    return Err(Error::Dimension(format!("action {a} out of range")));
                }
                let mut out_grad: Vec<f64> = probs.iter().map(|p| -p).collect();
                out_grad[*a] += 1.0;
                self.net.backward_into(
                    &self.params[..net_count],
                    cache,
                    &out_grad,
                    scale,
                    &mut acc[..net_count],
                );
            }
            (HeadKind::GaussianPolicy, Action::Continuous(a)) => {
                let mean = cache.output();
                if a.len() != mean.len() {
                    return Err(Error::Dimension("action dimension mismatch".into()));
                }
                let log_std = self.clamped_log_std();
                let mask = self.log_std_mask();
                let mut out_grad = vec![0.0; mean.len()];
                for i in 0..mean.len() {
                    let sigma2 = (2.0 * log_std[i]).exp();
                    let diff = a[i] - mean[i];
                    out_grad[i] = diff / sigma2;
                    acc[net_count + i] += scale * mask[i] * (diff * diff / sigma2 - 1.0);
                }
                self.net.backward_into(
                    &self.params[..net_count],
                    cache,
                    &out_grad,
                    scale,
                    &mut acc[..net_count],
                );
            }
            _ => {
                return Err(Error::Dimension(
                    "action type does not match policy head".into(),
                ))
            }
        }
        Ok(())
    }

    /// Cached network forward pass for policy heads (batch helpers).
    pub(crate) fn policy_forward_cache(&self, x: &[f64]) -> ForwardCache {
        self.net.forward(&self.params[..self.net_param_count()], x)
    }

    /// Mean KL divergence `E_x[KL(π_old(·|x) ‖ π_self(·|x))]` over a batch.
    /// `self` is the new (trial) policy, `old` the fixed anchor.
    pub fn mean_kl(&self, old: &Approximator, xs: &[Vec<f64>]) -> Result<f64> {
        self.check_same_family(old)?;
        let n = xs.len().max(1) as f64;
        let terms = exec::map_collect(xs, |x| {
            let new_dist = self.forward_policy(x).expect("dimension checked");
            let old_dist = old.forward_policy(x).expect("dimension checked");
            kl_divergence(&old_dist, &new_dist)
        });
        Ok(terms.iter().sum::<f64>() / n)
    }

    /// Gradient of [`Approximator::mean_kl`] w.r.t. the *new* (self)
    /// parameters. Used by tests to validate the Fisher–vector product
    /// against finite differences of this gradient.
    pub fn mean_kl_grad(&self, old: &Approximator, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_same_family(old)?;
        let n = xs.len().max(1) as f64;
        let dim = self.param_count();
        let net_count = self.net_param_count();
        let grad = exec::sum_vectors(xs.len(), dim, |i, acc| {
            let x = &xs[i];
            let cache = self.policy_forward_cache(x);
            match self.kind {
                HeadKind::CategoricalPolicy => {
                    let p_new = softmax(cache.output());
                    let old_cache = old.policy_forward_cache(x);
                    let p_old = softmax(old_cache.output());
                    let out_grad: Vec<f64> =
                        p_new.iter().zip(p_old.iter()).map(|(n, o)| n - o).collect();
                    self.net.backward_into(
                        &self.params[..net_count],
                        &cache,
                        &out_grad,
                        1.0,
                        &mut acc[..net_count],
                    );
                }
                HeadKind::GaussianPolicy => {
                    let mean_new = cache.output();
                    let old_cache = old.policy_forward_cache(x);
                    let mean_old = old_cache.output();
                    let ls_new = self.clamped_log_std();
                    let ls_old = old.clamped_log_std();
                    let mask = self.log_std_mask();
                    let mut out_grad = vec![0.0; mean_new.len()];
                    for j in 0..mean_new.len() {
                        let var_new = (2.0 * ls_new[j]).exp();
                        let var_old = (2.0 * ls_old[j]).exp();
                        let diff = mean_new[j] - mean_old[j];
                        out_grad[j] = diff / var_new;
                        acc[net_count + j] +=
                            mask[j] * (1.0 - (var_old + diff * diff) / var_new);
                    }
                    self.net.backward_into(
                        &self.params[..net_count],
                        &cache,
                        &out_grad,
                        1.0,
                        &mut acc[..net_count],
                    );
                }
                HeadKind::ValueHead => panic!("mean_kl_grad on a value head"),
            }
        });
        Ok(grad.into_iter().map(|g| g / n).collect())
    }

    /// Damped Fisher–vector product `(F̄ + damping·I)·v`, where `F̄` is the
    /// batch-average Fisher information of the policy at its current
    /// parameters (equivalently, the Hessian of the mean KL to a frozen copy
    /// of itself). Closed form in distribution space:
    /// categorical `F_z = diag(p) − ppᵀ`; Gaussian `F_mean = 1/σ²` and
    /// `F_logσ = 2` per dimension.
    pub fn fisher_vector_product(&self, xs: &[Vec<f64>], v: &[f64], damping: f64) -> Vec<f64> {
        assert_eq!(v.len(), self.param_count(), "direction has parameter dimension");
        let n = xs.len().max(1) as f64;
        let dim = self.param_count();
        let net_count = self.net_param_count();
        let mut out = exec::sum_vectors(xs.len(), dim, |i, acc| {
            let x = &xs[i];
            let cache = self.policy_forward_cache(x);
            let dz = self.net.jvp(&self.params[..net_count], &cache, &v[..net_count]);
            match self.kind {
                HeadKind::CategoricalPolicy => {
                    let p = softmax(cache.output());
                    let pd: f64 = p.iter().zip(dz.iter()).map(|(pi, di)| pi * di).sum();
                    let u: Vec<f64> =
                        p.iter().zip(dz.iter()).map(|(pi, di)| pi * (di - pd)).collect();
                    self.net.backward_into(
                        &self.params[..net_count],
                        &cache,
                        &u,
                        1.0,
                        &mut acc[..net_count],
                    );
                }
                HeadKind::GaussianPolicy => {
                    let ls = self.clamped_log_std();
                    let mask = self.log_std_mask();
                    let u: Vec<f64> = dz
                        .iter()
                        .zip(ls.iter())
                        .map(|(di, s)| di / (2.0 * s).exp())
                        .collect();
                    self.net.backward_into(
                        &self.params[..net_count],
                        &cache,
                        &u,
                        1.0,
                        &mut acc[..net_count],
                    );
                    for j in 0..ls.len() {
                        acc[net_count + j] += 2.0 * mask[j] * v[net_count + j];
                    }
                }
                HeadKind::ValueHead => panic!("fisher_vector_product on a value head"),
            }
        });
        for (o, vi) in out.iter_mut().zip(v.iter()) {
            *o = *o / n + damping * vi;
        }
        out
    }

    fn check_same_family(&self, other: &Approximator) -> Result<()> {
        if self.kind != other.kind || self.net.sizes != other.net.sizes {
            return Err(Error::Dimension("approximator architecture mismatch".into()));
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Samples an action from a distribution using the caller's RNG stream.
pub fn sample_action<R: Rng>(dist: &PolicyDistribution, rng: &mut R) -> Action {
    match dist {
        PolicyDistribution::Categorical { probs } => {
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            for (i, p) in probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    return Action::Discrete(i);
                }
            }
            Action::Discrete(probs.len() - 1)
        }
        PolicyDistribution::Gaussian { mean, log_std } => {
            let a = mean
                .iter()
                .zip(log_std.iter())
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s.exp() * z
                })
                .collect();
            Action::Continuous(a)
        }
    }
}

/// Log-probability (density) of `action` under `dist`.
pub fn log_prob(dist: &PolicyDistribution, action: &Action) -> f64 {
    match (dist, action) {
        (PolicyDistribution::Categorical { probs }, Action::Discrete(a)) => {
            probs[*a].max(1e-300).ln()
        }
        (PolicyDistribution::Gaussian { mean, log_std }, Action::Continuous(a)) => {
            let mut lp = 0.0;
            for i in 0..mean.len() {
                let s = log_std[i];
                let z = (a[i] - mean[i]) / s.exp();
                lp += -s - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z;
            }
            lp
        }
        _ => panic!("action type does not match distribution"),
    }
}

/// KL divergence `KL(old ‖ new)` between two distributions of the same kind.
pub fn kl_divergence(old: &PolicyDistribution, new: &PolicyDistribution) -> f64 {
    match (old, new) {
        (
            PolicyDistribution::Categorical { probs: p },
            PolicyDistribution::Categorical { probs: q },
        ) => p
            .iter()
            .zip(q.iter())
            .map(|(pi, qi)| {
                if *pi <= 0.0 {
                    0.0
                } else {
                    pi * (pi.max(1e-300).ln() - qi.max(1e-300).ln())
                }
            })
            .sum(),
        (
            PolicyDistribution::Gaussian { mean: mo, log_std: so },
            PolicyDistribution::Gaussian { mean: mn, log_std: sn },
        ) => {
            let mut kl = 0.0;
            for i in 0..mo.len() {
                let var_o = (2.0 * so[i]).exp();
                let var_n = (2.0 * sn[i]).exp();
                let diff = mo[i] - mn[i];
                kl += sn[i] - so[i] + (var_o + diff * diff) / (2.0 * var_n) - 0.5;
            }
            kl
        }
        _ => panic!("KL between different distribution kinds"),
    }
}
