//! Shared fixtures for the integration suites: metrics-CSV inspection, a
//! reward-equals-cost wrapper environment for pretraining cost-seeking
//! policies, and a three-state CMDP small enough to enumerate exactly —
//! values, advantages, constraint surrogates, and KL divergences are all
//! computed in closed form over the finite augmented-state tree.
#![allow(dead_code)]

use std::path::Path;

use var_cpo::approx::{Approximator, PolicyDistribution};
use var_cpo::env::{Action, AugmentedState, CmdpSpec, Environment, StepOutcome};
use var_cpo::risk::{augmented_cost, dhat_linear_coeff, ConstraintSpec};
use var_cpo::Result;

/// Stream indices used by the exact enumerator, matching the trainer's
/// stream order: reward, cost, augmented cost.
pub const R: usize = 0;
/// Cost stream index.
pub const C: usize = 1;
/// Augmented-cost stream index.
pub const A: usize = 2;

// ---------------------------------------------------------------------------
// Metrics CSV inspection
// ---------------------------------------------------------------------------

/// Parsed metrics CSV with header-addressed columns.
pub struct Csv {
    /// Column names in file order.
    pub header: Vec<String>,
    /// Data rows, each with one string per column.
    pub rows: Vec<Vec<String>>,
}

/// Reads and splits a metrics CSV, panicking on ragged rows.
pub fn read_csv(path: &Path) -> Csv {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    let mut lines = text.lines();
    let header: Vec<String> =
        lines.next().expect("csv has a header").split(',').map(str::to_string).collect();
    let rows: Vec<Vec<String>> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .collect();
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), header.len(), "row {i} arity in {}", path.display());
    }
    Csv { header, rows }
}

impl Csv {
    /// Index of a named column; panics when absent.
    pub fn col(&self, name: &str) -> usize {
        self.header
            .iter()
            .position(|h| h == name)
            .unwrap_or_else(|| panic!("csv missing column '{name}'"))
    }

    /// Numeric cell value (`inf`/`-inf` parse as infinities).
    pub fn num(&self, row: usize, name: &str) -> f64 {
        let cell = &self.rows[row][self.col(name)];
        cell.parse::<f64>().unwrap_or_else(|e| panic!("row {row} column {name}: {e}"))
    }

    /// Raw cell text.
    pub fn text(&self, row: usize, name: &str) -> &str {
        &self.rows[row][self.col(name)]
    }
}

// ---------------------------------------------------------------------------
// Reward := cost wrapper
// ---------------------------------------------------------------------------

/// Wraps an environment so each step's reward equals its cost. Training an
/// unconstrained agent on the wrapper produces a cost-seeking policy, the
/// starting point for recovery-mode runs.
pub struct RewardIsCost {
    inner: Box<dyn Environment>,
}

impl RewardIsCost {
    /// Wraps the given environment.
    pub fn new(inner: Box<dyn Environment>) -> Self {
        RewardIsCost { inner }
    }
}

impl Environment for RewardIsCost {
    fn spec(&self) -> &CmdpSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> AugmentedState {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let mut outcome = self.inner.step(action)?;
        outcome.reward = outcome.cost;
        Ok(outcome)
    }
}

// ---------------------------------------------------------------------------
// Exactly enumerable CMDP
// ---------------------------------------------------------------------------

/// A finite-horizon CMDP over three states and two actions with two
/// successors per state–action pair. Small enough that the augmented-state
/// tree (state, accumulated discounted cost, time) enumerates completely,
/// giving exact values for every quantity the trust-region update estimates
/// from samples.
pub struct ExactCmdp {
    /// Start state.
    pub start: usize,
    /// Cost discount γ_c.
    pub gamma_c: f64,
    /// Reward discount γ_r.
    pub gamma_r: f64,
    /// Episode length (every episode runs exactly this many steps).
    pub horizon: usize,
    /// Accumulator feature scale fed to the policy (normally 1/ρ).
    pub y_scale: f64,
    /// Deterministic reward per (state, action).
    pub rewards: [[f64; 2]; 3],
    /// Deterministic cost per (state, action).
    pub costs: [[f64; 2]; 3],
    /// Two (successor, probability) pairs per (state, action).
    pub successors: [[[(usize, f64); 2]; 2]; 3],
}

/// One augmented state reached by a unique action/successor history.
pub struct Node {
    /// Base MDP state.
    pub s: usize,
    /// Accumulated discounted cost entering this node.
    pub y: f64,
    /// Time index.
    pub t: usize,
    /// `γ_c^t`.
    pub disc_c: f64,
    /// `γ_r^t`.
    pub disc_r: f64,
    /// Policy/critic featurization (one-hot state, scaled `y`, `γ_c^t`).
    pub features: Vec<f64>,
    /// Children per (action, successor slot); `None` past the horizon.
    pub edges: Option<[[Edge; 2]; 2]>,
}

/// A weighted child link.
#[derive(Clone, Copy)]
pub struct Edge {
    /// Child node index.
    pub child: usize,
    /// Transition probability.
    pub prob: f64,
}

/// The fully expanded augmented-state tree.
pub struct Tree {
    /// Nodes in pre-order; every child index exceeds its parent's.
    pub nodes: Vec<Node>,
}

/// Exact state/action values per stream under a fixed policy.
pub struct StreamValues {
    /// State values per stream, indexed by node.
    pub v: [Vec<f64>; 3],
    /// Action values per stream, indexed by node then action.
    pub q: [Vec<[f64; 2]>; 3],
}

/// Exact return-level moments of a policy.
#[derive(Debug, Clone, Copy)]
pub struct ExactMoments {
    /// Mean discounted cost return.
    pub mu: f64,
    /// Second raw moment of the cost return.
    pub e_c2: f64,
    /// Cost-return variance.
    pub sigma2: f64,
    /// Mean augmented return `β E[C²] + 2ρ E[C]`.
    pub j_tilde: f64,
    /// Mean discounted reward return.
    pub j_r: f64,
}

/// Exact importance-sampled surrogate measurements for a trial policy.
#[derive(Debug, Clone, Copy)]
pub struct ExactSurrogates {
    /// Reward surrogate gain.
    pub objective_change: f64,
    /// Expected cost-advantage shift `Z`.
    pub z: f64,
    /// Augmented-stream surrogate gain.
    pub delta_aug: f64,
    /// Constraint surrogate at the trial point.
    pub constraint_value: f64,
}

impl ExactCmdp {
    /// A reward/risk trade-off instance: action 1 pays more reward but
    /// accumulates cost quickly, so the Chebyshev constraint activates as
    /// the policy drifts toward it.
    pub fn diagnostic() -> Self {
        ExactCmdp {
            start: 0,
            gamma_c: 0.9,
            gamma_r: 0.9,
            horizon: 5,
            y_scale: 1.0 / 4.3,
            rewards: [[0.1, 1.0], [0.1, 1.0], [0.1, 1.2]],
            costs: [[0.1, 1.0], [0.1, 1.0], [0.1, 1.6]],
            successors: [
                [[(0, 0.7), (1, 0.3)], [(1, 0.5), (2, 0.5)]],
                [[(1, 0.7), (2, 0.3)], [(2, 0.5), (0, 0.5)]],
                [[(2, 0.7), (0, 0.3)], [(0, 0.5), (1, 0.5)]],
            ],
        }
    }

    /// Input width of the policy/critic featurization.
    pub fn feature_dim(&self) -> usize {
        3 + 2
    }

    fn features(&self, s: usize, y: f64, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; 5];
        out[s] = 1.0;
        out[3] = y * self.y_scale;
        out[4] = self.gamma_c.powi(t as i32);
        out
    }

    /// Expands the complete augmented-state tree.
    pub fn tree(&self) -> Tree {
        let mut nodes = Vec::new();
        self.expand(&mut nodes, self.start, 0.0, 0);
        Tree { nodes }
    }

    fn expand(&self, nodes: &mut Vec<Node>, s: usize, y: f64, t: usize) -> usize {
        let idx = nodes.len();
        nodes.push(Node {
            s,
            y,
            t,
            disc_c: self.gamma_c.powi(t as i32),
            disc_r: self.gamma_r.powi(t as i32),
            features: self.features(s, y, t),
            edges: None,
        });
        if t < self.horizon {
            let mut edges = [[Edge { child: 0, prob: 0.0 }; 2]; 2];
            for a in 0..2 {
                let y_next = y + self.gamma_c.powi(t as i32) * self.costs[s][a];
                for (slot, &(sn, prob)) in self.successors[s][a].iter().enumerate() {
                    let child = self.expand(nodes, sn, y_next, t + 1);
                    edges[a][slot] = Edge { child, prob };
                }
            }
            nodes[idx].edges = Some(edges);
        }
        idx
    }

    /// Action probabilities of a categorical policy at every node.
    pub fn policy_probs(&self, tree: &Tree, policy: &Approximator) -> Result<Vec<[f64; 2]>> {
        tree.nodes
            .iter()
            .map(|node| match policy.forward_policy(&node.features)? {
                PolicyDistribution::Categorical { probs } => Ok([probs[0], probs[1]]),
                PolicyDistribution::Gaussian { .. } => {
                    unreachable!("diagnostic CMDP uses a categorical policy")
                }
            })
            .collect()
    }

    /// Node visit probabilities under a policy (root = 1).
    pub fn node_weights(&self, tree: &Tree, probs: &[[f64; 2]]) -> Vec<f64> {
        let mut w = vec![0.0; tree.nodes.len()];
        w[0] = 1.0;
        for idx in 0..tree.nodes.len() {
            if let Some(edges) = &tree.nodes[idx].edges {
                for a in 0..2 {
                    let pa = w[idx] * probs[idx][a];
                    for e in &edges[a] {
                        w[e.child] += pa * e.prob;
                    }
                }
            }
        }
        w
    }

    /// Exact V/Q per stream under the policy the probabilities describe.
    pub fn stream_values(
        &self,
        tree: &Tree,
        probs: &[[f64; 2]],
        spec: &ConstraintSpec,
    ) -> StreamValues {
        let n = tree.nodes.len();
        let mut v = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut q = [vec![[0.0; 2]; n], vec![[0.0; 2]; n], vec![[0.0; 2]; n]];
        for idx in (0..n).rev() {
            let node = &tree.nodes[idx];
            let Some(edges) = &node.edges else { continue };
            for a in 0..2 {
                let mut succ = [0.0; 3];
                for e in &edges[a] {
                    for (k, s) in succ.iter_mut().enumerate() {
                        *s += e.prob * v[k][e.child];
                    }
                }
                let cost = self.costs[node.s][a];
                q[R][idx][a] = self.rewards[node.s][a] + self.gamma_r * succ[R];
                q[C][idx][a] = cost + self.gamma_c * succ[C];
                q[A][idx][a] =
                    augmented_cost(cost, node.y, node.disc_c, spec) + self.gamma_c * succ[A];
            }
            for k in 0..3 {
                v[k][idx] = (0..2).map(|a| probs[idx][a] * q[k][idx][a]).sum();
            }
        }
        StreamValues { v, q }
    }

    /// Exact return moments from the leaf distribution.
    pub fn moments(&self, tree: &Tree, probs: &[[f64; 2]], spec: &ConstraintSpec) -> ExactMoments {
        let w = self.node_weights(tree, probs);
        let (mut mu, mut e_c2, mut j_r) = (0.0, 0.0, 0.0);
        for (idx, node) in tree.nodes.iter().enumerate() {
            match &node.edges {
                None => {
                    mu += w[idx] * node.y;
                    e_c2 += w[idx] * node.y * node.y;
                }
                Some(_) => {
                    let mean_r: f64 =
                        (0..2).map(|a| probs[idx][a] * self.rewards[node.s][a]).sum();
                    j_r += w[idx] * node.disc_r * mean_r;
                }
            }
        }
        let sigma2 = (e_c2 - mu * mu).max(0.0);
        ExactMoments {
            mu,
            e_c2,
            sigma2,
            j_tilde: spec.beta * e_c2 + 2.0 * spec.rho * mu,
            j_r,
        }
    }

    /// Mean KL(old ‖ new) under the old policy's γ_c-discounted state
    /// visitation (absorbing mass past the horizon contributes zero).
    pub fn visitation_kl(
        &self,
        tree: &Tree,
        probs_old: &[[f64; 2]],
        probs_new: &[[f64; 2]],
    ) -> f64 {
        let w = self.node_weights(tree, probs_old);
        let mut kl = 0.0;
        for (idx, node) in tree.nodes.iter().enumerate() {
            if node.edges.is_none() {
                continue;
            }
            let mut local = 0.0;
            for a in 0..2 {
                let po = probs_old[idx][a];
                if po > 0.0 {
                    local += po * (po / probs_new[idx][a]).ln();
                }
            }
            kl += (1.0 - self.gamma_c) * node.disc_c * w[idx] * local;
        }
        kl
    }

    /// Maximal absolute expected advantages of the new policy under the old
    /// policy's augmented-cost and cost streams: `(α̃, α^C)`.
    pub fn alphas(
        &self,
        tree: &Tree,
        probs_new: &[[f64; 2]],
        values_old: &StreamValues,
    ) -> (f64, f64) {
        let (mut alpha_tilde, mut alpha_c) = (0.0f64, 0.0f64);
        for (idx, node) in tree.nodes.iter().enumerate() {
            if node.edges.is_none() {
                continue;
            }
            let mut ea = [0.0; 3];
            for a in 0..2 {
                for k in [C, A] {
                    ea[k] += probs_new[idx][a] * (values_old.q[k][idx][a] - values_old.v[k][idx]);
                }
            }
            alpha_tilde = alpha_tilde.max(ea[A].abs());
            alpha_c = alpha_c.max(ea[C].abs());
        }
        (alpha_tilde, alpha_c)
    }

    /// Exact trial surrogates mirroring the sampled line-search quantities:
    /// reward gain, cost shift `Z`, augmented gain, and the constraint value
    /// `c + ΔL̃ − (2 μ_k Z + Z²)/ε`.
    #[allow(clippy::too_many_arguments)]
    pub fn trial_surrogates(
        &self,
        tree: &Tree,
        probs_old: &[[f64; 2]],
        probs_new: &[[f64; 2]],
        values_old: &StreamValues,
        spec: &ConstraintSpec,
        mu_k: f64,
        c_offset: f64,
    ) -> ExactSurrogates {
        let w = self.node_weights(tree, probs_old);
        let (mut obj, mut z, mut daug) = (0.0, 0.0, 0.0);
        for (idx, node) in tree.nodes.iter().enumerate() {
            if node.edges.is_none() {
                continue;
            }
            let mut shift = [0.0; 3];
            for a in 0..2 {
                let dp = probs_new[idx][a] - probs_old[idx][a];
                for (k, s) in shift.iter_mut().enumerate() {
                    *s += dp * (values_old.q[k][idx][a] - values_old.v[k][idx]);
                }
            }
            obj += w[idx] * node.disc_r * shift[R];
            z += w[idx] * node.disc_c * shift[C];
            daug += w[idx] * node.disc_c * shift[A];
        }
        ExactSurrogates {
            objective_change: obj,
            z,
            delta_aug: daug,
            constraint_value: c_offset + daug - (2.0 * mu_k * z + z * z) / spec.epsilon,
        }
    }

    /// Exact objective and constraint gradients at the current policy: the
    /// visitation-weighted score sums the sampled assembly estimates.
    #[allow(clippy::too_many_arguments)]
    pub fn exact_gradients(
        &self,
        tree: &Tree,
        policy: &Approximator,
        probs: &[[f64; 2]],
        values: &StreamValues,
        spec: &ConstraintSpec,
        mu_k: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = policy.param_count();
        let w = self.node_weights(tree, probs);
        let coeff = dhat_linear_coeff(mu_k, spec);
        let mut g = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        for (idx, node) in tree.nodes.iter().enumerate() {
            if node.edges.is_none() || w[idx] == 0.0 {
                continue;
            }
            for act in 0..2 {
                let pa = probs[idx][act];
                if pa == 0.0 {
                    continue;
                }
                let adv = |k: usize| values.q[k][idx][act] - values.v[k][idx];
                let score = policy.log_prob_grad(&node.features, &Action::Discrete(act))?;
                let wg = w[idx] * node.disc_r * pa * adv(R);
                let wb = w[idx] * node.disc_c * pa * (adv(A) - coeff * adv(C));
                for (k, s) in score.iter().enumerate() {
                    g[k] += wg * s;
                    b[k] += wb * s;
                }
            }
        }
        Ok((g, b))
    }

    /// Features of every internal node (Fisher metric anchor points).
    pub fn internal_features(&self, tree: &Tree) -> Vec<Vec<f64>> {
        tree.nodes
            .iter()
            .filter(|n| n.edges.is_some())
            .map(|n| n.features.clone())
            .collect()
    }
}
