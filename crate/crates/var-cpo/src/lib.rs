//! Value-at-Risk constrained policy optimization.
//!
//! This crate implements a trust-region policy-gradient algorithm that keeps
//! the probability of an episode's cost return exceeding a threshold below a
//! configured level: `P(C(τ) ≥ ρ) ≤ ε`. The chance constraint itself is not
//! differentiable, so the optimizer works with a one-sided Chebyshev
//! surrogate on the first two moments of the cost return,
//!
//! ```text
//! (1/ε − 1)·Var[C] − (ρ − E[C])² ≤ 0   whenever E[C] < ρ,
//! ```
//!
//! which is made learnable by augmenting the state with the running
//! discounted cost and writing the squared cost return as a sum of local
//! augmented costs. Training alternates between this surrogate (when the
//! mean cost is already below ρ) and a plain expected-cost recovery
//! constraint (when it is not).
//!
//! Module map:
//!
//! - [`env`] — environment trait, cost/reward step contract, and the state
//!   augmentation carrying `(y_t, γ_c^t)`; ships the `IcyLake` gridworld and
//!   a battery-limited double integrator.
//! - [`risk`] — the constraint specification and all pure risk arithmetic
//!   (Chebyshev surrogate, augmented costs, bound diagnostics).
//! - [`approx`] — small tanh MLPs over flat `f64` parameter vectors with
//!   exact gradients, categorical/Gaussian policy heads, closed-form
//!   Fisher-vector products, and a plain-text checkpoint format.
//! - [`estimation`] — rollout storage, per-stream generalized advantage
//!   estimation, and Monte-Carlo moment estimates of the cost return.
//! - [`solver`] — the trust-region subproblem: conjugate gradients, the
//!   analytic two-multiplier dual, infeasibility recovery, and the
//!   backtracking line search.
//! - [`trainer`] — the outer training loop, metrics CSV, checkpointing, and
//!   policy evaluation.
//! - [`cli`] — the `var-cpo` command-line interface (`train`, `eval`,
//!   `plot`, `selftest`).
//!
//! Everything is deterministic for a fixed configuration, seed, and worker
//! count: RNG streams are per-worker `ChaCha` instances and all parallel
//! reductions run in a fixed order (see [`exec`]).

#![deny(missing_docs)]

pub mod approx;
pub mod cli;
pub mod env;
pub mod estimation;
pub mod exec;
pub mod risk;
pub mod solver;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration file or value failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// An environment was driven outside its contract (e.g. stepped after
    /// termination) or constructed from an invalid description.
    #[error("environment error: {0}")]
    Env(String),

    /// Mismatched dimensions between parameters, observations, or actions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numeric quantity that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A batch statistic could not be formed (e.g. no completed episodes).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The trust-region subproblem could not be solved.
    #[error("solver error: {0}")]
    Solver(String),

    /// A checkpoint file was malformed or written for a different layout.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Critic optimization diverged (final loss far above initial).
    #[error("critic divergence on {stream} stream: initial mse {initial:.6e}, final mse {final_mse:.6e}")]
    CriticDivergence {
        /// Which value stream diverged (`reward`, `cost`, `aug`).
        stream: &'static str,
        /// Mean squared error before the update epochs.
        initial: f64,
        /// Mean squared error after the update epochs.
        final_mse: f64,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
