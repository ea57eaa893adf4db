//! Chebyshev-surrogate risk arithmetic.
//!
//! The chance constraint `P(C(τ) ≥ ρ) ≤ ε` is handled through a one-sided
//! Chebyshev bound on the first two moments of the cost return. Everything
//! here is a pure function of batch statistics and the constraint
//! specification; no sampling, no state.
//!
//! The pieces fit together as follows. With `β = 1/ε − 1`, the surrogate
//! demands
//!
//! ```text
//! β·σ² − (ρ − μ)² ≤ 0        (valid whenever μ < ρ)
//! ```
//!
//! Because `σ²` is not directly observable from rollouts, the squared cost
//! return is decomposed into per-step terms using the running discounted
//! cost `y_t = Σ_{i<t} γ_c^i c_i`:
//!
//! ```text
//! C(τ)² = Σ_t γ_c^t (γ_c^t c_t² + 2 y_t c_t),
//! ```
//!
//! which turns the moment constraint into an expected *augmented cost*
//! return `J_C̃ = E[Σ_t γ_c^t c̃_t]` with local cost
//! `c̃_t = β γ_c^t c_t² + 2(β y_t + ρ) c_t`, constrained by the dynamic
//! bound `J_C̃ ≤ d(μ) = μ²/ε + ρ²`. The identity
//! `J_C̃ − d(μ) = β σ² − (ρ − μ)²` makes the two views interchangeable.

use crate::{Error, Result};

/// Operating mode of the constrained optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    /// Chebyshev surrogate on the cost-return moments (requires `μ < ρ`).
    VaR,
    /// Expected-cost reduction used while `μ ≥ ρ`, where the surrogate is
    /// invalid; drives the mean back below the threshold.
    Recovery,
    /// Plain expected-cost constraint `μ ≤ limit` (CPO-style baseline).
    ExpectedCost,
    /// No cost constraint; reduces to unconstrained trust-region updates.
    Unconstrained,
}

impl ConstraintMode {
    /// Stable lowercase name used in metrics logs and config files.
    pub fn name(self) -> &'static str {
        match self {
            ConstraintMode::VaR => "var",
            ConstraintMode::Recovery => "recovery",
            ConstraintMode::ExpectedCost => "expected_cost",
            ConstraintMode::Unconstrained => "unconstrained",
        }
    }
}

/// Threshold, confidence level, and derived Chebyshev coefficient.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintSpec {
    /// Cost threshold ρ ( > 0, cost units).
    pub rho: f64,
    /// Violation budget ε ∈ (0, 1): we require `P(C ≥ ρ) ≤ ε`.
    pub epsilon: f64,
    /// Chebyshev coefficient `β = 1/ε − 1`, stored at construction.
    pub beta: f64,
    /// Mode the trainer is configured for (VaR runs flip to
    /// [`ConstraintMode::Recovery`] automatically whenever `μ ≥ ρ`).
    pub mode: ConstraintMode,
}

impl ConstraintSpec {
    /// Builds a VaR constraint `P(C ≥ rho) ≤ epsilon`.
    pub fn var(rho: f64, epsilon: f64) -> Result<Self> {
        Self::with_mode(rho, epsilon, ConstraintMode::VaR)
    }

    /// Builds an expected-cost constraint spec. `rho` and `epsilon` are still
    /// carried for reporting (violation fractions, exceedance thresholds).
    pub fn expected_cost(rho: f64, epsilon: f64) -> Result<Self> {
        Self::with_mode(rho, epsilon, ConstraintMode::ExpectedCost)
    }

    /// Builds an unconstrained spec; `rho`/`epsilon` are used only for
    /// reporting violation fractions against the same threshold.
    pub fn unconstrained(rho: f64, epsilon: f64) -> Result<Self> {
        Self::with_mode(rho, epsilon, ConstraintMode::Unconstrained)
    }

    fn with_mode(rho: f64, epsilon: f64, mode: ConstraintMode) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Config(format!("rho must be finite and > 0, got {rho}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0,1), got {epsilon}")));
        }
        Ok(ConstraintSpec { rho, epsilon, beta: 1.0 / epsilon - 1.0, mode })
    }
}

/// Batch estimates of the cost-return moments.
#[derive(Debug, Clone, Copy)]
pub struct MomentEstimates {
    /// Mean discounted cost return `μ = E[Σ γ_c^t c_t]`.
    pub mu: f64,
    /// Mean augmented-cost return `J_C̃ = E[Σ γ_c^t c̃_t]`.
    pub j_tilde: f64,
    /// Number of completed episodes the means were taken over.
    pub sample_count: usize,
}

/// Current constraint violation and feasibility.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintEval {
    /// Violation offset `c = J_C̃ − d(μ)`; equals the Chebyshev quadratic
    /// `β σ² − (ρ − μ)²` in expectation.
    pub c_offset: f64,
    /// Dynamic bound `d(μ) = μ²/ε + ρ²`.
    pub d_value: f64,
    /// `c_offset ≤ 0`.
    pub feasible: bool,
}

/// Left-hand side of the moment constraint: `β σ² − (ρ − μ)²`.
///
/// Non-positive values certify `P(C ≥ ρ) ≤ ε` for any cost distribution with
/// mean `μ < ρ` and variance `σ²`.
pub fn chebyshev_lhs(mu: f64, sigma2: f64, spec: &ConstraintSpec) -> f64 {
    let gap = spec.rho - mu;
    spec.beta * sigma2 - gap * gap
}

/// Augmented local cost `c̃ = β·discount·c² + 2(β y + ρ)·c`.
///
/// `discount` carries `γ_c^t` for the step at which the raw cost `c` was
/// incurred and `y` is the discounted cost accumulated strictly before it.
pub fn augmented_cost(c: f64, y: f64, discount: f64, spec: &ConstraintSpec) -> f64 {
    spec.beta * discount * c * c + 2.0 * (spec.beta * y + spec.rho) * c
}

/// Evaluates both sides of the squared-return decomposition for one cost
/// sequence: `lhs = (Σ γ_c^t c_t)²` and
/// `rhs = Σ γ_c^t (γ_c^t c_t² + 2 y_t c_t)`.
///
/// The two agree identically; this helper exists so tests and the self-test
/// command can confirm it on arbitrary sequences.
pub fn square_return_decomposition_check(costs: &[f64], gamma_c: f64) -> (f64, f64) {
    let mut ret = 0.0;
    let mut y = 0.0;
    let mut discount = 1.0;
    let mut rhs = 0.0;
    for &c in costs {
        ret += discount * c;
        rhs += discount * (discount * c * c + 2.0 * y * c);
        y += discount * c;
        discount *= gamma_c;
    }
    (ret * ret, rhs)
}

/// Dynamic bound `d(μ) = μ²/ε + ρ²` on the augmented-cost return.
pub fn d_bound(mu: f64, spec: &ConstraintSpec) -> f64 {
    mu * mu / spec.epsilon + spec.rho * spec.rho
}

/// Forms the constraint violation `c = J_C̃ − d(μ)` from batch moments.
pub fn constraint_eval(moments: &MomentEstimates, spec: &ConstraintSpec) -> ConstraintEval {
    let d_value = d_bound(moments.mu, spec);
    let c_offset = moments.j_tilde - d_value;
    ConstraintEval { c_offset, d_value, feasible: c_offset <= 0.0 }
}

/// True when the mean cost return has reached the threshold and the trainer
/// must switch to expected-cost recovery (`μ ≥ ρ`; the surrogate's validity
/// argument needs `μ < ρ`, so the boundary counts as recovery).
pub fn recovery_needed(mu: f64, spec: &ConstraintSpec) -> bool {
    mu >= spec.rho
}

/// Coefficient on the expected cost-advantage term in the gradient of the
/// linearized dynamic bound `d̂` at the current policy: `2 μ_k / ε`.
///
/// The bound's quadratic term contributes nothing at `θ_k` because the mean
/// advantage of the current policy under its own action distribution is
/// zero. The coefficient applies to the *episodic* estimator
/// `E_ep[Σ_t γ_c^t ∇log π · Â^C_t]`: written this way, the horizon
/// normalization `1/(1−γ_c)` cancels between `d̂`'s prefactor and the
/// state-visitation weights, so the same expression serves discounted and
/// undiscounted (`γ_c = 1`, empirical-horizon) operation.
pub fn dhat_linear_coeff(mu_k: f64, spec: &ConstraintSpec) -> f64 {
    2.0 * mu_k / spec.epsilon
}

/// Worst-case Chebyshev violation after one trust-region update:
/// `K (α̃ + (2 α^C / ε) M)` with `K = √(2δ) γ_c / (1−γ_c)²` and
/// `M = μ_k + α^C/(1−γ_c)`.
///
/// `alpha_tilde` and `alpha_c` are the maximal absolute expected advantages
/// of the new policy under the augmented-cost and cost streams. Returns
/// `None` for `γ_c = 1`, where `K` diverges and the diagnostic is undefined.
pub fn worst_case_bound(
    alpha_tilde: f64,
    alpha_c: f64,
    mu_k: f64,
    delta: f64,
    gamma_c: f64,
    epsilon: f64,
) -> Option<f64> {
    if gamma_c >= 1.0 {
        return None;
    }
    let one_minus = 1.0 - gamma_c;
    let k = (2.0 * delta).sqrt() * gamma_c / (one_minus * one_minus);
    let m = mu_k + alpha_c / one_minus;
    Some(k * (alpha_tilde + (2.0 * alpha_c / epsilon) * m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec_15_005() -> ConstraintSpec {
        ConstraintSpec::var(15.0, 0.05).unwrap()
    }

    #[test]
    fn beta_is_exact() {
        let spec = spec_15_005();
        assert_eq!(spec.beta, 1.0 / 0.05 - 1.0);
        let spec = ConstraintSpec::var(1.0, 0.2).unwrap();
        assert_eq!(spec.beta, 4.0);
    }

    #[test]
    fn spec_rejects_bad_parameters() {
        assert!(ConstraintSpec::var(0.0, 0.05).is_err());
        assert!(ConstraintSpec::var(-1.0, 0.05).is_err());
        assert!(ConstraintSpec::var(15.0, 0.0).is_err());
        assert!(ConstraintSpec::var(15.0, 1.0).is_err());
    }

    #[test]
    fn chebyshev_lhs_examples() {
        let spec = spec_15_005();
        assert_relative_eq!(chebyshev_lhs(0.0, 0.0, &spec), -225.0);
        assert_relative_eq!(chebyshev_lhs(5.0, 1.0, &spec), -81.0);
        // Boundary point: mean pinned at the threshold with zero variance.
        let spec100 = ConstraintSpec::var(100.0, 0.05).unwrap();
        assert_relative_eq!(chebyshev_lhs(100.0, 0.0, &spec100), 0.0);
    }

    #[test]
    fn augmented_cost_examples() {
        let spec = spec_15_005();
        assert_eq!(augmented_cost(0.0, 3.7, 0.25, &spec), 0.0);
        assert_relative_eq!(augmented_cost(2.0, 0.0, 1.0, &spec), 136.0);
        assert_relative_eq!(augmented_cost(2.0, 1.0, 0.5, &spec), 174.0);
    }

    #[test]
    fn square_return_examples() {
        let (lhs, rhs) = square_return_decomposition_check(&[1.0, 2.0], 0.5);
        assert_relative_eq!(lhs, 4.0);
        assert_relative_eq!(rhs, 4.0);
        let (lhs, rhs) = square_return_decomposition_check(&[0.0, 0.0, 0.0], 0.9);
        assert_eq!((lhs, rhs), (0.0, 0.0));
        let (lhs, rhs) = square_return_decomposition_check(&[], 1.0);
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    #[test]
    fn d_bound_examples() {
        let spec = spec_15_005();
        assert_relative_eq!(d_bound(0.0, &spec), 225.0);
        assert_relative_eq!(d_bound(3.0, &spec), 405.0);
        let spec100 = ConstraintSpec::var(100.0, 0.05).unwrap();
        assert_relative_eq!(d_bound(10.0, &spec100), 12_000.0);
    }

    #[test]
    fn constraint_eval_examples() {
        let spec = spec_15_005();
        let eval = constraint_eval(
            &MomentEstimates { mu: 0.0, j_tilde: 100.0, sample_count: 10 },
            &spec,
        );
        assert_relative_eq!(eval.c_offset, -125.0);
        assert!(eval.feasible);

        let mu = 4.2;
        let eval = constraint_eval(
            &MomentEstimates { mu, j_tilde: d_bound(mu, &spec), sample_count: 3 },
            &spec,
        );
        assert_relative_eq!(eval.c_offset, 0.0);
        assert!(eval.feasible);
    }

    #[test]
    fn recovery_predicate_boundary() {
        let spec = spec_15_005();
        assert!(!recovery_needed(14.9, &spec));
        assert!(recovery_needed(15.0, &spec));
        assert!(recovery_needed(50.0, &spec));
    }

    #[test]
    fn dhat_coeff_examples() {
        let spec = spec_15_005();
        assert_eq!(dhat_linear_coeff(0.0, &spec), 0.0);
        assert_relative_eq!(dhat_linear_coeff(3.0, &spec), 120.0);
    }

    #[test]
    fn worst_case_bound_examples() {
        assert_eq!(worst_case_bound(0.0, 0.0, 2.0, 0.01, 0.9, 0.05), Some(0.0));
        let bound = worst_case_bound(1.0, 0.1, 2.0, 0.01, 0.9, 0.05).unwrap();
        let k = (0.02f64).sqrt() * 0.9 / 0.01;
        assert_relative_eq!(k, 12.727922061357857, max_relative = 1e-12);
        assert_relative_eq!(bound, k * 13.0, max_relative = 1e-12);
        assert_relative_eq!(bound, 165.46298679765215, max_relative = 1e-9);
        assert_eq!(worst_case_bound(1.0, 0.1, 2.0, 0.01, 1.0, 0.05), None);
    }

    proptest! {
        // Squared-return decomposition against the direct-squaring oracle.
        #[test]
        fn square_return_identity(
            costs in proptest::collection::vec(-10.0f64..10.0, 0..20),
            gamma_c in 0.0f64..=1.0,
        ) {
            let (lhs, rhs) = square_return_decomposition_check(&costs, gamma_c);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        // Bound diagnostic is monotone nondecreasing in each argument.
        #[test]
        fn bound_monotone(
            at in 0.0f64..5.0, ac in 0.0f64..5.0, mu in 0.0f64..20.0,
            delta in 1e-4f64..0.1, gamma_c in 0.1f64..0.99,
            bump in 0.0f64..2.0,
        ) {
            let eps = 0.05;
            let base = worst_case_bound(at, ac, mu, delta, gamma_c, eps).unwrap();
            prop_assert!(worst_case_bound(at + bump, ac, mu, delta, gamma_c, eps).unwrap() >= base);
            prop_assert!(worst_case_bound(at, ac + bump, mu, delta, gamma_c, eps).unwrap() >= base);
            prop_assert!(worst_case_bound(at, ac, mu + bump, delta, gamma_c, eps).unwrap() >= base);
            prop_assert!(worst_case_bound(at, ac, mu, delta + bump, gamma_c, eps).unwrap() >= base);
        }

        // The feasibility flag is exactly the sign of the offset.
        #[test]
        fn feasibility_matches_sign(mu in -5.0f64..20.0, j in -500.0f64..500.0) {
            let spec = ConstraintSpec::var(15.0, 0.05).unwrap();
            let eval = constraint_eval(
                &MomentEstimates { mu, j_tilde: j, sample_count: 1 },
                &spec,
            );
            prop_assert_eq!(eval.feasible, eval.c_offset <= 0.0);
            prop_assert!((eval.c_offset - (j - d_bound(mu, &spec))).abs() < 1e-12);
        }
    }
}
