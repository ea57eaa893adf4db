//! Built-in verification suites: fast, deterministic checks of the core
//! algebra that gate a build without touching any environment.
//!
//! Three suites run, each over randomly generated finite-support cost
//! distributions:
//!
//! 1. **Square-return decomposition** — the discounted squared cost return
//!    recomputed through the stepwise accumulator identity.
//! 2. **Surrogate identity** — the enumerated expected augmented return
//!    minus its moment bound equals the closed-form quadratic
//!    `β·σ² − (ρ−μ)²`.
//! 3. **Chebyshev validity** — whenever that quadratic is ≤ 0 (and μ < ρ),
//!    the enumerated exact tail probability `P(C ≥ ρ)` is at most ε.
//!
//! The `beta_offset` parameter perturbs the β used when accumulating
//! augmented costs (and nothing else). It exists as a negative-control hook:
//! any nonzero offset must break the surrogate identity, proving the suite
//! can fail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::risk::{
    augmented_cost, chebyshev_lhs, d_bound, square_return_decomposition_check, ConstraintSpec,
};

/// A finite-support distribution over per-step cost sequences; everything
/// about it can be enumerated exactly.
#[derive(Debug, Clone)]
pub struct CostDistribution {
    /// `(probability, costs)` atoms; probabilities sum to 1.
    pub atoms: Vec<(f64, Vec<f64>)>,
    /// Cost discount γ_c.
    pub gamma_c: f64,
}

impl CostDistribution {
    /// Discounted cost return of one atom.
    fn atom_return(&self, costs: &[f64]) -> f64 {
        costs
            .iter()
            .enumerate()
            .map(|(t, c)| self.gamma_c.powi(t as i32) * c)
            .sum()
    }

    /// Exact mean of the cost return.
    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(p, c)| p * self.atom_return(c)).sum()
    }

    /// Exact variance of the cost return.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.atoms
            .iter()
            .map(|(p, c)| {
                let d = self.atom_return(c) - mu;
                p * d * d
            })
            .sum()
    }

    /// Exact tail probability `P(C ≥ rho)`.
    pub fn exact_tail(&self, rho: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(_, c)| self.atom_return(c) >= rho)
            .map(|(p, _)| p)
            .sum()
    }

    /// Enumerated expected augmented return `E[Σ_t γ_c^t c̃_t]`, with the β
    /// used in the accumulation shifted by `beta_offset` (the negative
    /// control; zero in normal operation).
    pub fn expected_augmented_return(&self, spec: &ConstraintSpec, beta_offset: f64) -> f64 {
        let mut perturbed = *spec;
        perturbed.beta += beta_offset;
        self.atoms
            .iter()
            .map(|(p, costs)| {
                let mut y = 0.0;
                let mut discount = 1.0;
                let mut total = 0.0;
                for &c in costs {
                    total += discount * augmented_cost(c, y, discount, &perturbed);
                    y += discount * c;
                    discount *= self.gamma_c;
                }
                p * total
            })
            .sum()
    }

    /// Scales every cost by `s` (returns scale linearly with it).
    pub fn scaled(&self, s: f64) -> Self {
        CostDistribution {
            atoms: self
                .atoms
                .iter()
                .map(|(p, c)| (*p, c.iter().map(|x| x * s).collect()))
                .collect(),
            gamma_c: self.gamma_c,
        }
    }
}

/// Samples a small random distribution: 2–6 atoms of 1–6 steps each,
/// costs in `[0, high]`, normalized random probabilities.
pub fn random_distribution<R: Rng>(rng: &mut R, high: f64) -> CostDistribution {
    let n_atoms = rng.gen_range(2..=6);
    let mut weights: Vec<f64> = (0..n_atoms).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let atoms = weights
        .into_iter()
        .map(|p| {
            let len = rng.gen_range(1..=6);
            let costs = (0..len).map(|_| rng.gen_range(0.0..high)).collect();
            (p, costs)
        })
        .collect();
    let gamma_c = rng.gen_range(0.5..1.0_f64);
    CostDistribution { atoms, gamma_c }
}

fn random_spec<R: Rng>(rng: &mut R) -> ConstraintSpec {
    let rho = rng.gen_range(5.0..20.0);
    let epsilon = rng.gen_range(0.02..0.4);
    ConstraintSpec::var(rho, epsilon).expect("sampled thresholds are valid")
}

/// Suite 1: stepwise squared-return decomposition against the direct square,
/// on `n` random cost sequences and discounts. Returns the failure count.
pub fn square_decomposition_failures(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..n {
        let len = rng.gen_range(1..=20);
        let costs: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..10.0)).collect();
        let gamma_c = rng.gen_range(0.1..1.0);
        let (direct, decomposed) = square_return_decomposition_check(&costs, gamma_c);
        if (direct - decomposed).abs() >= 1e-9 * (1.0 + direct.abs()) {
            failures += 1;
        }
    }
    failures
}

/// Suite 2: enumerated `E[J_C̃] − d(μ)` against the closed quadratic form
/// `β σ² − (ρ−μ)²` on `n` random distributions with μ < ρ. `beta_offset`
/// perturbs only the accumulation side (the negative-control hook).
pub fn surrogate_identity_failures(n: usize, seed: u64, beta_offset: f64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut done = 0;
    while done < n {
        let spec = random_spec(&mut rng);
        let mut dist = random_distribution(&mut rng, spec.rho * 1.5);
        if dist.mean() >= spec.rho {
            // The identity needs μ < ρ; shrink the distribution into range.
            dist = dist.scaled(0.5 * spec.rho / dist.mean());
        }
        let enumerated =
            dist.expected_augmented_return(&spec, beta_offset) - d_bound(dist.mean(), &spec);
        let closed = chebyshev_lhs(dist.mean(), dist.variance(), &spec);
        if (enumerated - closed).abs() >= 1e-9 * (1.0 + closed.abs()) {
            failures += 1;
        }
        done += 1;
    }
    failures
}

/// Suite 3: for `n` random distributions adjusted until the surrogate margin
/// is ≤ 0 (with μ < ρ), the enumerated exact tail must satisfy
/// `P(C ≥ ρ) ≤ ε`. Returns the counterexample count.
pub fn chebyshev_validity_failures(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..n {
        let spec = random_spec(&mut rng);
        let mut dist = random_distribution(&mut rng, spec.rho * 1.5);
        // Scaling costs down always reaches feasibility: the margin tends to
        // −ρ² < 0 as the distribution collapses toward zero.
        for _ in 0..200 {
            let feasible = dist.mean() < spec.rho
                && chebyshev_lhs(dist.mean(), dist.variance(), &spec) <= 0.0;
            if feasible {
                break;
            }
            dist = dist.scaled(0.7);
        }
        assert!(
            dist.mean() < spec.rho
                && chebyshev_lhs(dist.mean(), dist.variance(), &spec) <= 0.0,
            "scaling must reach a feasible distribution"
        );
        if dist.exact_tail(spec.rho) > spec.epsilon + 1e-12 {
            failures += 1;
        }
    }
    failures
}

/// One suite's outcome.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    /// Human-readable suite name.
    pub name: &'static str,
    /// Cases run.
    pub cases: usize,
    /// Cases failed.
    pub failures: usize,
}

impl SuiteResult {
    /// Whether the suite passed cleanly.
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Runs all suites at reduced counts; `beta_offset` is the negative-control
/// hook and is zero in normal operation.
pub fn run_suites(beta_offset: f64) -> Vec<SuiteResult> {
    vec![
        SuiteResult {
            name: "square-return decomposition",
            cases: 200,
            failures: square_decomposition_failures(200, 11),
        },
        SuiteResult {
            name: "surrogate moment identity",
            cases: 200,
            failures: surrogate_identity_failures(200, 12, beta_offset),
        },
        SuiteResult {
            name: "chebyshev tail validity",
            cases: 200,
            failures: chebyshev_validity_failures(200, 13),
        },
    ]
}

/// Runs the suites and prints one pass/fail line each (the results are never
/// suppressed). Returns `true` when everything passed.
pub fn run_selftest() -> bool {
    let results = run_suites(0.0);
    let mut all = true;
    for r in &results {
        if r.passed() {
            println!("{:<30} pass ({} cases)", r.name, r.cases);
        } else {
            println!("{:<30} FAIL ({} of {} cases)", r.name, r.failures, r.cases);
            all = false;
        }
    }
    all
}
