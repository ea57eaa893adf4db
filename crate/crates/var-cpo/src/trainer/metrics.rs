//! Per-iteration training metrics, their CSV serialization, and the
//! frozen-policy evaluation summary.
//!
//! CSV values are written with nine significant digits (`{:.8e}`), which is
//! enough for byte-identical reproducibility checks while staying readable.
//! Booleans are written as `0`/`1`, enum fields by name, and infinities as
//! `inf`/`-inf` (accepted back by `f64::from_str`).

use crate::risk::ConstraintMode;
use crate::solver::StepReport;

/// Everything logged per training iteration: batch statistics, constraint
/// diagnostics, and the trust-region step report.
#[derive(Debug, Clone)]
pub struct IterationMetrics {
    /// Iteration index, starting at 0.
    pub iteration: usize,
    /// Cumulative environment steps after this iteration's batch.
    pub env_steps: usize,
    /// Mean undiscounted reward return over the batch (all episodes).
    pub reward_return: f64,
    /// Mean discounted cost return μ over completed episodes.
    pub mu: f64,
    /// Mean augmented-cost return (the second-moment surrogate).
    pub j_tilde: f64,
    /// Constraint surrogate value relative to its bound; ≤ 0 is feasible.
    pub c_offset: f64,
    /// Constraint mode used for this update (`recovery` appears here when
    /// the batch mean cost breaches the threshold).
    pub mode: ConstraintMode,
    /// Empirical 95th percentile of episode cost (completed episodes).
    pub cost_p95: f64,
    /// Fraction of episodes with cost at or above the threshold ρ.
    pub violation_fraction: f64,
    /// Whether enough episodes completed for the percentile to be meaningful.
    pub percentile_reliable: bool,
    /// Fraction of episodes visiting at least one ice tile; -1 when the
    /// environment does not distinguish tile types.
    pub ice_visitation: f64,
    /// Post-update worst-case violation bound; -1 when undefined (γ_c = 1).
    pub bound: f64,
    /// Trust-region solve and line-search outcome.
    pub step: StepReport,
}

/// CSV column order; `to_csv_row` writes fields in exactly this order.
pub const CSV_HEADER: &str = "iteration,env_steps,reward_return,mu,j_tilde,c_offset,mode,\
cost_p95,violation_fraction,percentile_reliable,ice_visitation,bound,dual_case,\
direction_norm,cg_iterations,cg_residual,backtracks,step_scale,accepted,achieved_kl,\
objective_change,constraint_before,constraint_after";

/// Formats one float for the CSV (nine significant digits, parse-safe
/// infinities).
pub fn fmt_csv(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.8e}")
    }
}

impl IterationMetrics {
    /// One CSV row matching [`CSV_HEADER`].
    pub fn to_csv_row(&self) -> String {
        let s = &self.step;
        [
            self.iteration.to_string(),
            self.env_steps.to_string(),
            fmt_csv(self.reward_return),
            fmt_csv(self.mu),
            fmt_csv(self.j_tilde),
            fmt_csv(self.c_offset),
            self.mode.name().to_string(),
            fmt_csv(self.cost_p95),
            fmt_csv(self.violation_fraction),
            (self.percentile_reliable as u8).to_string(),
            fmt_csv(self.ice_visitation),
            fmt_csv(self.bound),
            s.dual_case.name().to_string(),
            fmt_csv(s.direction_norm),
            s.cg_iterations.to_string(),
            fmt_csv(s.cg_residual),
            s.backtracks.to_string(),
            fmt_csv(s.step_scale),
            (s.accepted as u8).to_string(),
            fmt_csv(s.achieved_kl),
            fmt_csv(s.objective_change),
            fmt_csv(s.constraint_before),
            fmt_csv(s.constraint_after),
        ]
        .join(",")
    }
}

/// Summary of a frozen-policy evaluation run.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    /// Episodes run.
    pub episodes: usize,
    /// Mean undiscounted reward return.
    pub reward_mean: f64,
    /// Mean discounted cost return μ.
    pub cost_mean: f64,
    /// Sample standard deviation of the cost return.
    pub cost_std: f64,
    /// Empirical cost quantiles as `(q, value)` pairs.
    pub quantiles: Vec<(f64, f64)>,
    /// Fraction of episodes with cost ≥ ρ.
    pub violation_fraction: f64,
    /// 95% binomial (Wilson) confidence interval on the violation
    /// probability.
    pub violation_ci: (f64, f64),
    /// Fraction of episodes touching ice; -1 when not applicable.
    pub ice_visitation: f64,
}

impl EvalSummary {
    /// Human-readable multi-line report.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("episodes            {}\n", self.episodes));
        out.push_str(&format!("reward mean         {:.6}\n", self.reward_mean));
        out.push_str(&format!("cost mean           {:.6}\n", self.cost_mean));
        out.push_str(&format!("cost std            {:.6}\n", self.cost_std));
        for (q, v) in &self.quantiles {
            out.push_str(&format!("cost p{:<17} {:.6}\n", (q * 100.0).round() as u32, v));
        }
        out.push_str(&format!(
            "violation fraction  {:.6} (95% CI [{:.6}, {:.6}])\n",
            self.violation_fraction, self.violation_ci.0, self.violation_ci.1
        ));
        if self.ice_visitation >= 0.0 {
            out.push_str(&format!("ice visitation      {:.6}\n", self.ice_visitation));
        }
        out
    }
}

/// Empirical quantile: the smallest sample whose empirical CDF reaches `q`.
/// `samples` need not be sorted; an empty slice returns NaN.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = sorted.len() as f64;
    let idx = (q * n).ceil() as isize - 1;
    sorted[idx.clamp(0, sorted.len() as isize - 1) as usize]
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::DualCase;

    fn sample_metrics() -> IterationMetrics {
        IterationMetrics {
            iteration: 3,
            env_steps: 16000,
            reward_return: 0.9375,
            mu: 11.25,
            j_tilde: 2500.0,
            c_offset: -12.5,
            mode: ConstraintMode::VaR,
            cost_p95: 12.0,
            violation_fraction: 0.03125,
            percentile_reliable: true,
            ice_visitation: 0.125,
            bound: -1.0,
            step: StepReport {
                dual_case: DualCase::Constrained,
                direction_norm: 0.125,
                cg_iterations: 10,
                cg_residual: 1e-9,
                backtracks: 1,
                step_scale: 0.8,
                accepted: true,
                achieved_kl: 0.009,
                objective_change: 0.004,
                constraint_before: -12.5,
                constraint_after: -13.0,
            },
        }
    }

    #[test]
    fn header_and_row_have_matching_arity() {
        let row = sample_metrics().to_csv_row();
        assert_eq!(
            row.split(',').count(),
            CSV_HEADER.split(',').count(),
            "row: {row}"
        );
    }

    #[test]
    fn row_is_parseable_and_exact() {
        let m = sample_metrics();
        let row = m.to_csv_row();
        let fields: Vec<&str> = row.split(',').collect();
        let header: Vec<&str> = CSV_HEADER.split(',').collect();
        let get = |name: &str| fields[header.iter().position(|h| *h == name).unwrap()];
        assert_eq!(get("iteration"), "3");
        assert_eq!(get("mode"), "var");
        assert_eq!(get("dual_case"), "constrained");
        assert_eq!(get("accepted"), "1");
        assert_eq!(get("percentile_reliable"), "1");
        assert_eq!(get("mu").parse::<f64>().unwrap(), 11.25);
        assert_eq!(get("mu"), "1.12500000e1");
        assert_eq!(get("bound").parse::<f64>().unwrap(), -1.0);
    }

    #[test]
    fn infinities_round_trip_through_text() {
        assert_eq!(fmt_csv(f64::NEG_INFINITY), "-inf");
        assert_eq!("-inf".parse::<f64>().unwrap(), f64::NEG_INFINITY);
        assert_eq!(fmt_csv(f64::INFINITY), "inf");
        assert_eq!("inf".parse::<f64>().unwrap(), f64::INFINITY);
    }

    #[test]
    fn quantile_matches_hand_counts() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        // CDF reaches 0.95 first at the 10th order statistic (10/10 ≥ 0.95,
        // 9/10 < 0.95).
        assert_eq!(quantile(&xs, 0.95), 10.0);
        assert_eq!(quantile(&xs, 0.90), 9.0);
        assert_eq!(quantile(&xs, 0.50), 5.0);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 10.0);
        // Unsorted input.
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn quantile_of_binomial_slip_costs() {
        // Six ice landings at cost 0.5 each plus Bin(6, 0.1) slips at 10:
        // P(≤1 slip) = 0.6^6... no — P(0) = 0.9^6 = 0.531441, P(≤1) =
        // 0.531441 + 6·0.1·0.9^5 = 0.885735, P(≤2) = 0.98415 ≥ 0.95, so the
        // 95th percentile cost is 3 + 2·10 = 23.
        let mut samples = Vec::new();
        // Deterministic surrogate sample set with the exact CDF weights over
        // 100000 draws.
        let weights = [53144, 35430, 9841, 1458, 121, 5, 1];
        for (k, w) in weights.iter().enumerate() {
            for _ in 0..*w {
                samples.push(3.0 + 10.0 * k as f64);
            }
        }
        assert_eq!(quantile(&samples, 0.95), 23.0);
    }

    #[test]
    fn wilson_examples() {
        // 0/100: interval starts at zero and stays below 4%.
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi < 0.04 && hi > 0.03, "{hi}");
        // 50/100 is symmetric around 0.5.
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo + hi - 1.0).abs() < 1e-12);
        assert!((hi - 0.5962).abs() < 5e-4, "{hi}");
        // Degenerate input.
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    }

    #[test]
    fn eval_summary_renders_all_lines() {
        let s = EvalSummary {
            episodes: 200,
            reward_mean: 0.98,
            cost_mean: 11.7,
            cost_std: 1.9,
            quantiles: vec![(0.5, 12.0), (0.95, 12.0)],
            violation_fraction: 0.01,
            violation_ci: (0.0017, 0.0357),
            ice_visitation: 0.0,
        };
        let text = s.render();
        assert!(text.contains("episodes            200"));
        assert!(text.contains("cost p50"));
        assert!(text.contains("cost p95"));
        assert!(text.contains("95% CI"));
        assert!(text.contains("ice visitation"));
    }
}
