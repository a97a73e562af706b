//! Closed-form operation counts for the likelihood evaluations.

use serde::{Deserialize, Serialize};

use crate::linalg::DEFAULT_FLOPS_PER_CMAC;
use crate::optimizer::{EstimationResult, Target};

/// The four evaluation costs at a given `(M, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopPolynomials {
    pub cost_d: i64,
    pub cost_s: i64,
    pub cost_d_with_derivs: i64,
    pub cost_s_with_derivs: i64,
}

/// Evaluates the polynomials in exact integer arithmetic.
pub fn flop_polynomials(m: usize, k: usize) -> FlopPolynomials {
    let m = m as i64;
    let k = k as i64;
    let (k2, k3, m2) = (k * k, k * k * k, m * m);
    FlopPolynomials {
        cost_d: -2 * k3 + 8 * k2 * m + 8 * k * m2 + 2 * k * m + 46 * m2 + 14,
        cost_s: -2 * k3 + 24 * k2 * m - 2 * k2 + 16 * k * m2 + 2 * k * m + 2 * k + 64 * m2 + 18,
        cost_d_with_derivs: 8 * k3 + 72 * k2 * m + 38 * k2 + 40 * k * m2 - 4 * k * m + 46 * m2 + 20,
        cost_s_with_derivs: 24 * k3 + 112 * k2 * m + 80 * k2 + 192 * k * m2 + 37 * k * m + 3 * k + 236 * m2 + 3 * m + 32,
    }
}

/// Cost of one grid candidate in the incremental line search with `k`
/// angles already fixed: one projection against `k` orthonormal columns and
/// one quadratic form in `R_z`.
pub fn line_search_eval_cost(m: usize, k: usize) -> i64 {
    let m = m as i64;
    let k = k as i64;
    DEFAULT_FLOPS_PER_CMAC as i64 * (m * m + m + 2 * m * k) + 2 * m
}

/// Model flop count of a whole estimation run.
///
/// Each angle-insertion step is charged its grid evaluations plus its Newton
/// iterations on the uniform-noise cost at the current model order. The
/// refinement stage is charged per Newton iteration with derivatives and per
/// rejected trial point without.
pub fn total_flop_estimate(result: &EstimationResult, m: usize, k: usize) -> f64 {
    let mut total: i64 = 0;
    for (i, &evals) in result.line_search_evals.iter().enumerate() {
        total += evals as i64 * line_search_eval_cost(m, i);
    }
    for (i, &iters) in result.stage1_iterations.iter().enumerate() {
        let p = flop_polynomials(m, i + 1);
        let extra = result.stage1_extra_evals.get(i).copied().unwrap_or(0) as i64;
        total += iters as i64 * p.cost_d_with_derivs + extra * p.cost_d;
    }
    if result.target != Target::DmlO {
        let p = flop_polynomials(m, k);
        let (with, without) = if result.target.is_stochastic() {
            (p.cost_s_with_derivs, p.cost_s)
        } else {
            (p.cost_d_with_derivs, p.cost_d)
        };
        total += result.stage3_newton_iterations as i64 * with + result.stage3_extra_evals as i64 * without;
    }
    total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let p = flop_polynomials(11, 3);
        assert_eq!((p.cost_d, p.cost_s, p.cost_d_with_derivs, p.cost_s_with_derivs), (9288, 15946, 27660, 112003));
        assert_eq!(flop_polynomials(1, 1).cost_d, 76);
    }

    #[test]
    fn stochastic_costs_more() {
        for m in 1..=32 {
            for k in 1..=m {
                let p = flop_polynomials(m, k);
                assert!(p.cost_s > p.cost_d, "M={m} K={k}");
            }
        }
    }
}
