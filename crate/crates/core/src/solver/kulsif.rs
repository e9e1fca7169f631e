//! Closed-form iterated KuLSIF.
//!
//! With numerator weight `w_p` and denominator weight `w_q`, the first-order
//! conditions of each iterated sub-problem give
//!
//! ```text
//! beta^k  = k w_p / lambda * 1_m
//! (lambda I + w_q K_qq) alpha^k = lambda alpha^{k-1} - w_q K_qp beta^k
//! ```
//!
//! where `beta` multiplies the numerator anchors and `alpha` the denominator
//! anchors. The system matrix does not depend on `k`, so it is factored once.

use nalgebra::{DMatrix, DVector};

use super::FitProblem;
use crate::error::{Error, Result};

const RESIDUAL_TOL: f64 = 1e-8;

pub(super) fn path(problem: &FitProblem, lambda: f64, t: usize) -> Result<Vec<Vec<f64>>> {
    let m = problem.n_numerator();
    let n = problem.n_denominator();
    let total = m + n;
    let (wp, wq) = problem.weighting().weights(m.max(1), n.max(1));
    let gram = problem.gram();

    let system: DMatrix<f64> = DMatrix::identity(n, n) * lambda + gram.block(m, total, m, total) * wq;
    let chol = system
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning("Cholesky of (lambda I + w_q K_qq) failed".into()))?;

    // K_qp 1_m
    let cross_ones = DVector::from_fn(n, |i, _| {
        gram.row(m + i)[..m].iter().sum::<f64>()
    });

    let mut alpha = DVector::<f64>::zeros(n);
    let mut iterates = Vec::with_capacity(t);
    for k in 1..=t {
        let beta_value = k as f64 * wp / lambda;
        let rhs = &alpha * lambda - &cross_ones * (wq * beta_value);
        let next = chol.solve(&rhs);
        let residual = (&system * &next - &rhs).norm();
        let scale = rhs.norm();
        if !(residual <= RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE)) && residual > 0.0 {
            return Err(Error::Conditioning(format!(
                "KuLSIF solve residual {residual:e} exceeds {RESIDUAL_TOL:e} * {scale:e} at iteration {k}"
            )));
        }
        alpha = next;
        let mut coeffs = vec![beta_value; m];
        coeffs.extend(alpha.iter().copied());
        iterates.push(coeffs);
    }
    Ok(iterates)
}
