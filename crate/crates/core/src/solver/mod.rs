//! Iterated Tikhonov fits of kernel density-ratio models.
//!
//! Every fit minimizes, for `k = 1..t`,
//!
//! ```text
//! J_k(a) = sum_i w_i l(y_i, (K a)_i) + lambda/2 (a - a_{k-1})' K (a - a_{k-1}),   a_0 = 0
//! ```
//!
//! over coefficients `a` of the kernel expansion anchored at the pooled
//! sample (numerator rows first). The weights `w_i` come from
//! [`SampleWeighting`]. KuLSIF has a closed-form recursion; the other
//! families use preconditioned nonlinear conjugate gradients.

mod cg;
mod kulsif;
pub mod line_search;
mod model;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{gram, gram_symmetric, GramMatrix, KernelSpec};
use crate::losses::{ratio_from_score_checked, Label, LossFamily};
use crate::numeric::compensated_sum;
use crate::points::{LabeledSample, Points};

pub use cg::CgOptions;
pub use model::{RatioModel, MODEL_FORMAT_VERSION};

/// Default target precision distributed over the iterations.
pub const DEFAULT_TARGET_EPS: f64 = 1e-6;

/// Growth factor of the per-iteration precision schedule.
pub const PRECISION_GROWTH: f64 = 1.4;

/// How the data-fit term weighs the two samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleWeighting {
    /// `1/m` for numerator points and `1/n` for denominator points. For
    /// KuLSIF this is the classical estimator.
    #[default]
    Balanced,
    /// `1/(m + n)` for every point.
    Pooled,
}

impl SampleWeighting {
    fn weights(self, m: usize, n: usize) -> (f64, f64) {
        match self {
            SampleWeighting::Balanced => (1.0 / m as f64, 1.0 / n as f64),
            SampleWeighting::Pooled => {
                let w = 1.0 / (m + n) as f64;
                (w, w)
            }
        }
    }
}

/// Precision required of sub-problem `k` out of `t` so that the final iterate
/// reaches `target_eps`: `target_eps * 1.4^(k - t) / t`.
pub fn subproblem_tolerance(target_eps: f64, k: usize, t: usize) -> f64 {
    target_eps * PRECISION_GROWTH.powi(k as i32 - t as i32) / t as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemReport {
    pub iteration: usize,
    pub tolerance: f64,
    pub grad_norm: f64,
    pub cg_iterations: usize,
    pub objective: f64,
    pub hit_cap: bool,
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub subproblems: Vec<SubproblemReport>,
    /// Training points whose fitted score had to be clamped by the ratio map.
    pub clamp_events: u64,
    pub wall_time_secs: f64,
}

impl FitReport {
    pub fn final_objective(&self) -> Option<f64> {
        self.subproblems.last().map(|s| s.objective)
    }
}

/// Coefficient vectors after each iteration `1..=t`.
#[derive(Debug, Clone)]
pub struct FitPath {
    pub iterates: Vec<Vec<f64>>,
    pub report: FitReport,
}

/// Pooled sample with its Gram matrix; reused across `lambda` values and
/// iterations.
#[derive(Debug, Clone)]
pub struct FitProblem {
    kernel: KernelSpec,
    weighting: SampleWeighting,
    anchors: Points,
    n_numerator: usize,
    n_denominator: usize,
    gram: GramMatrix,
    labels: Vec<Label>,
    weights: Vec<f64>,
}

impl FitProblem {
    pub fn new(sample: &LabeledSample, kernel: KernelSpec, weighting: SampleWeighting) -> Result<Self> {
        kernel.validate()?;
        let m = sample.numerator.len();
        let n = sample.denominator.len();
        if m + n < 2 {
            return Err(invalid("need at least two points in total"));
        }
        if weighting == SampleWeighting::Balanced && (m == 0 || n == 0) {
            return Err(invalid("balanced weighting needs points from both samples"));
        }
        let anchors = if m == 0 {
            sample.denominator.clone()
        } else if n == 0 {
            sample.numerator.clone()
        } else {
            sample.pooled()?
        };
        let gram = gram_symmetric(&kernel, &anchors)?;
        let (wp, wq) = weighting.weights(m.max(1), n.max(1));
        let mut labels = vec![Label::Pos; m];
        labels.extend(std::iter::repeat(Label::Neg).take(n));
        let mut weights = vec![wp; m];
        weights.extend(std::iter::repeat(wq).take(n));
        Ok(Self {
            kernel,
            weighting,
            anchors,
            n_numerator: m,
            n_denominator: n,
            gram,
            labels,
            weights,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn weighting(&self) -> SampleWeighting {
        self.weighting
    }

    pub fn anchors(&self) -> &Points {
        &self.anchors
    }

    pub fn n_numerator(&self) -> usize {
        self.n_numerator
    }

    pub fn n_denominator(&self) -> usize {
        self.n_denominator
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `J(a)` with the penalty centered at `a_prev`.
    pub fn objective(&self, family: LossFamily, lambda: f64, a: &[f64], a_prev: &[f64]) -> f64 {
        let u = self.gram.matvec(a);
        let e: Vec<f64> = a.iter().zip(a_prev).map(|(x, y)| x - y).collect();
        let ke = self.gram.matvec(&e);
        self.data_term(family, &u) + 0.5 * lambda * compensated_sum(e.iter().zip(&ke).map(|(x, y)| x * y))
    }

    /// Euclidean norm of `grad_a J(a)`.
    pub fn gradient_norm(&self, family: LossFamily, lambda: f64, a: &[f64], a_prev: &[f64]) -> f64 {
        let u = self.gram.matvec(a);
        let s = self.functional_gradient(family, lambda, &u, a, a_prev);
        norm(&self.gram.matvec(&s))
    }

    pub(crate) fn data_term(&self, family: LossFamily, u: &[f64]) -> f64 {
        compensated_sum(
            self.labels
                .iter()
                .zip(&self.weights)
                .zip(u)
                .map(|((&y, &w), &v)| w * family.loss(y, v)),
        )
    }

    /// `s = w * l'(y, Ka) + lambda (a - a_prev)`, so that `grad_a J = K s`.
    fn functional_gradient(
        &self,
        family: LossFamily,
        lambda: f64,
        u: &[f64],
        a: &[f64],
        a_prev: &[f64],
    ) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.weights[i] * family.d1(self.labels[i], u[i]) + lambda * (a[i] - a_prev[i])
            })
            .collect()
    }

    fn clamp_events(&self, family: LossFamily, coeffs: &[f64]) -> u64 {
        let u = self.gram.matvec(coeffs);
        u.iter()
            .filter(|&&v| ratio_from_score_checked(family, v).1)
            .count() as u64
    }

    /// Wraps a coefficient vector into a model.
    pub fn model(&self, family: LossFamily, lambda: f64, iterations: usize, coeffs: Vec<f64>) -> RatioModel {
        RatioModel::from_parts(
            self.kernel,
            family,
            self.weighting,
            self.anchors.clone(),
            self.n_numerator,
            coeffs,
            lambda,
            iterations,
        )
    }

    /// Closed-form iterated KuLSIF path.
    pub fn kulsif_path(&self, lambda: f64, t: usize) -> Result<FitPath> {
        check_lambda_t(lambda, t)?;
        let start = Instant::now();
        let iterates = kulsif::path(self, lambda, t)?;
        let mut report = FitReport::default();
        let mut prev = vec![0.0; self.len()];
        for (k, a) in iterates.iter().enumerate() {
            report.subproblems.push(SubproblemReport {
                iteration: k + 1,
                tolerance: 0.0,
                grad_norm: self.gradient_norm(LossFamily::Kulsif, lambda, a, &prev),
                cg_iterations: 0,
                objective: self.objective(LossFamily::Kulsif, lambda, a, &prev),
                hit_cap: false,
                stalled: false,
            });
            prev.clone_from(a);
        }
        report.clamp_events = self.clamp_events(LossFamily::Kulsif, &prev);
        report.wall_time_secs = start.elapsed().as_secs_f64();
        Ok(FitPath { iterates, report })
    }

    /// Nonlinear-CG path for any family.
    pub fn cg_path(&self, family: LossFamily, lambda: f64, t: usize, opts: &CgOptions) -> Result<FitPath> {
        let (path, failure) = self.cg_path_partial(family, lambda, t, opts)?;
        match failure {
            Some(e) => Err(e),
            None => Ok(path),
        }
    }

    /// Like [`FitProblem::cg_path`], but a failing sub-problem ends the path
    /// early and the iterates completed so far are returned with the error.
    pub fn cg_path_partial(
        &self,
        family: LossFamily,
        lambda: f64,
        t: usize,
        opts: &CgOptions,
    ) -> Result<(FitPath, Option<Error>)> {
        check_lambda_t(lambda, t)?;
        if !(opts.target_eps > 0.0) {
            return Err(invalid("target precision must be positive"));
        }
        let start = Instant::now();
        let mut iterates = Vec::with_capacity(t);
        let mut report = FitReport::default();
        let mut prev = vec![0.0; self.len()];
        let mut failure = None;
        for k in 1..=t {
            let tol = subproblem_tolerance(opts.target_eps, k, t);
            match cg::solve_subproblem(self, family, lambda, &prev, tol, k, opts) {
                Ok((a, sub)) => {
                    report.subproblems.push(sub);
                    prev.clone_from(&a);
                    iterates.push(a);
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        report.clamp_events = self.clamp_events(family, &prev);
        report.wall_time_secs = start.elapsed().as_secs_f64();
        Ok((FitPath { iterates, report }, failure))
    }

    /// Closed form for KuLSIF, CG otherwise.
    pub fn path(&self, family: LossFamily, lambda: f64, t: usize, opts: &CgOptions) -> Result<FitPath> {
        match family {
            LossFamily::Kulsif => self.kulsif_path(lambda, t),
            _ => self.cg_path(family, lambda, t, opts),
        }
    }
}

fn check_lambda_t(lambda: f64, t: usize) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive and finite, got {lambda}")));
    }
    if t == 0 {
        return Err(invalid("iteration count must be at least 1"));
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Iterated KuLSIF by the closed-form recursion (balanced weighting).
pub fn fit_kulsif(x_p: &Points, x_q: &Points, kernel: KernelSpec, lambda: f64, t: usize) -> Result<RatioModel> {
    if x_p.is_empty() || x_q.is_empty() {
        return Err(invalid("KuLSIF needs at least one point from each sample"));
    }
    let problem = FitProblem::new(
        &LabeledSample::new(x_p.clone(), x_q.clone())?,
        kernel,
        SampleWeighting::Balanced,
    )?;
    let path = problem.kulsif_path(lambda, t)?;
    let coeffs = path.iterates.into_iter().last().expect("t >= 1");
    Ok(problem.model(LossFamily::Kulsif, lambda, t, coeffs))
}

/// Iterated fit by nonlinear CG (balanced weighting).
pub fn fit_cg(
    x_p: &Points,
    x_q: &Points,
    family: LossFamily,
    kernel: KernelSpec,
    lambda: f64,
    t: usize,
    target_eps: f64,
) -> Result<(RatioModel, FitReport)> {
    let problem = FitProblem::new(
        &LabeledSample::new(x_p.clone(), x_q.clone())?,
        kernel,
        SampleWeighting::Balanced,
    )?;
    let opts = CgOptions {
        target_eps,
        ..CgOptions::default()
    };
    let path = problem.cg_path(family, lambda, t, &opts)?;
    let coeffs = path.iterates.last().cloned().expect("t >= 1");
    Ok((problem.model(family, lambda, t, coeffs), path.report))
}

/// Kernel expansion `f(x) = sum_i c_i k(anchor_i, x)`.
pub fn predict_score(model: &RatioModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.anchors().dim() {
        return Err(invalid(format!(
            "point has dimension {}, model expects {}",
            x.len(),
            model.anchors().dim()
        )));
    }
    let k = model.kernel();
    let row: Vec<f64> = model.anchors().rows().map(|a| k.eval(x, a)).collect();
    Ok(crate::kernels::dot(&row, model.coeffs()))
}

/// `g(f(x))` with the family's ratio map.
pub fn predict_ratio(model: &RatioModel, x: &[f64]) -> Result<f64> {
    Ok(crate::losses::ratio_from_score(model.family(), predict_score(model, x)?))
}

/// Scores at many points through one cross-Gram product.
pub fn predict_scores(model: &RatioModel, points: &Points) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let cross = gram(model.kernel(), points, model.anchors())?;
    Ok(cross.matvec(model.coeffs()))
}

pub fn predict_ratios(model: &RatioModel, points: &Points) -> Result<Vec<f64>> {
    Ok(predict_scores(model, points)?
        .into_iter()
        .map(|s| crate::losses::ratio_from_score(model.family(), s))
        .collect())
}

#[cfg(test)]
mod tests;
