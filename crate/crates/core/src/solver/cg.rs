//! Polak-Ribiere (PR+) nonlinear conjugate gradients for one iterated
//! sub-problem.
//!
//! The iteration runs in coefficient space but is preconditioned with `K^{-1}`:
//! the search direction is built from the functional gradient
//! `s = w * l'(y, Ka) + lambda (a - a_prev)`, and inner products use `K`.
//! Because `grad_a J = K s`, one Gram product per iteration suffices; `K d`
//! is carried along by the same recurrence as `d`.

use serde::{Deserialize, Serialize};

use super::line_search::{strong_wolfe, LineSearchFailure, WolfeParams};
use super::{norm, FitProblem, SubproblemReport, DEFAULT_TARGET_EPS};
use crate::error::{Error, Result};
use crate::losses::LossFamily;

/// Iterations between exact recomputations of `K a`.
const REFRESH_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgOptions {
    pub target_eps: f64,
    /// Cap on CG iterations per sub-problem.
    pub max_iterations: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            target_eps: DEFAULT_TARGET_EPS,
            max_iterations: 500,
            c1: 1e-4,
            c2: 0.4,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::kernels::dot(a, b)
}

struct State<'a> {
    problem: &'a FitProblem,
    family: LossFamily,
    lambda: f64,
    a_prev: &'a [f64],
    /// coefficients
    a: Vec<f64>,
    /// K a
    u: Vec<f64>,
    /// K a_prev
    u_prev: Vec<f64>,
}

impl State<'_> {
    fn value(&self) -> f64 {
        let e_ke: f64 = (0..self.a.len())
            .map(|i| (self.a[i] - self.a_prev[i]) * (self.u[i] - self.u_prev[i]))
            .sum();
        self.problem.data_term(self.family, &self.u) + 0.5 * self.lambda * e_ke
    }

    fn functional_gradient(&self) -> Vec<f64> {
        self.problem
            .functional_gradient(self.family, self.lambda, &self.u, &self.a, self.a_prev)
    }

    fn refresh(&mut self) {
        self.u = self.problem.gram().matvec(&self.a);
    }
}

/// Solves sub-problem `iteration` to `||grad_a J|| <= tol`, warm-started at
/// `a_prev`.
pub(super) fn solve_subproblem(
    problem: &FitProblem,
    family: LossFamily,
    lambda: f64,
    a_prev: &[f64],
    tol: f64,
    iteration: usize,
    opts: &CgOptions,
) -> Result<(Vec<f64>, SubproblemReport)> {
    let n = problem.len();
    let gram = problem.gram();
    let u_prev = gram.matvec(a_prev);
    let mut st = State {
        problem,
        family,
        lambda,
        a_prev,
        a: a_prev.to_vec(),
        u: u_prev.clone(),
        u_prev,
    };
    let weights = &problem.weights;
    let labels = &problem.labels;
    let wolfe = WolfeParams {
        c1: opts.c1,
        c2: opts.c2,
        ..WolfeParams::default()
    };

    let mut value = st.value();
    if !value.is_finite() {
        return Err(Error::LineSearch {
            iteration,
            reason: "objective is not finite at the starting point".into(),
        });
    }
    let mut s = st.functional_gradient();
    let mut g = gram.matvec(&s);
    let mut gnorm = norm(&g);
    let mut d: Vec<f64> = s.iter().map(|x| -x).collect();
    let mut kd: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut since_restart = 0usize;
    let mut iters = 0usize;
    let mut stalled = false;
    let mut prev_step: Option<(f64, f64)> = None;

    while gnorm > tol && iters < opts.max_iterations {
        let mut slope0 = dot(&g, &d);
        if !(slope0 < 0.0) {
            d = s.iter().map(|x| -x).collect();
            kd = g.iter().map(|x| -x).collect();
            slope0 = dot(&g, &d);
            since_restart = 0;
            if !(slope0 < 0.0) {
                stalled = true;
                break;
            }
        }

        // Penalty along the line: e'Ke + 2 tau d'Ke + tau^2 d'Kd.
        let e_ke: f64 = (0..n).map(|i| (st.a[i] - a_prev[i]) * (st.u[i] - st.u_prev[i])).sum();
        let d_ke: f64 = (0..n).map(|i| d[i] * (st.u[i] - st.u_prev[i])).sum();
        let d_kd = dot(&d, &kd);

        let line = |tau: f64| -> (f64, f64) {
            let mut data = 0.0;
            let mut ddata = 0.0;
            for i in 0..n {
                let v = st.u[i] + tau * kd[i];
                data += weights[i] * family.loss(labels[i], v);
                ddata += weights[i] * family.d1(labels[i], v) * kd[i];
            }
            let pen = 0.5 * lambda * (e_ke + 2.0 * tau * d_ke + tau * tau * d_kd);
            let dpen = lambda * (d_ke + tau * d_kd);
            (data + pen, ddata + dpen)
        };

        // Newton step along the line as the first trial.
        let curvature: f64 = (0..n)
            .map(|i| weights[i] * family.d2(labels[i], st.u[i]) * kd[i] * kd[i])
            .sum::<f64>()
            + lambda * d_kd;
        let mut tau0 = if curvature > 0.0 && curvature.is_finite() {
            -slope0 / curvature
        } else {
            1.0
        };
        if let Some((prev_tau, prev_slope)) = prev_step {
            if !(tau0.is_finite() && tau0 > 0.0) {
                tau0 = prev_tau * prev_slope / slope0;
            }
        }

        let step = match strong_wolfe(line, value, slope0, tau0, &wolfe) {
            Ok(step) => step,
            Err(LineSearchFailure::NonFinite) => {
                return Err(Error::LineSearch {
                    iteration,
                    reason: format!("non-finite objective or gradient at CG iteration {iters}"),
                })
            }
            Err(_) if since_restart > 0 => {
                // Retry once along steepest descent.
                d = s.iter().map(|x| -x).collect();
                kd = g.iter().map(|x| -x).collect();
                since_restart = 0;
                prev_step = None;
                continue;
            }
            Err(_) => {
                stalled = true;
                break;
            }
        };

        let tau = step.step;
        for i in 0..n {
            st.a[i] += tau * d[i];
            st.u[i] += tau * kd[i];
        }
        iters += 1;
        since_restart += 1;
        prev_step = Some((tau, slope0));

        if iters % REFRESH_EVERY == 0 {
            st.refresh();
        }
        value = st.value();
        if !value.is_finite() {
            return Err(Error::LineSearch {
                iteration,
                reason: format!("objective became non-finite at CG iteration {iters}"),
            });
        }

        let s_new = st.functional_gradient();
        let g_new = gram.matvec(&s_new);
        gnorm = norm(&g_new);

        let denom = dot(&g, &s);
        let numer: f64 = (0..n).map(|i| g_new[i] * (s_new[i] - s[i])).sum();
        let mut beta = if denom > 0.0 { (numer / denom).max(0.0) } else { 0.0 };
        if since_restart >= n || !beta.is_finite() {
            beta = 0.0;
            since_restart = 0;
        }
        for i in 0..n {
            d[i] = -s_new[i] + beta * d[i];
            kd[i] = -g_new[i] + beta * kd[i];
        }
        s = s_new;
        g = g_new;
    }

    // Report exact quantities at the returned point.
    st.refresh();
    let s_final = st.functional_gradient();
    let grad_norm = norm(&gram.matvec(&s_final));
    let objective = st.value();
    let report = SubproblemReport {
        iteration,
        tolerance: tol,
        grad_norm,
        cg_iterations: iters,
        objective,
        hit_cap: iters >= opts.max_iterations && grad_norm > tol,
        stalled,
    };
    Ok((st.a, report))
}
