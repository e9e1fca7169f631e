use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{sobolev_eval, MAX_SOBOLEV_ORDER};
use crate::losses::{ratio_from_score, sigmoid, LossFamily, SQ_POLE_MARGIN};
use crate::numeric::{linspace, trapezoid};
use crate::points::Points;
use crate::solver::{predict_scores, RatioModel, SampleWeighting};

pub const MIN_GRID_SIZE: usize = 512;

/// Problem on `[0, 1]` with uniform marginal, `eta(x) = sigmoid(f_H(x))` and
/// `f_H = h_o(0, .)` for the periodic Sobolev kernel of order
/// `o = (r + 1/2) alpha + 1/2`.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityProblem {
    pub alpha: u32,
    pub r: f64,
    pub order: u32,
    pub pi: f64,
    pub grid: Vec<f64>,
    pub f_h: Vec<f64>,
    pub eta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(skip)]
    cdf_p: Vec<f64>,
    #[serde(skip)]
    cdf_q: Vec<f64>,
    #[serde(skip)]
    score: ScoreFn,
}

#[derive(Debug, Clone, Copy)]
enum ScoreFn {
    Sobolev(u32),
    Zero,
}

impl ScoreFn {
    fn eval(self, x: f64) -> f64 {
        match self {
            ScoreFn::Sobolev(order) => sobolev_eval(0.0, x, order).expect("order validated"),
            ScoreFn::Zero => 0.0,
        }
    }
}

/// Kernel order generating `f_H`; the nearest integer to
/// `(r + 1/2) alpha + 1/2` must be even and supported.
pub fn sobolev_order_for(alpha: u32, r: f64) -> Result<u32> {
    let fail = |reason: String| Error::Construction { alpha, r, reason };
    if alpha == 0 || alpha % 2 != 0 {
        return Err(fail("alpha must be an even positive integer".into()));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(fail("r must be positive".into()));
    }
    let raw = (r + 0.5) * alpha as f64 + 0.5;
    let order = raw.round();
    if order % 2.0 != 0.0 {
        return Err(fail(format!("kernel order {raw} rounds to odd {order}")));
    }
    if order < 2.0 || order > MAX_SOBOLEV_ORDER as f64 {
        return Err(fail(format!("kernel order {order} outside 2..={MAX_SOBOLEV_ORDER}")));
    }
    Ok(order as u32)
}

pub fn make_regularity_problem(alpha: u32, r: f64, grid_size: usize) -> Result<RegularityProblem> {
    let order = sobolev_order_for(alpha, r)?;
    RegularityProblem::build(alpha, r, order, grid_size, ScoreFn::Sobolev(order))
}

impl RegularityProblem {
    /// Same construction with `f_H` replaced by zero, so `eta = 1/2`.
    pub fn symmetric(alpha: u32, r: f64, grid_size: usize) -> Result<Self> {
        let order = sobolev_order_for(alpha, r)?;
        Self::build(alpha, r, order, grid_size, ScoreFn::Zero)
    }

    fn build(alpha: u32, r: f64, order: u32, grid_size: usize, score: ScoreFn) -> Result<Self> {
        if grid_size < MIN_GRID_SIZE {
            return Err(crate::error::invalid(format!(
                "grid size must be at least {MIN_GRID_SIZE}, got {grid_size}"
            )));
        }
        let grid = linspace(0.0, 1.0, grid_size);
        let f_h: Vec<f64> = grid.iter().map(|&x| score.eval(x)).collect();
        let eta: Vec<f64> = f_h.iter().map(|&f| sigmoid(f)).collect();
        let pi = trapezoid(&grid, &eta);
        let p: Vec<f64> = eta.iter().map(|e| e / pi).collect();
        let q: Vec<f64> = eta.iter().map(|e| (1.0 - e) / (1.0 - pi)).collect();
        let beta = f_h.iter().map(|&f| (1.0 - pi) / pi * f.exp()).collect();
        let cdf_p = cumulative(&grid, &p);
        let cdf_q = cumulative(&grid, &q);
        Ok(RegularityProblem {
            alpha,
            r,
            order,
            pi,
            grid,
            f_h,
            eta,
            p,
            q,
            beta,
            cdf_p,
            cdf_q,
            score,
        })
    }

    /// Rate exponent of the a-priori schedule `lambda = c N^(-alpha / (1 + alpha (2r + 1)))`.
    pub fn lambda_exponent(&self) -> f64 {
        let a = self.alpha as f64;
        a / (1.0 + a * (2.0 * self.r + 1.0))
    }

    pub fn f_h_at(&self, x: f64) -> f64 {
        self.score.eval(x)
    }

    pub fn eta_at(&self, x: f64) -> f64 {
        sigmoid(self.f_h_at(x))
    }

    pub fn beta_at(&self, x: f64) -> f64 {
        (1.0 - self.pi) / self.pi * self.f_h_at(x).exp()
    }

    pub fn q_at(&self, x: f64) -> f64 {
        (1.0 - self.eta_at(x)) / (1.0 - self.pi)
    }

    pub fn cdf_p(&self) -> &[f64] {
        &self.cdf_p
    }

    pub fn cdf_q(&self) -> &[f64] {
        &self.cdf_q
    }

    /// Numerator and denominator counts for a pooled sample of size `total`.
    pub fn class_counts(&self, total: usize) -> (usize, usize) {
        let m = ((self.pi * total as f64).round() as usize).clamp(1, total.saturating_sub(1).max(1));
        (m, total - m)
    }

    /// `||beta - ratio||_L1` by trapezoid quadrature over the grid.
    pub fn l1_error_on_grid(&self, ratio: &[f64]) -> f64 {
        let diffs: Vec<f64> = self.beta.iter().zip(ratio).map(|(b, r)| (b - r).abs()).collect();
        trapezoid(&self.grid, &diffs)
    }

    pub fn grid_points(&self) -> Points {
        Points::from_scalars(&self.grid)
    }
}

fn cumulative(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..xs.len() {
        acc += 0.5 * (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]);
        out.push(acc);
    }
    let total = acc;
    for v in &mut out {
        *v /= total;
    }
    *out.last_mut().unwrap() = 1.0;
    out
}

fn invert_cdf(grid: &[f64], cdf: &[f64], u: f64) -> f64 {
    let hi = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
    let lo = hi - 1;
    let span = cdf[hi] - cdf[lo];
    if span <= 0.0 {
        return grid[lo];
    }
    grid[lo] + (u - cdf[lo]) / span * (grid[hi] - grid[lo])
}

/// Inverse-CDF draws from `p` and `q` with a piecewise-linear grid CDF.
pub fn sample_regularity(problem: &RegularityProblem, count_p: usize, count_q: usize, seed: u64) -> (Points, Points) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |cdf: &[f64], count: usize| -> Points {
        let xs: Vec<f64> = (0..count)
            .map(|_| invert_cdf(&problem.grid, cdf, rng.random::<f64>()))
            .collect();
        Points::from_scalars(&xs)
    };
    let xp = draw(&problem.cdf_p, count_p);
    let xq = draw(&problem.cdf_q, count_q);
    (xp, xq)
}

/// Posterior estimate corrected for the base rate `pi`: with
/// `s = Psi^-1(v)` the estimate of `eta`, returns the `u` whose odds equal
/// the ratio `((1 - pi)/pi) s/(1 - s)`, i.e. `(1 - pi) s / (s (1 - 2 pi) + pi)`.
pub fn adjusted_inv_link(problem: &RegularityProblem, family: LossFamily, v: f64) -> f64 {
    let s = family.inv_link(clamp_to_link_domain(family, v));
    let pi = problem.pi;
    (1.0 - pi) * s / (s * (1.0 - 2.0 * pi) + pi)
}

/// Scores outside the range of the link are moved to its boundary, as for
/// the ratio map.
fn clamp_to_link_domain(family: LossFamily, v: f64) -> f64 {
    match family {
        LossFamily::Kulsif => v.max(0.0),
        LossFamily::Sq => v.clamp(-1.0, 1.0 - SQ_POLE_MARGIN),
        LossFamily::Lr | LossFamily::Exp => v,
    }
}

/// Ratio estimate from a score fitted with pooled weights.
pub fn adjusted_ratio(problem: &RegularityProblem, family: LossFamily, v: f64) -> f64 {
    (1.0 - problem.pi) / problem.pi * ratio_from_score(family, v)
}

/// `||beta - g(f)||_L1([0,1])`; models fitted with pooled weights estimate
/// the posterior, so their ratios go through the base-rate adjustment.
pub fn l1_ratio_error(problem: &RegularityProblem, model: &RatioModel) -> Result<f64> {
    if model.anchors().dim() != 1 {
        return Err(crate::error::invalid("the regularity benchmark needs a 1-D model"));
    }
    let scores = predict_scores(model, &problem.grid_points())?;
    let family = model.family();
    let ratio: Vec<f64> = match model.weighting() {
        SampleWeighting::Pooled => scores.iter().map(|&v| adjusted_ratio(problem, family, v)).collect(),
        SampleWeighting::Balanced => scores.iter().map(|&v| ratio_from_score(family, v)).collect(),
    };
    Ok(problem.l1_error_on_grid(&ratio))
}
