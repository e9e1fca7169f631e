//! Importance-weighted ensembling of precomputed candidate predictions.
//!
//! Given candidate outputs `f_1..f_l` on source samples with importance
//! weights `w_j ~ dP_target/dP_source (x_j)`, the coefficients minimize
//!
//! ```text
//! sum_j w_j || sum_i c_i f_i(x_j) - y_j ||^2
//! ```
//!
//! through a truncated pseudo-inverse. Results are reported for each
//! truncation threshold `rcond` and averaged over the grid.

mod io;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use io::{
    ingest_candidates, read_candidate_file, read_features_file, read_labels_file, read_predictions, read_weights_file,
    write_candidate_file, write_labels_file, write_weights_file, CandidateFiles, IdTable, WeightSource,
};

/// `10^-4, ..., 10^-1`.
pub fn default_rcond_grid() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1]
}

/// Where the truncation acts relative to the importance weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationOrder {
    /// Truncate the SVD of `W^(1/2) F`.
    #[default]
    Weighted,
    /// Truncate the SVD of `F`, then solve the weighted problem in the
    /// retained right-singular subspace.
    Unweighted,
}

/// Candidate outputs on `n` samples: `k` columns per candidate (`k = 1` for
/// binary scores). Stored as an `(n k) x l` design matrix whose row
/// `j k + c` holds class `c` of sample `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    n_samples: usize,
    n_classes: usize,
    design: DMatrix<f64>,
}

impl Predictions {
    /// One `n x k` block per candidate.
    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| invalid("need at least one candidate"))?;
        let (n, k) = first.shape();
        if n == 0 || k == 0 {
            return Err(invalid("candidate blocks must be nonempty"));
        }
        if blocks.iter().any(|b| b.shape() != (n, k)) {
            return Err(invalid("candidate blocks differ in shape"));
        }
        if blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(invalid("candidate predictions must be finite"));
        }
        let design = DMatrix::from_fn(n * k, blocks.len(), |row, i| blocks[i][(row / k, row % k)]);
        Ok(Predictions { n_samples: n, n_classes: k, design })
    }

    /// Binary case: an `n x l` matrix of candidate scores.
    pub fn from_binary(matrix: DMatrix<f64>) -> Result<Self> {
        let blocks: Vec<DMatrix<f64>> = matrix.column_iter().map(|c| DMatrix::from_column_slice(c.len(), 1, c.as_slice())).collect();
        Self::from_blocks(&blocks)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_candidates(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Block of candidate `i`, `n x k`.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        let k = self.n_classes;
        DMatrix::from_fn(self.n_samples, k, |j, c| self.design[(j * k + c, i)])
    }

    /// Combined outputs, `n x k`.
    pub fn combine(&self, c: &[f64]) -> DMatrix<f64> {
        let out = &self.design * DVector::from_column_slice(c);
        DMatrix::from_row_slice(self.n_samples, self.n_classes, out.as_slice())
    }
}

/// Real targets for binary problems, class indices for multiclass ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    Binary(Vec<f64>),
    Classes(Vec<usize>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Binary(v) => v.len(),
            Labels::Classes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn targets(&self, n_classes: usize) -> Result<DVector<f64>> {
        match self {
            Labels::Binary(y) if n_classes == 1 => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("labels must be finite"));
                }
                Ok(DVector::from_column_slice(y))
            }
            Labels::Classes(y) if n_classes > 1 => {
                let mut t = DVector::zeros(y.len() * n_classes);
                for (j, &c) in y.iter().enumerate() {
                    if c >= n_classes {
                        return Err(invalid(format!("class {c} out of range for {n_classes} classes")));
                    }
                    t[j * n_classes + c] = 1.0;
                }
                Ok(t)
            }
            _ => Err(invalid("label kind does not match the number of prediction columns")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleProblem {
    pub predictions: Predictions,
    pub labels: Labels,
    pub weights: Vec<f64>,
    pub rcond_grid: Vec<f64>,
    pub order: TruncationOrder,
}

impl EnsembleProblem {
    pub fn new(predictions: Predictions, labels: Labels, weights: Vec<f64>) -> Result<Self> {
        let p = EnsembleProblem {
            predictions,
            labels,
            weights,
            rcond_grid: default_rcond_grid(),
            order: TruncationOrder::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.predictions.n_samples();
        if self.labels.len() != n || self.weights.len() != n {
            return Err(invalid(format!(
                "{n} prediction rows but {} labels and {} weights",
                self.labels.len(),
                self.weights.len()
            )));
        }
        if let Some((j, w)) = self.weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(invalid(format!("weight {j} is {w}; weights must be finite and nonnegative")));
        }
        if self.rcond_grid.is_empty() || self.rcond_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(invalid("rcond grid must be nonempty and nonnegative"));
        }
        self.labels.targets(self.predictions.n_classes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcondSolution {
    pub rcond: f64,
    pub coefficients: Vec<f64>,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub order: TruncationOrder,
    pub per_rcond: Vec<RcondSolution>,
}

/// Truncated pseudo-inverse solution `sum_{s_i >= rcond s_max} v_i (u_i' b) / s_i`
/// and the retained right-singular basis. Singular values below the
/// round-off level are always dropped.
fn truncated_solve(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> (DVector<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let floor = f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let cut = rcond.max(floor) * s_max;
    let mut x = DVector::zeros(a.ncols());
    let mut kept = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > 0.0 && s >= cut {
            x += vt.row(i).transpose() * (u.column(i).dot(b) / s);
            kept.push(i);
        }
    }
    let basis = DMatrix::from_fn(a.ncols(), kept.len(), |r, c| vt[(kept[c], r)]);
    (x, basis)
}

/// Retained right-singular basis for one threshold, `l x rank`.
pub fn retained_basis(problem: &EnsembleProblem, rcond: f64) -> Result<DMatrix<f64>> {
    let (a, b) = weighted_system(problem)?;
    let target = match problem.order {
        TruncationOrder::Weighted => a,
        TruncationOrder::Unweighted => problem.predictions.design().clone(),
    };
    Ok(truncated_solve(&target, &b, rcond).1)
}

fn weighted_system(problem: &EnsembleProblem) -> Result<(DMatrix<f64>, DVector<f64>)> {
    problem.validate()?;
    if problem.weights.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let k = problem.predictions.n_classes();
    let y = problem.labels.targets(k)?;
    let root: Vec<f64> = problem.weights.iter().map(|w| w.sqrt()).collect();
    let mut a = problem.predictions.design().clone();
    let mut b = y;
    for r in 0..a.nrows() {
        let s = root[r / k];
        a.row_mut(r).scale_mut(s);
        b[r] *= s;
    }
    Ok((a, b))
}

pub fn solve_ensemble(problem: &EnsembleProblem) -> Result<EnsembleWeights> {
    let (a, b) = weighted_system(problem)?;
    let per_rcond = problem
        .rcond_grid
        .par_iter()
        .map(|&rcond| {
            let (c, rank) = match problem.order {
                TruncationOrder::Weighted => {
                    let (c, basis) = truncated_solve(&a, &b, rcond);
                    (c, basis.ncols())
                }
                TruncationOrder::Unweighted => {
                    let (_, basis) = truncated_solve(problem.predictions.design(), &b, rcond);
                    let (z, _) = truncated_solve(&(&a * &basis), &b, 0.0);
                    (&basis * z, basis.ncols())
                }
            };
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Conditioning(format!("non-finite ensemble coefficients at rcond {rcond}")));
            }
            Ok(RcondSolution { rcond, coefficients: c.as_slice().to_vec(), rank })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleWeights { order: problem.order, per_rcond })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcondAccuracy {
    pub rcond: f64,
    pub coefficients: Vec<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEvaluation {
    pub per_rcond: Vec<RcondAccuracy>,
    pub averaged_accuracy: f64,
}

/// Sign agreement for binary labels, argmax over class columns otherwise.
pub fn accuracy(predictions: &Predictions, labels: &Labels, coefficients: &[f64]) -> Result<f64> {
    let n = predictions.n_samples();
    if n == 0 || labels.len() != n {
        return Err(invalid("target set is empty or does not match the labels"));
    }
    if coefficients.len() != predictions.n_candidates() {
        return Err(invalid("coefficient count does not match the candidates"));
    }
    let out = predictions.combine(coefficients);
    let hits = match labels {
        Labels::Binary(y) => (0..n).filter(|&j| (out[(j, 0)] >= 0.0) == (y[j] >= 0.0)).count(),
        Labels::Classes(y) => (0..n)
            .filter(|&j| {
                let row = out.row(j);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best == y[j]
            })
            .count(),
    };
    Ok(hits as f64 / n as f64)
}

pub fn evaluate_ensemble(weights: &EnsembleWeights, target: &Predictions, labels: &Labels) -> Result<EnsembleEvaluation> {
    if weights.per_rcond.is_empty() {
        return Err(invalid("no ensemble solutions to evaluate"));
    }
    let per_rcond = weights
        .per_rcond
        .iter()
        .map(|s| {
            Ok(RcondAccuracy {
                rcond: s.rcond,
                coefficients: s.coefficients.clone(),
                accuracy: accuracy(target, labels, &s.coefficients)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let averaged_accuracy = crate::numeric::mean(&per_rcond.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    Ok(EnsembleEvaluation { per_rcond, averaged_accuracy })
}
