//! Validation-split choice of the regularization strength and iteration count.
//!
//! Every `lambda` in the grid is fitted once up to the largest requested
//! iteration count; iterate `k` of that path serves as the `t = k` candidate.
//! Candidates are scored by the unpenalized empirical risk on the validation
//! partition.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::losses::{empirical_risk, LossFamily};
use crate::points::{LabeledSample, Points};
use crate::solver::{CgOptions, FitProblem, RatioModel, SampleWeighting};

/// `10^-6, 10^-5, ..., 10^4`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-6..=4).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub lambda_grid: Vec<f64>,
    pub t_grid: Vec<usize>,
    /// Train/validation or train/validation/test fractions.
    pub split: Vec<f64>,
    pub seed: u64,
    pub weighting: SampleWeighting,
    pub cg: CgOptions,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            t_grid: (1..=10).collect(),
            split: vec![0.64, 0.16, 0.2],
            seed: 0,
            weighting: SampleWeighting::Balanced,
            cg: CgOptions::default(),
        }
    }
}

impl SelectionConfig {
    /// Iteration grid used when selecting ensemble candidates.
    pub fn ensemble_t_grid() -> Vec<usize> {
        vec![1, 5, 10]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.lambda_grid.is_empty() || self.t_grid.is_empty() {
            return bad("lambda_grid and t_grid must be nonempty".into());
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return bad(format!("lambda_grid entries must be positive, got {l}"));
        }
        if self.t_grid.contains(&0) {
            return bad("t_grid entries must be at least 1".into());
        }
        if !(2..=3).contains(&self.split.len()) || self.split.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return bad("split needs two or three fractions in (0, 1)".into());
        }
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("split fractions sum to {total}, not 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Partitions {
    pub train: LabeledSample,
    pub val: LabeledSample,
    pub test: Option<LabeledSample>,
}

fn partition_sizes(n: usize, fractions: &[f64], class: &str) -> Result<Vec<usize>> {
    let mut sizes: Vec<usize> = fractions[..fractions.len() - 1]
        .iter()
        .map(|f| (f * n as f64).round() as usize)
        .collect();
    let used: usize = sizes.iter().sum();
    if used > n {
        return Err(Error::InvalidConfig(format!("{class} sample of {n} points is too small to split")));
    }
    sizes.push(n - used);
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "{class} sample of {n} points leaves an empty partition ({sizes:?})"
        )));
    }
    Ok(sizes)
}

fn split_one(x: &Points, fractions: &[f64], rng: &mut ChaCha8Rng, class: &str) -> Result<Vec<Points>> {
    let sizes = partition_sizes(x.len(), fractions, class)?;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.shuffle(rng);
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        out.push(x.select(&idx[start..start + s]));
        start += s;
    }
    Ok(out)
}

/// Seeded shuffle and contiguous split of each sample separately.
pub fn split_data(x_p: &Points, x_q: &Points, config: &SelectionConfig) -> Result<Partitions> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ps = split_one(x_p, &config.split, &mut rng, "numerator")?.into_iter();
    let mut qs = split_one(x_q, &config.split, &mut rng, "denominator")?.into_iter();
    let mut next = || -> Result<LabeledSample> {
        LabeledSample::new(ps.next().expect("sized"), qs.next().expect("sized"))
    };
    let train = next()?;
    let val = next()?;
    let test = if config.split.len() == 3 { Some(next()?) } else { None };
    Ok(Partitions { train, val, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub lambda: f64,
    pub t: usize,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionResult {
    pub family: LossFamily,
    pub kernel: KernelSpec,
    pub best_lambda: f64,
    pub best_t: usize,
    pub best_score: f64,
    pub scores: Vec<GridScore>,
    pub seed: u64,
    /// Excluded from serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub model: RatioModel,
}

/// Scores of every `(lambda, t)` point for an already prepared split.
pub fn score_grid(
    train: &FitProblem,
    val: &LabeledSample,
    family: LossFamily,
    config: &SelectionConfig,
) -> Result<Vec<GridScore>> {
    config.validate()?;
    let val_points = val.pooled()?;
    let cross = gram(train.kernel(), &val_points, train.anchors())?;
    let m_val = val.numerator.len();
    let t_max = *config.t_grid.iter().max().expect("validated");
    let per_lambda: Vec<Vec<GridScore>> = config
        .lambda_grid
        .par_iter()
        .map(|&lambda| match train.path(family, lambda, t_max, &config.cg) {
            Ok(path) => config
                .t_grid
                .iter()
                .map(|&t| {
                    let s = cross.matvec(&path.iterates[t - 1]);
                    match empirical_risk(family, &s[..m_val], &s[m_val..]) {
                        Ok(v) if v.is_finite() => GridScore { lambda, t, score: Some(v), error: None },
                        Ok(v) => GridScore { lambda, t, score: None, error: Some(format!("validation risk {v}")) },
                        Err(e) => GridScore { lambda, t, score: None, error: Some(e.to_string()) },
                    }
                })
                .collect(),
            Err(e) => config
                .t_grid
                .iter()
                .map(|&t| GridScore { lambda, t, score: None, error: Some(e.to_string()) })
                .collect(),
        })
        .collect();
    Ok(per_lambda.into_iter().flatten().collect())
}

/// Minimal score, ties to smaller `t`, then smaller `lambda`, then grid order.
pub fn best_point(scores: &[GridScore]) -> Result<&GridScore> {
    let mut best: Option<&GridScore> = None;
    for g in scores {
        if let Some(s) = g.score {
            let better = best.is_none_or(|b| {
                let bs = b.score.expect("scored");
                s < bs || (s == bs && (g.t, g.lambda) < (b.t, b.lambda))
            });
            if better {
                best = Some(g);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Selection(
            scores
                .iter()
                .map(|g| format!("lambda={} t={}: {}", g.lambda, g.t, g.error.as_deref().unwrap_or("?")))
                .collect(),
        )
    })
}

/// Fits every grid point on the training part, scores on validation, and
/// refits the winner on the training part.
pub fn select(
    x_p: &Points,
    x_q: &Points,
    family: LossFamily,
    kernel: KernelSpec,
    config: &SelectionConfig,
) -> Result<(SelectionResult, Partitions)> {
    let start = Instant::now();
    let parts = split_data(x_p, x_q, config)?;
    let train = FitProblem::new(&parts.train, kernel, config.weighting)?;
    let result = select_on(&train, &parts.val, family, config, start)?;
    Ok((result, parts))
}

pub fn select_on(
    train: &FitProblem,
    val: &LabeledSample,
    family: LossFamily,
    config: &SelectionConfig,
    start: Instant,
) -> Result<SelectionResult> {
    let scores = score_grid(train, val, family, config)?;
    let best = best_point(&scores)?.clone();
    let path = train.path(family, best.lambda, best.t, &config.cg)?;
    let coeffs = path.iterates.last().cloned().expect("t >= 1");
    let model = train.model(family, best.lambda, best.t, coeffs);
    Ok(SelectionResult {
        family,
        kernel: *train.kernel(),
        best_lambda: best.lambda,
        best_t: best.t,
        best_score: best.score.expect("scored"),
        scores,
        seed: config.seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
        model,
    })
}
