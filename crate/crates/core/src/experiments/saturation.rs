//! One-dimensional mixture numerator against a standard normal denominator:
//! non-iterated versus iterated KuLSIF as the component count varies.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bootstrap_interval, derive_seed, mean_of, write_manifest};
use crate::error::{Error, Result};
use crate::kernels::{gram, median_bandwidth, KernelSpec};
use crate::losses::{bregman_pointwise, ratio_from_score, LossFamily};
use crate::numeric::{linspace, std_error, trapezoid};
use crate::points::{LabeledSample, Points};
use crate::selection::{best_point, score_grid, split_data, GridScore, SelectionConfig};
use crate::solver::{predict_ratios, FitProblem};
use crate::synthetic::GaussianMixture;

/// How each method's `(lambda, t)` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaturationTuning {
    /// Grid point with the smallest true error, fitted on the whole draw.
    #[default]
    Oracle,
    /// Empirical risk on a validation split, refit on the training part.
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaturationConfig {
    pub component_counts: Vec<usize>,
    /// Draws from each distribution.
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub selection: SelectionConfig,
    pub tuning: SaturationTuning,
    pub grid_size: usize,
    /// Quadrature covers `[-half_width, half_width]`.
    pub half_width: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for SaturationConfig {
    fn default() -> Self {
        Self {
            component_counts: vec![1, 2, 3],
            sizes: vec![400, 800, 1600],
            seeds: (0..10).collect(),
            selection: SelectionConfig { split: vec![0.8, 0.2], ..SelectionConfig::default() },
            tuning: SaturationTuning::default(),
            grid_size: 4096,
            half_width: 8.0,
            bootstrap_resamples: 200,
            bootstrap_seed: 0,
        }
    }
}

impl SaturationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.component_counts.is_empty() || self.component_counts.iter().any(|c| !(1..=3).contains(c)) {
            return bad("component_counts must be a nonempty subset of {1, 2, 3}");
        }
        if self.seeds.is_empty() {
            return bad("need at least one seed");
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s < 10) {
            return bad("sizes must be nonempty and at least 10");
        }
        if !self.selection.t_grid.contains(&1) {
            return bad("t_grid must contain 1 for the non-iterated fit");
        }
        if self.grid_size < 2 || !(self.half_width > 0.0) {
            return bad("quadrature grid is degenerate");
        }
        self.selection.validate()
    }
}

/// Numerator mixture: means uniform on `[-1, 1]`, standard deviations uniform
/// on `[0.3, 0.7]`, normalized uniform weights.
pub fn saturation_mixture(components: usize, seed: u64) -> Result<GaussianMixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..components).map(|_| rng.random::<f64>() + f64::MIN_POSITIVE).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift = 1.0 - weights.iter().sum::<f64>();
    weights[components - 1] += drift;
    let means = (0..components).map(|_| vec![rng.random_range(-1.0..=1.0)]).collect();
    let covs = (0..components)
        .map(|_| {
            let sd: f64 = rng.random_range(0.3..=0.7);
            DMatrix::from_element(1, 1, sd * sd)
        })
        .collect();
    GaussianMixture::new(weights, means, covs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationRecord {
    pub components: usize,
    pub size: usize,
    pub seed: u64,
    /// Twice the Bregman divergence of the `t = 1` selection.
    pub non_iterated: Option<f64>,
    pub iterated: Option<f64>,
    pub selected_t: Option<usize>,
    pub failure: Option<String>,
}

impl SaturationRecord {
    pub fn improvement(&self) -> Option<f64> {
        Some(self.non_iterated? - self.iterated?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationCell {
    pub components: usize,
    pub size: usize,
    pub seeds: usize,
    pub mean_non_iterated: Option<f64>,
    pub mean_iterated: Option<f64>,
    pub mean_improvement: Option<f64>,
    pub se_improvement: Option<f64>,
    pub ci_non_iterated: Option<[f64; 2]>,
    pub ci_iterated: Option<[f64; 2]>,
    pub ci_improvement: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaturationResult {
    pub records: Vec<SaturationRecord>,
    pub cells: Vec<SaturationCell>,
    /// Mean improvement over all sizes and seeds, per component count.
    pub improvement_by_count: Vec<(usize, Option<f64>)>,
}

impl SaturationResult {
    pub fn improvement_for(&self, components: usize) -> Option<f64> {
        self.improvement_by_count.iter().find(|(c, _)| *c == components).and_then(|(_, v)| *v)
    }
}

fn quadrature_error(est: &[f64], truth: &[f64], q: &[f64], grid: &[f64]) -> Result<f64> {
    let mut ys = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        ys.push(bregman_pointwise(LossFamily::Kulsif, truth[i], est[i])? * q[i]);
    }
    Ok(2.0 * trapezoid(grid, &ys))
}

fn refit_error(fit: &FitProblem, choice: &GridScore, config: &SaturationConfig, truth: &[f64], q: &[f64], grid: &[f64]) -> Result<f64> {
    let path = fit.path(LossFamily::Kulsif, choice.lambda, choice.t, &config.selection.cg)?;
    let model = fit.model(LossFamily::Kulsif, choice.lambda, choice.t, path.iterates.last().cloned().expect("t >= 1"));
    let est = predict_ratios(&model, &Points::from_scalars(grid))?;
    quadrature_error(&est, truth, q, grid)
}

/// Smallest true error over the grid at `t = 1` and over all `t`.
fn oracle_errors(fit: &FitProblem, config: &SaturationConfig, truth: &[f64], q: &[f64], grid: &[f64]) -> Result<(f64, f64, usize)> {
    let t_grid = &config.selection.t_grid;
    let t_max = *t_grid.iter().max().expect("validated nonempty");
    let cross = gram(fit.kernel(), &Points::from_scalars(grid), fit.anchors())?;
    let mut non = f64::INFINITY;
    let mut it = (f64::INFINITY, 0);
    let mut failures = Vec::new();
    for &lambda in &config.selection.lambda_grid {
        let path = match fit.kulsif_path(lambda, t_max) {
            Ok(p) => p,
            Err(e) => {
                failures.push(format!("lambda={lambda}: {e}"));
                continue;
            }
        };
        for &t in t_grid {
            let est: Vec<f64> = cross
                .matvec(&path.iterates[t - 1])
                .into_iter()
                .map(|s| ratio_from_score(LossFamily::Kulsif, s))
                .collect();
            let e = quadrature_error(&est, truth, q, grid)?;
            if t == 1 && e < non {
                non = e;
            }
            if e < it.0 || (e == it.0 && t < it.1) {
                it = (e, t);
            }
        }
    }
    if !(non.is_finite() && it.0.is_finite()) {
        return Err(Error::Selection(failures));
    }
    Ok((non, it.0, it.1))
}

fn run_cell(config: &SaturationConfig, components: usize, size: usize, seed: u64, grid: &[f64]) -> SaturationRecord {
    let mut rec = SaturationRecord {
        components,
        size,
        seed,
        non_iterated: None,
        iterated: None,
        selected_t: None,
        failure: None,
    };
    let outcome = (|| -> Result<(f64, f64, usize)> {
        let p = saturation_mixture(components, derive_seed(seed, components as u64))?;
        let q = GaussianMixture::standard(vec![0.0])?;
        let draw = derive_seed(derive_seed(seed, components as u64), size as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let sample = LabeledSample::new(p.sample(size, &mut rng), q.sample(size, &mut rng))?;
        let mut truth = Vec::with_capacity(grid.len());
        let mut qd = Vec::with_capacity(grid.len());
        for &x in grid {
            let lp = p.log_density(&[x])?;
            let lq = q.log_density(&[x])?;
            truth.push((lp - lq).exp());
            qd.push(lq.exp());
        }
        match config.tuning {
            SaturationTuning::Oracle => {
                let bw = median_bandwidth(&sample.pooled()?)?;
                let fit = FitProblem::new(&sample, KernelSpec::gaussian(bw)?, config.selection.weighting)?;
                oracle_errors(&fit, config, &truth, &qd, grid)
            }
            SaturationTuning::Validation => {
                let sel = SelectionConfig { seed: derive_seed(draw, 1), ..config.selection.clone() };
                let parts = split_data(&sample.numerator, &sample.denominator, &sel)?;
                let bw = median_bandwidth(&parts.train.pooled()?)?;
                let fit = FitProblem::new(&parts.train, KernelSpec::gaussian(bw)?, sel.weighting)?;
                let scores = score_grid(&fit, &parts.val, LossFamily::Kulsif, &sel)?;
                let single: Vec<GridScore> = scores.iter().filter(|g| g.t == 1).cloned().collect();
                let non = best_point(&single)?.clone();
                let it = best_point(&scores)?.clone();
                let e_non = refit_error(&fit, &non, config, &truth, &qd, grid)?;
                let e_it = refit_error(&fit, &it, config, &truth, &qd, grid)?;
                Ok((e_non, e_it, it.t))
            }
        }
    })();
    match outcome {
        Ok((a, b, t)) => {
            rec.non_iterated = Some(a);
            rec.iterated = Some(b);
            rec.selected_t = Some(t);
        }
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

fn bootstrap_mean(values: &[f64], config: &SaturationConfig, salt: u64) -> Option<[f64; 2]> {
    bootstrap_interval(values, config.bootstrap_resamples, derive_seed(config.bootstrap_seed, salt), |pick| {
        mean_of(&pick.iter().map(|v| **v).collect::<Vec<_>>())
    })
}

pub fn run_mixture_saturation_study(config: &SaturationConfig) -> Result<SaturationResult> {
    config.validate()?;
    let grid = linspace(-config.half_width, config.half_width, config.grid_size);
    let cells: Vec<(usize, usize, u64)> = config
        .component_counts
        .iter()
        .flat_map(|&c| config.sizes.iter().flat_map(move |&n| config.seeds.iter().map(move |&s| (c, n, s))))
        .collect();
    let records: Vec<SaturationRecord> = cells
        .par_iter()
        .map(|&(c, n, s)| run_cell(config, c, n, s, &grid))
        .collect();
    let mut summary = Vec::new();
    let mut salt = 0u64;
    for &components in &config.component_counts {
        for &size in &config.sizes {
            let rs: Vec<&SaturationRecord> = records.iter().filter(|r| r.components == components && r.size == size).collect();
            let non: Vec<f64> = rs.iter().filter_map(|r| r.non_iterated).collect();
            let it: Vec<f64> = rs.iter().filter_map(|r| r.iterated).collect();
            let imp: Vec<f64> = rs.iter().filter_map(|r| r.improvement()).collect();
            salt += 3;
            summary.push(SaturationCell {
                components,
                size,
                seeds: imp.len(),
                mean_non_iterated: mean_of(&non),
                mean_iterated: mean_of(&it),
                mean_improvement: mean_of(&imp),
                se_improvement: (!imp.is_empty()).then(|| std_error(&imp)),
                ci_non_iterated: bootstrap_mean(&non, config, salt),
                ci_iterated: bootstrap_mean(&it, config, salt + 1),
                ci_improvement: bootstrap_mean(&imp, config, salt + 2),
            });
        }
    }
    let improvement_by_count = config
        .component_counts
        .iter()
        .map(|&c| {
            let imp: Vec<f64> = records.iter().filter(|r| r.components == c).filter_map(|r| r.improvement()).collect();
            (c, mean_of(&imp))
        })
        .collect();
    Ok(SaturationResult { records, cells: summary, improvement_by_count })
}

/// `saturation_study.csv`, `saturation_summary.csv`, `saturation_summary.json`
/// and `saturation_manifest.json`.
pub fn write_saturation_outputs(dir: &Path, config: &SaturationConfig, result: &SaturationResult) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let mut w = csv::Writer::from_path(dir.join("saturation_study.csv"))?;
    w.write_record(["components", "size", "seed", "non_iterated", "iterated", "improvement", "selected_t"])?;
    for r in &result.records {
        w.write_record([
            r.components.to_string(),
            r.size.to_string(),
            r.seed.to_string(),
            opt(r.non_iterated),
            opt(r.iterated),
            opt(r.improvement()),
            r.selected_t.map_or_else(|| "NA".to_string(), |t| t.to_string()),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("saturation_summary.csv"))?;
    w.write_record([
        "components", "size", "seeds", "mean_non_iterated", "non_lo", "non_hi", "mean_iterated", "it_lo", "it_hi",
        "mean_improvement", "improvement_lo", "improvement_hi",
    ])?;
    let lo = |c: Option<[f64; 2]>| opt(c.map(|v| v[0]));
    let hi = |c: Option<[f64; 2]>| opt(c.map(|v| v[1]));
    for c in &result.cells {
        w.write_record([
            c.components.to_string(),
            c.size.to_string(),
            c.seeds.to_string(),
            opt(c.mean_non_iterated),
            lo(c.ci_non_iterated),
            hi(c.ci_non_iterated),
            opt(c.mean_iterated),
            lo(c.ci_iterated),
            hi(c.ci_iterated),
            opt(c.mean_improvement),
            lo(c.ci_improvement),
            hi(c.ci_improvement),
        ])?;
    }
    w.flush()?;
    crate::synthetic::write_json(&dir.join("saturation_summary.json"), result)?;
    write_manifest(
        dir,
        "saturation_manifest.json",
        "mixture_saturation_study",
        config,
        &config.seeds,
        &["saturation_study.csv", "saturation_summary.csv", "saturation_summary.json"],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_parameters_in_range() {
        for seed in 0..20 {
            for k in 1..=3 {
                let g = saturation_mixture(k, seed).unwrap();
                assert_eq!(g.components(), k);
                for (m, c) in g.means().iter().zip(g.covariances()) {
                    assert!((-1.0..=1.0).contains(&m[0]));
                    let sd = c[(0, 0)].sqrt();
                    assert!((0.3 - 1e-12..=0.7 + 1e-12).contains(&sd));
                }
            }
        }
    }

    #[test]
    fn validation() {
        let cfg = SaturationConfig { seeds: vec![], ..SaturationConfig::default() };
        assert!(matches!(run_mixture_saturation_study(&cfg), Err(Error::InvalidConfig(_))));
        let cfg = SaturationConfig { component_counts: vec![4], ..SaturationConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn small_study_runs() {
        let cfg = SaturationConfig {
            component_counts: vec![1, 3],
            sizes: vec![60],
            seeds: vec![0, 1, 2],
            grid_size: 512,
            bootstrap_resamples: 20,
            selection: SelectionConfig {
                lambda_grid: vec![1e-3, 1e-2, 1e-1],
                t_grid: vec![1, 2, 4],
                split: vec![0.8, 0.2],
                ..SelectionConfig::default()
            },
            ..SaturationConfig::default()
        };
        let res = run_mixture_saturation_study(&cfg).unwrap();
        assert_eq!(res.records.len(), 6);
        assert!(res.records.iter().all(|r| r.failure.is_none()));
        assert_eq!(res.cells.len(), 2);
        assert!(res.improvement_for(1).is_some());
        let again = run_mixture_saturation_study(&cfg).unwrap();
        assert_eq!(again.records, res.records);
        // The iterated search space contains every non-iterated candidate.
        assert!(res.records.iter().all(|r| r.improvement().unwrap() >= 0.0));

        let held_out = SaturationConfig { tuning: SaturationTuning::Validation, ..cfg };
        let res = run_mixture_saturation_study(&held_out).unwrap();
        assert!(res.records.iter().all(|r| r.failure.is_none() && r.selected_t.is_some()));
    }
}
