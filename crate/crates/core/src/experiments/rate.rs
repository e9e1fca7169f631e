//! Error of iterated fits on the known-regularity problem as a function of
//! sample size, with `lambda = c N^(-alpha / (1 + alpha (2r + 1)))`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bootstrap_interval, derive_seed, log_log_fit, mean_of, write_manifest};
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::losses::{ratio_from_score, LossFamily};
use crate::numeric::{mean, std_error};
use crate::points::LabeledSample;
use crate::solver::{CgOptions, FitProblem, SampleWeighting};
use crate::synthetic::{adjusted_ratio, make_regularity_problem, sample_regularity, RegularityProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateStudyConfig {
    pub alpha: u32,
    pub r: f64,
    pub t_values: Vec<usize>,
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Constants `c` of the `lambda` schedule.
    pub c_values: Vec<f64>,
    pub grid_size: usize,
    pub family: LossFamily,
    pub weighting: SampleWeighting,
    pub cg: CgOptions,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for RateStudyConfig {
    fn default() -> Self {
        Self {
            alpha: 2,
            r: 1.25,
            t_values: vec![1, 8],
            sizes: vec![250, 500, 1000, 2000, 4000],
            seeds: (0..10).collect(),
            c_values: vec![0.1, 1.0, 10.0],
            grid_size: 4096,
            family: LossFamily::Lr,
            weighting: SampleWeighting::Pooled,
            cg: CgOptions::default(),
            bootstrap_resamples: 200,
            bootstrap_seed: 0,
        }
    }
}

impl RateStudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.sizes.len() < 4 {
            return bad("rate study needs at least four sample sizes to fit a slope");
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) || self.sizes[0] < 4 {
            return bad("sizes must be strictly increasing and at least 4");
        }
        if self.seeds.len() < 5 {
            return bad("rate study needs at least five seeds");
        }
        if self.t_values.is_empty() || self.t_values.contains(&0) {
            return bad("t_values must be nonempty and positive");
        }
        if self.c_values.is_empty() || self.c_values.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return bad("c_values must be nonempty and positive");
        }
        Ok(())
    }

    pub fn lambda(&self, problem: &RegularityProblem, c: f64, size: usize) -> f64 {
        c * (size as f64).powf(-problem.lambda_exponent())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub size: usize,
    pub t: usize,
    pub seed: u64,
    pub c: f64,
    pub lambda: f64,
    /// `None` when the fit failed.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCurve {
    pub t: usize,
    pub c: f64,
    pub sizes: Vec<usize>,
    pub mean_errors: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub residuals: Vec<f64>,
    pub slope_ci: Option<[f64; 2]>,
    pub missing_cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateStudyResult {
    pub alpha: u32,
    pub r: f64,
    pub kernel_order: u32,
    pub pi: f64,
    pub lambda_exponent: f64,
    #[serde(skip)]
    pub records: Vec<RateRecord>,
    /// One curve per `(t, c)`.
    pub curves: Vec<RateCurve>,
    /// Per `t`, the curve of the `c` with the smallest mean log error.
    pub best: Vec<RateCurve>,
}

impl RateStudyResult {
    pub fn best_for(&self, t: usize) -> Option<&RateCurve> {
        self.best.iter().find(|c| c.t == t)
    }
}

fn fit_cell(
    problem: &RegularityProblem,
    config: &RateStudyConfig,
    size: usize,
    seed: u64,
) -> Vec<RateRecord> {
    let t_max = *config.t_values.iter().max().expect("validated");
    let fail = |c: f64, lambda: f64| -> Vec<RateRecord> {
        config
            .t_values
            .iter()
            .map(|&t| RateRecord { size, t, seed, c, lambda, error: None })
            .collect()
    };
    let (m, n) = problem.class_counts(size);
    let (xp, xq) = sample_regularity(problem, m, n, derive_seed(seed, size as u64));
    let kernel = KernelSpec::PeriodicSobolev { order: problem.alpha };
    let setup = LabeledSample::new(xp, xq)
        .and_then(|s| FitProblem::new(&s, kernel, config.weighting))
        .and_then(|fp| Ok((gram(&kernel, &problem.grid_points(), fp.anchors())?, fp)));
    let (cross, fit) = match setup {
        Ok(v) => v,
        Err(e) => {
            log::warn!("rate study cell N={size} seed={seed}: {e}");
            return config.c_values.iter().flat_map(|&c| fail(c, config.lambda(problem, c, size))).collect();
        }
    };
    let mut out = Vec::new();
    for &c in &config.c_values {
        let lambda = config.lambda(problem, c, size);
        match fit.path(config.family, lambda, t_max, &config.cg) {
            Ok(path) => {
                for &t in &config.t_values {
                    let scores = cross.matvec(&path.iterates[t - 1]);
                    let ratio: Vec<f64> = match config.weighting {
                        SampleWeighting::Pooled => scores.iter().map(|&v| adjusted_ratio(problem, config.family, v)).collect(),
                        SampleWeighting::Balanced => scores.iter().map(|&v| ratio_from_score(config.family, v)).collect(),
                    };
                    let e = problem.l1_error_on_grid(&ratio);
                    out.push(RateRecord { size, t, seed, c, lambda, error: e.is_finite().then_some(e) });
                }
            }
            Err(e) => {
                log::warn!("rate study fit N={size} seed={seed} c={c}: {e}");
                out.extend(fail(c, lambda));
            }
        }
    }
    out
}

fn build_curve(config: &RateStudyConfig, records: &[RateRecord], t: usize, c: f64, boot_seed: u64) -> RateCurve {
    let mut sizes = Vec::new();
    let mut means = Vec::new();
    let mut ses = Vec::new();
    let mut missing = 0;
    // per seed, the errors at each size (None when missing)
    let mut by_seed: Vec<Vec<Option<f64>>> = vec![Vec::new(); config.seeds.len()];
    for &size in &config.sizes {
        let errs: Vec<Option<f64>> = config
            .seeds
            .iter()
            .map(|&s| {
                records
                    .iter()
                    .find(|r| r.size == size && r.t == t && r.seed == s && r.c == c)
                    .and_then(|r| r.error)
            })
            .collect();
        missing += errs.iter().filter(|e| e.is_none()).count();
        let present: Vec<f64> = errs.iter().flatten().copied().collect();
        if let Some(m) = mean_of(&present) {
            sizes.push(size);
            means.push(m);
            ses.push(std_error(&present));
            for (i, e) in errs.iter().enumerate() {
                by_seed[i].push(*e);
            }
        }
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let fit = if sizes.len() >= 4 { log_log_fit(&xs, &means) } else { None };
    let slope_ci = fit.as_ref().and_then(|_| {
        bootstrap_interval(&by_seed, config.bootstrap_resamples, boot_seed, |pick| {
            let means: Option<Vec<f64>> = (0..xs.len())
                .map(|j| mean_of(&pick.iter().filter_map(|s| s[j]).collect::<Vec<_>>()))
                .collect();
            log_log_fit(&xs, &means?).map(|f| f.0)
        })
    });
    RateCurve {
        t,
        c,
        sizes,
        mean_errors: means,
        std_errors: ses,
        slope: fit.as_ref().map(|f| f.0),
        intercept: fit.as_ref().map(|f| f.1),
        residuals: fit.map(|f| f.2).unwrap_or_default(),
        slope_ci,
        missing_cells: missing,
    }
}

pub fn run_rate_study(config: &RateStudyConfig) -> Result<RateStudyResult> {
    config.validate()?;
    let problem = make_regularity_problem(config.alpha, config.r, config.grid_size)?;
    let cells: Vec<(usize, u64)> = config
        .sizes
        .iter()
        .flat_map(|&n| config.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let records: Vec<RateRecord> = cells
        .par_iter()
        .map(|&(size, seed)| fit_cell(&problem, config, size, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let mut curves = Vec::new();
    let mut best = Vec::new();
    for (ti, &t) in config.t_values.iter().enumerate() {
        let mut chosen: Option<(f64, RateCurve)> = None;
        for (ci, &c) in config.c_values.iter().enumerate() {
            let boot = super::derive_seed(config.bootstrap_seed, (ti * config.c_values.len() + ci) as u64);
            let curve = build_curve(config, &records, t, c, boot);
            let score = if curve.sizes.len() == config.sizes.len() {
                mean(&curve.mean_errors.iter().map(|e| e.ln()).collect::<Vec<_>>())
            } else {
                f64::INFINITY
            };
            if chosen.as_ref().is_none_or(|(s, _)| score < *s) {
                chosen = Some((score, curve.clone()));
            }
            curves.push(curve);
        }
        best.push(chosen.expect("c_values nonempty").1);
    }
    Ok(RateStudyResult {
        alpha: config.alpha,
        r: config.r,
        kernel_order: problem.order,
        pi: problem.pi,
        lambda_exponent: problem.lambda_exponent(),
        records,
        curves,
        best,
    })
}

/// `rate_study.csv`, `rate_slopes.json` and `rate_study_manifest.json`.
pub fn write_rate_outputs(dir: &Path, config: &RateStudyConfig, result: &RateStudyResult) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("rate_study.csv"))?;
    w.write_record(["size", "t", "seed", "c", "lambda", "error"])?;
    for r in &result.records {
        w.write_record([
            r.size.to_string(),
            r.t.to_string(),
            r.seed.to_string(),
            r.c.to_string(),
            r.lambda.to_string(),
            r.error.map_or_else(|| "NA".to_string(), |e| e.to_string()),
        ])?;
    }
    w.flush()?;
    crate::synthetic::write_json(&dir.join("rate_slopes.json"), result)?;
    write_manifest(
        dir,
        "rate_study_manifest.json",
        "rate_study",
        config,
        &config.seeds,
        &["rate_study.csv", "rate_slopes.json"],
    )
}
