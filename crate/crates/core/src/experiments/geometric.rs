//! Table-style benchmark on random Gaussian-mixture pairs with exact ratios.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, write_manifest};
use crate::error::{Error, Result};
use crate::kernels::{median_bandwidth, KernelSpec};
use crate::losses::{bregman_error_sampled, LossFamily};
use crate::numeric::{mean, std_dev};
use crate::selection::{best_point, score_grid, split_data, GridScore, SelectionConfig};
use crate::solver::{predict_ratios, FitProblem};
use crate::synthetic::{make_geometric_problem_with_dim, MixturePairProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometricConfig {
    pub dataset_count: usize,
    /// Seed from which the dataset parameters are derived.
    pub dataset_seed: u64,
    pub dim: usize,
    /// Draws from each of the two distributions.
    pub sample_count: usize,
    pub seeds: Vec<u64>,
    pub families: Vec<LossFamily>,
    pub selection: SelectionConfig,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        Self {
            dataset_count: 5,
            dataset_seed: 0,
            dim: 10,
            sample_count: 1000,
            seeds: (0..5).collect(),
            families: vec![LossFamily::Kulsif],
            selection: SelectionConfig::default(),
        }
    }
}

impl GeometricConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.sample_count < 100 {
            return bad("sample_count must be at least 100");
        }
        if self.dataset_count == 0 || self.seeds.is_empty() || self.families.is_empty() {
            return bad("need at least one dataset, seed and family");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        self.selection.validate()?;
        if self.selection.split.len() != 3 {
            return bad("the benchmark needs a train/validation/test split");
        }
        Ok(())
    }

    pub fn dataset_seeds(&self) -> Vec<u64> {
        (0..self.dataset_count as u64).map(|i| derive_seed(self.dataset_seed, i)).collect()
    }
}

/// One fitted configuration on one draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricRun {
    pub dataset: usize,
    pub seed: u64,
    pub family: LossFamily,
    pub iterated: bool,
    pub lambda: Option<f64>,
    pub t: Option<usize>,
    /// Twice the Bregman divergence on the test draws from `Q`.
    pub error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodStats {
    pub family: LossFamily,
    pub iterated: bool,
    pub mean: f64,
    pub sd: f64,
    pub seeds: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkTableRow {
    pub dataset: String,
    pub p_components: usize,
    pub q_components: usize,
    pub methods: Vec<MethodStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometricResult {
    pub rows: Vec<BenchmarkTableRow>,
    /// Per method, the mean over datasets of the per-dataset means.
    pub average: Vec<MethodStats>,
    pub runs: Vec<GeometricRun>,
}

impl GeometricResult {
    pub fn average_for(&self, family: LossFamily, iterated: bool) -> Option<&MethodStats> {
        self.average.iter().find(|m| m.family == family && m.iterated == iterated)
    }
}

fn evaluate_choice(
    fit: &FitProblem,
    test_q: &crate::points::Points,
    truth: &[f64],
    family: LossFamily,
    choice: &GridScore,
    config: &SelectionConfig,
) -> Result<f64> {
    let path = fit.path(family, choice.lambda, choice.t, &config.cg)?;
    let model = fit.model(family, choice.lambda, choice.t, path.iterates.last().cloned().expect("t >= 1"));
    let est = predict_ratios(&model, test_q)?;
    Ok(2.0 * bregman_error_sampled(family, truth, &est)?)
}

fn run_draw(config: &GeometricConfig, dataset: usize, problem: &MixturePairProblem, seed: u64) -> Vec<GeometricRun> {
    let draw_seed = derive_seed(problem.seed, seed);
    let sample = problem.sample(config.sample_count, config.sample_count, draw_seed);
    let sel = SelectionConfig { seed: derive_seed(draw_seed, 1), ..config.selection.clone() };
    let failed = |family: LossFamily, iterated: bool, msg: String| GeometricRun {
        dataset,
        seed,
        family,
        iterated,
        lambda: None,
        t: None,
        error: None,
        failure: Some(msg),
    };
    let prepared = (|| -> Result<_> {
        let parts = split_data(&sample.numerator, &sample.denominator, &sel)?;
        let bw = median_bandwidth(&parts.train.pooled()?)?;
        let fit = FitProblem::new(&parts.train, KernelSpec::gaussian(bw)?, sel.weighting)?;
        let test = parts.test.clone().expect("three-way split");
        let truth = problem.exact_ratios(&test.denominator)?;
        Ok((parts, fit, test, truth))
    })();
    let (parts, fit, test, truth) = match prepared {
        Ok(v) => v,
        Err(e) => {
            return config
                .families
                .iter()
                .flat_map(|&f| [failed(f, false, e.to_string()), failed(f, true, e.to_string())])
                .collect()
        }
    };
    let mut runs = Vec::new();
    for &family in &config.families {
        let scores = match score_grid(&fit, &parts.val, family, &sel) {
            Ok(s) => s,
            Err(e) => {
                runs.push(failed(family, false, e.to_string()));
                runs.push(failed(family, true, e.to_string()));
                continue;
            }
        };
        let single: Vec<GridScore> = scores.iter().filter(|g| g.t == 1).cloned().collect();
        for (iterated, pool) in [(false, &single), (true, &scores)] {
            let outcome = best_point(pool).cloned().and_then(|choice| {
                let e = evaluate_choice(&fit, &test.denominator, &truth, family, &choice, &sel)?;
                Ok((choice, e))
            });
            runs.push(match outcome {
                Ok((choice, e)) if e.is_finite() => GeometricRun {
                    dataset,
                    seed,
                    family,
                    iterated,
                    lambda: Some(choice.lambda),
                    t: Some(choice.t),
                    error: Some(e),
                    failure: None,
                },
                Ok((_, e)) => failed(family, iterated, format!("error is {e}")),
                Err(e) => failed(family, iterated, e.to_string()),
            });
        }
    }
    runs
}

fn stats(family: LossFamily, iterated: bool, values: &[f64], failures: usize) -> MethodStats {
    MethodStats {
        family,
        iterated,
        mean: if values.is_empty() { f64::NAN } else { mean(values) },
        sd: std_dev(values),
        seeds: values.len(),
        failures,
    }
}

pub fn run_geometric_benchmark(config: &GeometricConfig) -> Result<GeometricResult> {
    config.validate()?;
    let started = Instant::now();
    let problems: Vec<MixturePairProblem> = config
        .dataset_seeds()
        .into_iter()
        .map(|s| make_geometric_problem_with_dim(s, config.dim))
        .collect();
    let cells: Vec<(usize, u64)> = (0..problems.len())
        .flat_map(|d| config.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let runs: Vec<GeometricRun> = cells
        .par_iter()
        .map(|&(d, s)| run_draw(config, d, &problems[d], s))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let methods: Vec<(LossFamily, bool)> = config.families.iter().flat_map(|&f| [(f, false), (f, true)]).collect();
    let mut rows = Vec::new();
    for (d, problem) in problems.iter().enumerate() {
        let methods = methods
            .iter()
            .map(|&(family, iterated)| {
                let sel: Vec<&GeometricRun> = runs
                    .iter()
                    .filter(|r| r.dataset == d && r.family == family && r.iterated == iterated)
                    .collect();
                let values: Vec<f64> = sel.iter().filter_map(|r| r.error).collect();
                stats(family, iterated, &values, sel.len() - values.len())
            })
            .collect();
        rows.push(BenchmarkTableRow {
            dataset: format!("mixture-{d}"),
            p_components: problem.p.components(),
            q_components: problem.q.components(),
            methods,
        });
    }
    let average = methods
        .iter()
        .enumerate()
        .map(|(k, &(family, iterated))| {
            let means: Vec<f64> = rows.iter().map(|r| r.methods[k].mean).filter(|m| m.is_finite()).collect();
            let failures = rows.iter().map(|r| r.methods[k].failures).sum();
            stats(family, iterated, &means, failures)
        })
        .collect();
    log::info!("geometric benchmark finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(GeometricResult { rows, average, runs })
}

fn column_name(family: LossFamily, iterated: bool) -> String {
    if iterated {
        format!("It-{}", family.name())
    } else {
        family.name().to_string()
    }
}

/// `geometric_table.csv` (one row per dataset plus `Avg`), `geometric_runs.csv`
/// and `geometric_manifest.json`.
pub fn write_geometric_outputs(dir: &Path, config: &GeometricConfig, result: &GeometricResult) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("geometric_table.csv"))?;
    let mut header = vec!["dataset".to_string(), "p_components".into(), "q_components".into()];
    for m in &result.average {
        let name = column_name(m.family, m.iterated);
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_sd"));
    }
    w.write_record(&header)?;
    for row in &result.rows {
        let mut rec = vec![row.dataset.clone(), row.p_components.to_string(), row.q_components.to_string()];
        for m in &row.methods {
            rec.push(m.mean.to_string());
            rec.push(m.sd.to_string());
        }
        w.write_record(&rec)?;
    }
    let mut rec = vec!["Avg".to_string(), String::new(), String::new()];
    for m in &result.average {
        rec.push(m.mean.to_string());
        rec.push(m.sd.to_string());
    }
    w.write_record(&rec)?;
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("geometric_runs.csv"))?;
    w.write_record(["dataset", "seed", "method", "lambda", "t", "error", "failure"])?;
    let opt = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
    for r in &result.runs {
        w.write_record([
            r.dataset.to_string(),
            r.seed.to_string(),
            column_name(r.family, r.iterated),
            opt(r.lambda.map(|v| v.to_string())),
            opt(r.t.map(|v| v.to_string())),
            opt(r.error.map(|v| v.to_string())),
            r.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    write_manifest(
        dir,
        "geometric_manifest.json",
        "geometric_benchmark",
        config,
        &config.seeds,
        &["geometric_table.csv", "geometric_runs.csv"],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeometricConfig {
        GeometricConfig {
            dataset_count: 2,
            dim: 3,
            sample_count: 120,
            seeds: vec![0, 1],
            selection: SelectionConfig {
                lambda_grid: vec![1e-3, 1e-2, 1e-1, 1.0],
                t_grid: vec![1, 2, 3],
                ..SelectionConfig::default()
            },
            ..GeometricConfig::default()
        }
    }

    #[test]
    fn small_benchmark_runs() {
        let cfg = small();
        let res = run_geometric_benchmark(&cfg).unwrap();
        assert_eq!(res.rows.len(), 2);
        assert_eq!(res.runs.len(), 2 * 2 * 2);
        for r in &res.rows {
            assert_eq!(r.p_components + r.q_components, 4);
            for m in &r.methods {
                assert!(m.sd >= 0.0 && m.seeds == 2);
            }
        }
        let again = run_geometric_benchmark(&cfg).unwrap();
        assert_eq!(again.runs, res.runs);
    }

    #[test]
    fn t_grid_of_one_makes_columns_agree() {
        let mut cfg = small();
        cfg.selection.t_grid = vec![1];
        let res = run_geometric_benchmark(&cfg).unwrap();
        let a = res.average_for(LossFamily::Kulsif, false).unwrap();
        let b = res.average_for(LossFamily::Kulsif, true).unwrap();
        assert_eq!(a.mean, b.mean);
        for pair in res.runs.chunks(2) {
            assert_eq!(pair[0].error, pair[1].error);
        }
    }

    #[test]
    fn oracle_on_equal_distributions_has_zero_error() {
        let prob = make_geometric_problem_with_dim(4, 5).with_shared_parameters();
        let s = prob.sample(10, 50, 3);
        let truth = prob.exact_ratios(&s.denominator).unwrap();
        assert!(truth.iter().all(|&b| b == 1.0));
        for family in LossFamily::ALL {
            assert_eq!(bregman_error_sampled(family, &truth, &vec![1.0; 50]).unwrap(), 0.0);
        }
    }

    #[test]
    fn rejects_small_samples() {
        let cfg = GeometricConfig { sample_count: 50, ..GeometricConfig::default() };
        assert!(run_geometric_benchmark(&cfg).is_err());
    }
}
