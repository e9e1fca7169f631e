use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use iterdre::ensemble::{
    evaluate_ensemble, ingest_candidates, read_predictions, solve_ensemble, CandidateFiles, EnsembleEvaluation,
    TruncationOrder, WeightSource,
};
use iterdre::experiments::{
    run_geometric_benchmark, run_mixture_saturation_study, run_rate_study, write_geometric_outputs,
    write_rate_outputs, write_saturation_outputs, GeometricConfig, RateStudyConfig, SaturationConfig,
};
use iterdre::kernels::median_bandwidth;
use iterdre::selection::{best_point, default_lambda_grid, score_grid, split_data, GridScore, SelectionConfig};
use iterdre::solver::{CgOptions, FitPath, FitProblem, SubproblemReport, DEFAULT_TARGET_EPS};
use iterdre::synthetic::{
    make_geometric_problem_with_dim, make_regularity_problem, read_dataset_csv, sample_regularity,
    write_dataset_csv, write_json, DatasetManifest, MixturePairProblem, GEOMETRIC_DIM,
};
use iterdre::{KernelSpec, LabeledSample, LossFamily, RatioModel, SampleWeighting};

use crate::args::{
    BenchmarkArgs, DatasetKind, EnsembleArgs, FitArgs, GenerateArgs, KernelKind, Merge, RateStudyArgs,
    SaturationArgs, Truncation, Weighting,
};
use crate::manifest::write_run_manifest;
use crate::{CliError, CliResult};

fn output_dir(out: Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::usage(format!("{flag} is required")))
}

fn parse_family(name: &str, flag: &str) -> CliResult<LossFamily> {
    LossFamily::parse(name).map_err(|e| CliError::usage(format!("{flag}: {e}")))
}

fn seed_range(count: u64, flag: &str) -> CliResult<Vec<u64>> {
    if count == 0 {
        return Err(CliError::usage(format!("{flag} must be at least 1")));
    }
    Ok((0..count).collect())
}

fn check_alpha(alpha: u32) -> CliResult<()> {
    if alpha == 0 || alpha % 2 == 1 {
        return Err(CliError::usage(format!("--alpha must be a positive even integer, got {alpha}")));
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.into()))?;
    println!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct GeometricParameters<'a> {
    dim: usize,
    m: usize,
    n: usize,
    problem: &'a MixturePairProblem,
}

#[derive(Serialize)]
struct RegularityParameters {
    alpha: u32,
    r: f64,
    kernel_order: u32,
    pi: f64,
    grid_size: usize,
    size: usize,
    m: usize,
    n: usize,
}

#[derive(Serialize)]
struct GenerateConfig {
    kind: DatasetKind,
    seed: u64,
    dim: usize,
    m: usize,
    n: usize,
    size: usize,
    alpha: u32,
    r: f64,
    grid_size: usize,
}

pub fn generate(args: GenerateArgs) -> CliResult<()> {
    let start = Instant::now();
    let a = args.resolve()?;
    let cfg = GenerateConfig {
        kind: required(a.kind, "--kind")?,
        seed: a.seed.unwrap_or(0),
        dim: a.dim.unwrap_or(GEOMETRIC_DIM),
        m: a.m.unwrap_or(1000),
        n: a.n.unwrap_or(1000),
        size: a.size.unwrap_or(1000),
        alpha: a.alpha.unwrap_or(2),
        r: a.r.unwrap_or(1.25),
        grid_size: a.grid_size.unwrap_or(4096),
    };
    let dir = output_dir(a.out)?;
    match cfg.kind {
        DatasetKind::Geometric => {
            if cfg.dim == 0 || cfg.m == 0 || cfg.n == 0 {
                return Err(CliError::usage("--dim, --m and --n must be positive"));
            }
            let problem = make_geometric_problem_with_dim(cfg.seed, cfg.dim);
            let sample = problem.sample(cfg.m, cfg.n, cfg.seed);
            write_dataset_csv(&dir.join("dataset.csv"), &sample)?;
            let manifest = DatasetManifest {
                generator: "geometric".into(),
                seed: cfg.seed,
                parameters: GeometricParameters { dim: cfg.dim, m: cfg.m, n: cfg.n, problem: &problem },
                exact_ratio_available: true,
                files: vec!["dataset.csv".into()],
            };
            write_json(&dir.join("dataset_manifest.json"), &manifest)?;
        }
        DatasetKind::Regularity => {
            check_alpha(cfg.alpha)?;
            if !(cfg.r.is_finite() && cfg.r > 0.5) {
                return Err(CliError::usage(format!("--r must exceed 1/2, got {}", cfg.r)));
            }
            let problem = make_regularity_problem(cfg.alpha, cfg.r, cfg.grid_size)?;
            let (m, n) = problem.class_counts(cfg.size);
            let (xp, xq) = sample_regularity(&problem, m, n, cfg.seed);
            write_dataset_csv(&dir.join("dataset.csv"), &LabeledSample::new(xp, xq)?)?;
            write_grid(&dir.join("grid.csv"), &problem)?;
            let manifest = DatasetManifest {
                generator: "regularity".into(),
                seed: cfg.seed,
                parameters: RegularityParameters {
                    alpha: cfg.alpha,
                    r: cfg.r,
                    kernel_order: problem.order,
                    pi: problem.pi,
                    grid_size: cfg.grid_size,
                    size: cfg.size,
                    m,
                    n,
                },
                exact_ratio_available: true,
                files: vec!["dataset.csv".into(), "grid.csv".into()],
            };
            write_json(&dir.join("dataset_manifest.json"), &manifest)?;
        }
    }
    write_run_manifest(&dir, "generate", &cfg, &[cfg.seed], start)
}

fn write_grid(path: &Path, problem: &iterdre::synthetic::RegularityProblem) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.into()))?;
    let mut write = |rec: &[String]| w.write_record(rec).map_err(|e| CliError::Runtime(e.into()));
    write(&["x", "p", "q", "beta", "eta", "f_h"].map(String::from))?;
    for i in 0..problem.grid.len() {
        write(&[
            problem.grid[i].to_string(),
            problem.p[i].to_string(),
            problem.q[i].to_string(),
            problem.beta[i].to_string(),
            problem.eta[i].to_string(),
            problem.f_h[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.into()))
}

#[derive(Serialize)]
struct FitConfig {
    data: PathBuf,
    family: LossFamily,
    kernel: KernelSpec,
    lambda: f64,
    t: usize,
    weighting: SampleWeighting,
    target_eps: f64,
    selection: Option<SelectionConfig>,
}

#[derive(Serialize)]
struct SelectionSummary<'a> {
    best_lambda: f64,
    best_t: usize,
    best_score: f64,
    train_size: [usize; 2],
    validation_size: [usize; 2],
    scores: &'a [GridScore],
}

#[derive(Serialize)]
struct FitOutput<'a> {
    family: LossFamily,
    kernel: KernelSpec,
    weighting: SampleWeighting,
    lambda: f64,
    t: usize,
    completed_iterations: usize,
    final_objective: Option<f64>,
    clamp_events: u64,
    subproblems: &'a [SubproblemReport],
    selection: Option<SelectionSummary<'a>>,
    model: Option<String>,
    error: Option<String>,
}

pub fn fit(args: FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let a = args.resolve()?;
    let data = required(a.data, "--data")?;
    let sample = read_dataset_csv(&data)?;
    let family = parse_family(a.family.as_deref().unwrap_or("kulsif"), "--family")?;
    let kernel = match a.kernel.unwrap_or(KernelKind::Gaussian) {
        KernelKind::Gaussian => {
            let bw = match a.bandwidth {
                Some(b) => b,
                None => median_bandwidth(&sample.pooled()?)?,
            };
            KernelSpec::gaussian(bw)?
        }
        KernelKind::Sobolev => KernelSpec::sobolev(a.order.unwrap_or(2))?,
    };
    let weighting: SampleWeighting = a.weighting.unwrap_or(Weighting::Balanced).into();
    let target_eps = a.target_eps.unwrap_or(DEFAULT_TARGET_EPS);
    let cg = CgOptions { target_eps, ..CgOptions::default() };
    let selection = a.select.unwrap_or(false).then(|| SelectionConfig {
        lambda_grid: a.lambda_grid.clone().unwrap_or_else(default_lambda_grid),
        t_grid: a.t_grid.clone().unwrap_or_else(|| (1..=10).collect()),
        split: a.split.clone().unwrap_or_else(|| vec![0.8, 0.2]),
        seed: a.seed.unwrap_or(0),
        weighting,
        cg,
    });
    let mut cfg = FitConfig {
        data,
        family,
        kernel,
        lambda: a.lambda.unwrap_or(0.01),
        t: a.t.unwrap_or(1),
        weighting,
        target_eps,
        selection,
    };
    let dir = output_dir(a.out)?;

    let (train, chosen) = match &cfg.selection {
        None => (FitProblem::new(&sample, kernel, weighting)?, None),
        Some(sel) => {
            sel.validate()?;
            let parts = split_data(&sample.numerator, &sample.denominator, sel)?;
            let train = FitProblem::new(&parts.train, kernel, weighting)?;
            let scores = score_grid(&train, &parts.val, family, sel)?;
            let best = best_point(&scores)?.clone();
            cfg.lambda = best.lambda;
            cfg.t = best.t;
            let sizes = |s: &LabeledSample| [s.numerator.len(), s.denominator.len()];
            (train, Some((scores, best, sizes(&parts.train), sizes(&parts.val))))
        }
    };

    let (path, failure) = match family {
        LossFamily::Kulsif => match train.kulsif_path(cfg.lambda, cfg.t) {
            Ok(p) => (p, None),
            Err(e) if is_usage(&e) => return Err(e.into()),
            Err(e) => (FitPath { iterates: Vec::new(), report: Default::default() }, Some(e)),
        },
        _ => train.cg_path_partial(family, cfg.lambda, cfg.t, &cg)?,
    };

    let model_file = if failure.is_none() {
        let coeffs = path.iterates.last().cloned().expect("t >= 1");
        let model = train.model(family, cfg.lambda, cfg.t, coeffs);
        fs::write(dir.join("model.json"), model.to_json()? + "\n").map_err(|e| CliError::Runtime(e.into()))?;
        Some("model.json".to_string())
    } else {
        None
    };
    let output = FitOutput {
        family,
        kernel,
        weighting,
        lambda: cfg.lambda,
        t: cfg.t,
        completed_iterations: path.iterates.len(),
        final_objective: path.report.final_objective(),
        clamp_events: path.report.clamp_events,
        subproblems: &path.report.subproblems,
        selection: chosen.as_ref().map(|(scores, best, tr, va)| SelectionSummary {
            best_lambda: best.lambda,
            best_t: best.t,
            best_score: best.score.expect("best point has a score"),
            train_size: *tr,
            validation_size: *va,
            scores,
        }),
        model: model_file,
        error: failure.as_ref().map(|e| e.to_string()),
    };
    print_json(&output)?;
    let seeds: Vec<u64> = cfg.selection.iter().map(|s| s.seed).collect();
    write_run_manifest(&dir, "fit", &cfg, &seeds, start)?;
    match failure {
        Some(e) => Err(CliError::Runtime(e.into())),
        None => Ok(()),
    }
}

fn is_usage(e: &iterdre::Error) -> bool {
    matches!(e, iterdre::Error::InvalidInput(_) | iterdre::Error::InvalidConfig(_))
}

pub fn benchmark(args: BenchmarkArgs) -> CliResult<()> {
    let start = Instant::now();
    let a = args.resolve()?;
    let defaults = GeometricConfig::default();
    let families = match a.families {
        Some(names) => names.iter().map(|f| parse_family(f, "--families")).collect::<CliResult<Vec<_>>>()?,
        None => defaults.families.clone(),
    };
    let cfg = GeometricConfig {
        dataset_count: a.datasets.unwrap_or(defaults.dataset_count),
        dataset_seed: a.dataset_seed.unwrap_or(defaults.dataset_seed),
        dim: a.dim.unwrap_or(defaults.dim),
        sample_count: a.samples.unwrap_or(defaults.sample_count),
        seeds: match a.seeds {
            Some(n) => seed_range(n, "--seeds")?,
            None => defaults.seeds.clone(),
        },
        families,
        selection: SelectionConfig {
            lambda_grid: a.lambda_grid.unwrap_or(defaults.selection.lambda_grid.clone()),
            t_grid: a.t_grid.unwrap_or(defaults.selection.t_grid.clone()),
            ..defaults.selection
        },
    };
    cfg.validate()?;
    let dir = output_dir(a.out)?;
    let result = run_geometric_benchmark(&cfg)?;
    write_geometric_outputs(&dir, &cfg, &result)?;
    print_json(&result.average)?;
    write_run_manifest(&dir, "benchmark", &cfg, &cfg.seeds, start)
}

pub fn rate_study(args: RateStudyArgs) -> CliResult<()> {
    let start = Instant::now();
    let a = args.resolve()?;
    let d = RateStudyConfig::default();
    if let Some(alpha) = a.alpha {
        check_alpha(alpha)?;
    }
    let cfg = RateStudyConfig {
        alpha: a.alpha.unwrap_or(d.alpha),
        r: a.r.unwrap_or(d.r),
        t_values: a.t_values.unwrap_or(d.t_values.clone()),
        sizes: a.sizes.unwrap_or(d.sizes.clone()),
        seeds: match a.seeds {
            Some(n) => seed_range(n, "--seeds")?,
            None => d.seeds.clone(),
        },
        c_values: a.c_values.unwrap_or(d.c_values.clone()),
        grid_size: a.grid_size.unwrap_or(d.grid_size),
        family: match a.family {
            Some(f) => parse_family(&f, "--family")?,
            None => d.family,
        },
        ..d
    };
    cfg.validate()?;
    let dir = output_dir(a.out)?;
    let result = run_rate_study(&cfg)?;
    write_rate_outputs(&dir, &cfg, &result)?;
    print_json(&result.best)?;
    write_run_manifest(&dir, "rate-study", &cfg, &cfg.seeds, start)
}

pub fn saturation(args: SaturationArgs) -> CliResult<()> {
    let start = Instant::now();
    let a = args.resolve()?;
    let d = SaturationConfig::default();
    let cfg = SaturationConfig {
        component_counts: a.components.unwrap_or(d.component_counts.clone()),
        sizes: a.sizes.unwrap_or(d.sizes.clone()),
        seeds: match a.seeds {
            Some(n) => seed_range(n, "--seeds")?,
            None => d.seeds.clone(),
        },
        selection: SelectionConfig {
            lambda_grid: a.lambda_grid.unwrap_or(d.selection.lambda_grid.clone()),
            t_grid: a.t_grid.unwrap_or(d.selection.t_grid.clone()),
            ..d.selection.clone()
        },
        ..d
    };
    cfg.validate()?;
    let dir = output_dir(a.out)?;
    let result = run_mixture_saturation_study(&cfg)?;
    write_saturation_outputs(&dir, &cfg, &result)?;
    print_json(&result.improvement_by_count)?;
    write_run_manifest(&dir, "saturation", &cfg, &cfg.seeds, start)
}

#[derive(Serialize)]
struct EnsembleConfig {
    candidates: Vec<PathBuf>,
    labels: PathBuf,
    weights: Option<PathBuf>,
    model: Option<PathBuf>,
    features: Option<PathBuf>,
    target_candidates: Vec<PathBuf>,
    target_labels: PathBuf,
    rcond: Vec<f64>,
    truncation: TruncationOrder,
}

#[derive(Serialize)]
struct RcondEntry {
    rcond: f64,
    rank: usize,
    coefficients: Vec<f64>,
    target_accuracy: f64,
}

#[derive(Serialize)]
struct EnsembleOutput {
    truncation: TruncationOrder,
    source_samples: usize,
    target_samples: usize,
    candidates: usize,
    classes: usize,
    per_rcond: Vec<RcondEntry>,
    averaged_accuracy: f64,
}

pub fn ensemble(args: EnsembleArgs) -> CliResult<()> {
    let start = Instant::now();
    let a = args.resolve()?;
    let candidates = required(a.candidates, "--candidates")?;
    let labels = required(a.labels, "--labels")?;
    let cfg = EnsembleConfig {
        target_candidates: a.target_candidates.unwrap_or_else(|| candidates.clone()),
        target_labels: a.target_labels.unwrap_or_else(|| labels.clone()),
        candidates,
        labels,
        weights: a.weights,
        model: a.model,
        features: a.features,
        rcond: a.rcond.unwrap_or_else(iterdre::ensemble::default_rcond_grid),
        truncation: match a.truncation.unwrap_or(Truncation::Weighted) {
            Truncation::Weighted => TruncationOrder::Weighted,
            Truncation::Unweighted => TruncationOrder::Unweighted,
        },
    };
    let source = match (&cfg.weights, &cfg.model, &cfg.features) {
        (Some(w), None, None) => WeightSource::File(w.clone()),
        (None, Some(m), Some(f)) => {
            let text = fs::read_to_string(m)
                .map_err(|e| CliError::usage(format!("cannot read model {}: {e}", m.display())))?;
            WeightSource::Model { model: Box::new(RatioModel::from_json(&text)?), features: f.clone() }
        }
        (None, Some(_), None) => return Err(CliError::usage("--model needs --features")),
        _ => return Err(CliError::usage("give either --weights or --model with --features")),
    };
    let files = CandidateFiles { candidates: cfg.candidates.clone(), labels: cfg.labels.clone() };
    let (_, mut problem) = ingest_candidates(&files, &source)?;
    problem.rcond_grid = cfg.rcond.clone();
    problem.order = cfg.truncation;
    problem.validate()?;
    let target_files = CandidateFiles { candidates: cfg.target_candidates.clone(), labels: cfg.target_labels.clone() };
    let (_, target, target_labels) = read_predictions(&target_files)?;
    if target.n_candidates() != problem.predictions.n_candidates()
        || target.n_classes() != problem.predictions.n_classes()
    {
        return Err(CliError::usage("target candidates differ in count or class columns from the source"));
    }
    let dir = output_dir(a.out)?;
    let weights = solve_ensemble(&problem)?;
    let EnsembleEvaluation { per_rcond, averaged_accuracy } = evaluate_ensemble(&weights, &target, &target_labels)?;
    let output = EnsembleOutput {
        truncation: cfg.truncation,
        source_samples: problem.predictions.n_samples(),
        target_samples: target.n_samples(),
        candidates: problem.predictions.n_candidates(),
        classes: problem.predictions.n_classes(),
        per_rcond: weights
            .per_rcond
            .iter()
            .zip(per_rcond)
            .map(|(s, acc)| RcondEntry {
                rcond: s.rcond,
                rank: s.rank,
                coefficients: s.coefficients.clone(),
                target_accuracy: acc.accuracy,
            })
            .collect(),
        averaged_accuracy,
    };
    write_json(&dir.join("ensemble.json"), &output)?;
    print_json(&output)?;
    write_run_manifest(&dir, "ensemble", &cfg, &[], start)
}

