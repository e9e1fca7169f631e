use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::kernels::KernelSpec;

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> Points {
    let data: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>() * 2.0 - 1.0 + shift).collect();
    Points::new(dim, data).unwrap()
}

/// Dense Newton minimizer of the sub-problem, independent of the solver code.
fn newton_oracle(
    k: &DMatrix<f64>,
    labels: &[Label],
    weights: &[f64],
    family: LossFamily,
    lambda: f64,
    a_prev: &DVector<f64>,
) -> DVector<f64> {
    let n = labels.len();
    let mut a = a_prev.clone();
    for _ in 0..100 {
        let u = k * &a;
        let s = DVector::from_fn(n, |i, _| {
            weights[i] * family.d1(labels[i], u[i]) + lambda * (a[i] - a_prev[i])
        });
        let grad = k * &s;
        let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| weights[i] * family.d2(labels[i], u[i])));
        let hess = k * d * k + k * lambda;
        let step = hess.lu().solve(&grad).expect("nonsingular Hessian");
        a -= &step;
        if step.norm() < 1e-15 * (1.0 + a.norm()) {
            break;
        }
    }
    a
}

fn dense_gram(kernel: &KernelSpec, pts: &Points) -> DMatrix<f64> {
    DMatrix::from_fn(pts.len(), pts.len(), |i, j| kernel.eval(pts.row(i), pts.row(j)))
}

#[test]
fn one_by_one_kulsif() {
    let x = Points::from_scalars(&[0.0]);
    let k = KernelSpec::gaussian(1.0).unwrap();
    let model = fit_kulsif(&x, &x, k, 1.0, 1).unwrap();
    assert_eq!(model.beta(), &[1.0]);
    assert!((model.alpha()[0] + 0.5).abs() < 1e-15);
    assert!((predict_score(&model, &[0.0]).unwrap() - 0.5).abs() < 1e-15);

    // brute force over the scalar pair (alpha, beta): f = alpha + beta.
    let obj = |a: f64, b: f64| {
        let f = a + b;
        0.5 * f * f - f + 0.5 * f * f
    };
    let mut best = (f64::INFINITY, 0.0);
    for i in -400..=400 {
        let f = i as f64 / 400.0;
        let v = obj(f, 0.0);
        if v < best.0 {
            best = (v, f);
        }
    }
    assert!((best.1 - 0.5).abs() < 1e-12);
}

#[test]
fn kulsif_beta_block_is_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xp = random_points(&mut rng, 7, 2, 0.3);
    let xq = random_points(&mut rng, 9, 2, 0.0);
    let k = KernelSpec::gaussian(0.7).unwrap();
    for t in 1..=4 {
        let model = fit_kulsif(&xp, &xq, k, 0.05, t).unwrap();
        assert_eq!(model.beta().len(), 7);
        assert_eq!(model.alpha().len(), 9);
        for &b in model.beta() {
            assert_eq!(b, t as f64 / (7.0 * 0.05));
        }
    }
}

#[test]
fn kulsif_matches_newton_oracle_each_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xp = random_points(&mut rng, 3, 1, 0.5);
    let xq = random_points(&mut rng, 3, 1, 0.0);
    let kernel = KernelSpec::gaussian(0.9).unwrap();
    let sample = LabeledSample::new(xp, xq).unwrap();
    let problem = FitProblem::new(&sample, kernel, SampleWeighting::Balanced).unwrap();
    let k = dense_gram(&kernel, problem.anchors());
    let lambda = 0.1;
    let path = problem.kulsif_path(lambda, 3).unwrap();
    let mut prev = DVector::zeros(6);
    for a in &path.iterates {
        let oracle = newton_oracle(&k, &problem.labels, &problem.weights, LossFamily::Kulsif, lambda, &prev);
        let ours = DVector::from_column_slice(a);
        assert!((&ours - &oracle).amax() < 1e-8, "{ours} vs {oracle}");
        prev = oracle;
    }
}

/// The recursion as typeset without the `(t+1)` factor on the cross term.
#[test]
fn printed_recursion_disagrees_from_second_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xp = random_points(&mut rng, 3, 1, 0.5);
    let xq = random_points(&mut rng, 3, 1, 0.0);
    let kernel = KernelSpec::gaussian(0.9).unwrap();
    let sample = LabeledSample::new(xp, xq).unwrap();
    let problem = FitProblem::new(&sample, kernel, SampleWeighting::Balanced).unwrap();
    let k = dense_gram(&kernel, problem.anchors());
    let (m, n, lambda) = (3usize, 3usize, 0.1);
    let k11 = k.view((m, m), (n, n)).into_owned();
    let k12 = k.view((m, 0), (n, m)).into_owned();
    let sys = DMatrix::identity(n, n) * lambda + &k11 / n as f64;
    let ones = DVector::from_element(m, 1.0);
    let mut alpha = DVector::zeros(n);
    let mut prev = DVector::zeros(m + n);
    let mut diffs = Vec::new();
    for t in 1..=3 {
        let rhs = &alpha * lambda - &k12 * &ones / (lambda * (m * n) as f64);
        alpha = sys.clone().lu().solve(&rhs).unwrap();
        let mut printed = vec![t as f64 / (m as f64 * lambda); m];
        printed.extend(alpha.iter());
        let oracle = newton_oracle(&k, &problem.labels, &problem.weights, LossFamily::Kulsif, lambda, &prev);
        diffs.push((DVector::from_vec(printed) - &oracle).amax());
        prev = oracle;
    }
    assert!(diffs[0] < 1e-8);
    assert!(diffs[1] > 1e-3 && diffs[2] > 1e-3, "{diffs:?}");
}

#[test]
fn second_iteration_is_stationary_for_recentred_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xp = random_points(&mut rng, 20, 2, 0.4);
    let xq = random_points(&mut rng, 25, 2, 0.0);
    let sample = LabeledSample::new(xp, xq).unwrap();
    let problem = FitProblem::new(&sample, KernelSpec::gaussian(0.8).unwrap(), SampleWeighting::Balanced).unwrap();
    let path = problem.kulsif_path(0.03, 2).unwrap();
    let g = problem.gradient_norm(LossFamily::Kulsif, 0.03, &path.iterates[1], &path.iterates[0]);
    assert!(g <= 1e-8, "gradient norm {g}");
}

#[test]
fn kulsif_first_iteration_solves_first_order_conditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xp = random_points(&mut rng, 12, 3, 0.2);
    let xq = random_points(&mut rng, 15, 3, 0.0);
    let kernel = KernelSpec::gaussian(1.1).unwrap();
    let lambda = 0.2;
    let model = fit_kulsif(&xp, &xq, kernel, lambda, 1).unwrap();
    // Classical KuLSIF: (lambda I + K11/n) alpha = -K12 1/(lambda m n).
    let (m, n) = (12usize, 15usize);
    let k11 = DMatrix::from_fn(n, n, |i, j| kernel.eval(xq.row(i), xq.row(j)));
    let k12 = DMatrix::from_fn(n, m, |i, j| kernel.eval(xq.row(i), xp.row(j)));
    let sys = DMatrix::identity(n, n) * lambda + k11 / n as f64;
    let rhs = -(k12 * DVector::from_element(m, 1.0)) / (lambda * (m * n) as f64);
    let alpha = sys.lu().solve(&rhs).unwrap();
    for (ours, want) in model.alpha().iter().zip(alpha.iter()) {
        assert!((ours - want).abs() < 1e-10);
    }
}

#[test]
fn cg_agrees_with_kulsif_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xp = random_points(&mut rng, 30, 2, 0.3);
    let xq = random_points(&mut rng, 30, 2, 0.0);
    let sample = LabeledSample::new(xp, xq).unwrap();
    let problem = FitProblem::new(&sample, KernelSpec::gaussian(0.9).unwrap(), SampleWeighting::Balanced).unwrap();
    for &(lambda, t) in &[(1e-2, 1usize), (1.0, 3)] {
        let closed = problem.kulsif_path(lambda, t).unwrap();
        let cg = problem.cg_path(LossFamily::Kulsif, lambda, t, &CgOptions::default()).unwrap();
        let a = closed.report.final_objective().unwrap();
        let b = cg.report.final_objective().unwrap();
        assert!((a - b).abs() <= 1e-6 * a.abs(), "{a} vs {b}");
    }
}

#[test]
fn cg_matches_newton_for_small_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for family in [LossFamily::Lr, LossFamily::Exp, LossFamily::Sq] {
        let xp = random_points(&mut rng, 3, 1, 0.4);
        let xq = random_points(&mut rng, 3, 1, 0.0);
        let kernel = KernelSpec::gaussian(0.8).unwrap();
        let sample = LabeledSample::new(xp, xq).unwrap();
        let problem = FitProblem::new(&sample, kernel, SampleWeighting::Balanced).unwrap();
        let k = dense_gram(&kernel, problem.anchors());
        let lambda = 0.05;
        let path = problem.cg_path(family, lambda, 3, &CgOptions::default()).unwrap();
        let mut prev = DVector::zeros(6);
        for a in &path.iterates {
            let oracle = newton_oracle(&k, &problem.labels, &problem.weights, family, lambda, &prev);
            let j_ours = problem.objective(family, lambda, a, prev.as_slice());
            let j_oracle = problem.objective(family, lambda, oracle.as_slice(), prev.as_slice());
            assert!((j_ours - j_oracle).abs() < 1e-6, "{family:?}: {j_ours} vs {j_oracle}");
            prev = DVector::from_column_slice(a);
        }
    }
}

#[test]
fn cg_reports_meet_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xp = random_points(&mut rng, 40, 2, 0.5);
    let xq = random_points(&mut rng, 40, 2, 0.0);
    let sample = LabeledSample::new(xp, xq).unwrap();
    let problem = FitProblem::new(&sample, KernelSpec::gaussian(1.0).unwrap(), SampleWeighting::Balanced).unwrap();
    let path = problem.cg_path(LossFamily::Lr, 0.01, 4, &CgOptions::default()).unwrap();
    for (k, sub) in path.report.subproblems.iter().enumerate() {
        assert_eq!(sub.tolerance, subproblem_tolerance(DEFAULT_TARGET_EPS, k + 1, 4));
        assert!(sub.grad_norm <= sub.tolerance.max(1e-8), "{sub:?}");
        assert!(!sub.hit_cap);
    }
}

#[test]
fn huge_lambda_gives_zero_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xp = random_points(&mut rng, 10, 2, 0.5);
    let xq = random_points(&mut rng, 10, 2, 0.0);
    let k = KernelSpec::gaussian(1.0).unwrap();
    let probe = [0.1, -0.2];
    let expected = [
        (LossFamily::Kulsif, 0.0),
        (LossFamily::Lr, 1.0),
        (LossFamily::Exp, 1.0),
        (LossFamily::Sq, 1.0),
    ];
    for (family, ratio) in expected {
        let (model, _) = fit_cg(&xp, &xq, family, k, 1e8, 1, 1e-6).unwrap();
        assert!(model.coeffs().iter().all(|c| c.abs() < 1e-6));
        assert!((predict_ratio(&model, &probe).unwrap() - ratio).abs() < 1e-6, "{family:?}");
    }
}

#[test]
fn lr_on_identical_samples_is_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_points(&mut rng, 25, 2, 0.0);
    let (model, _) = fit_cg(&x, &x, LossFamily::Lr, KernelSpec::gaussian(0.7).unwrap(), 1e-3, 1, 1e-8).unwrap();
    for probe in [[0.0, 0.0], [0.5, -0.3], [-0.9, 0.9]] {
        assert!(predict_score(&model, &probe).unwrap().abs() < 1e-6);
        assert!((predict_ratio(&model, &probe).unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn predictions_of_simple_models() {
    let k = KernelSpec::gaussian(1.0).unwrap();
    let anchors = Points::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
    let zero = RatioModel::from_parts(k, LossFamily::Lr, SampleWeighting::Balanced, anchors.clone(), 1, vec![0.0, 0.0], 1.0, 1);
    assert_eq!(predict_score(&zero, &[0.3, 0.2]).unwrap(), 0.0);
    assert_eq!(predict_ratio(&zero, &[0.3, 0.2]).unwrap(), 1.0);

    let single = Points::from_rows(&[[0.5, 0.5]]).unwrap();
    let m = RatioModel::from_parts(k, LossFamily::Kulsif, SampleWeighting::Balanced, single, 1, vec![2.5], 1.0, 1);
    let x = [0.0, 1.0];
    let want = 2.5 * k.eval(&[0.5, 0.5], &x);
    assert!((predict_score(&m, &x).unwrap() - want).abs() < 1e-15);
    assert_eq!(predict_ratio(&m, &x).unwrap(), predict_score(&m, &x).unwrap());
    assert!(predict_score(&m, &[0.0]).is_err());

    let exp = RatioModel::from_parts(k, LossFamily::Exp, SampleWeighting::Balanced, Points::from_rows(&[[0.0, 0.0]]).unwrap(), 1, vec![0.5], 1.0, 1);
    assert!((predict_ratio(&exp, &[0.0, 0.0]).unwrap() - std::f64::consts::E).abs() < 1e-14);
}

#[test]
fn one_by_one_prediction_through_model() {
    let x = Points::from_scalars(&[0.0]);
    let model = fit_kulsif(&x, &x, KernelSpec::gaussian(1.0).unwrap(), 1.0, 1).unwrap();
    assert!((predict_ratio(&model, &[0.0]).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn rejects_bad_parameters() {
    let x = Points::from_scalars(&[0.0, 1.0]);
    let k = KernelSpec::gaussian(1.0).unwrap();
    assert!(fit_kulsif(&x, &x, k, 0.0, 1).is_err());
    assert!(fit_kulsif(&x, &x, k, 1.0, 0).is_err());
    assert!(fit_kulsif(&Points::empty(1), &x, k, 1.0, 1).is_err());
    assert!(fit_cg(&x, &x, LossFamily::Lr, k, -1.0, 1, 1e-6).is_err());
}

#[test]
fn duplicate_points_are_accepted() {
    let xp = Points::from_scalars(&[0.1, 0.1, 0.1, 0.7]);
    let xq = Points::from_scalars(&[0.1, 0.5, 0.5]);
    let k = KernelSpec::gaussian(0.5).unwrap();
    let model = fit_kulsif(&xp, &xq, k, 0.1, 3).unwrap();
    assert!(model.coeffs().iter().all(|c| c.is_finite()));
    let (model, _) = fit_cg(&xp, &xq, LossFamily::Lr, k, 0.1, 2, 1e-6).unwrap();
    assert!(model.coeffs().iter().all(|c| c.is_finite()));
}

#[test]
fn kulsif_training_risk_diagnostic() {
    // Soft diagnostic: record whether empirical training risk is nonincreasing in k.
    let mut violations = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xp = random_points(&mut rng, 30, 2, 0.4);
        let xq = random_points(&mut rng, 30, 2, 0.0);
        let sample = LabeledSample::new(xp.clone(), xq.clone()).unwrap();
        let problem = FitProblem::new(&sample, KernelSpec::gaussian(0.8).unwrap(), SampleWeighting::Balanced).unwrap();
        let path = problem.kulsif_path(0.05, 6).unwrap();
        let risks: Vec<f64> = path
            .iterates
            .iter()
            .map(|a| {
                let u = problem.gram().matvec(a);
                crate::losses::empirical_risk(LossFamily::Kulsif, &u[..30], &u[30..]).unwrap()
            })
            .collect();
        if risks.windows(2).any(|w| w[1] > w[0] + 1e-10) {
            violations += 1;
        }
    }
    // Each iterate minimizes risk + a proximal term centred at the previous
    // iterate, so training risk cannot increase.
    assert_eq!(violations, 0);
}

#[test]
fn model_json_roundtrip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let xp = random_points(&mut rng, 5, 3, 0.1);
    let xq = random_points(&mut rng, 4, 3, 0.0);
    let model = fit_kulsif(&xp, &xq, KernelSpec::gaussian(0.6).unwrap(), 0.013, 3).unwrap();
    let text = model.to_json().unwrap();
    let back = RatioModel::from_json(&text).unwrap();
    assert_eq!(back, model);
    for (a, b) in back.coeffs().iter().zip(model.coeffs()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(back.to_json().unwrap(), text);
}

#[test]
fn model_json_rejects_tampering() {
    let x = Points::from_scalars(&[0.0, 1.0]);
    let model = fit_kulsif(&x, &x, KernelSpec::gaussian(1.0).unwrap(), 1.0, 1).unwrap();
    let text = model.to_json().unwrap();
    let bumped = text.replace("\"version\": 1", "\"version\": 2");
    assert!(RatioModel::from_json(&bumped).is_err());
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["extra"] = serde_json::json!(1);
    assert!(RatioModel::from_json(&doc.to_string()).is_err());
}
