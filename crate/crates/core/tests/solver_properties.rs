use iterdre::solver::{CgOptions, FitProblem};
use iterdre::{KernelSpec, LabeledSample, LossFamily, Points, RatioModel, SampleWeighting};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn sample(max_per_class: usize) -> impl Strategy<Value = LabeledSample> {
    (1..=max_per_class, 1..=max_per_class).prop_flat_map(|(m, n)| {
        (
            prop::collection::vec(-2.0f64..2.0, 2 * m),
            prop::collection::vec(-1.5f64..2.5, 2 * n),
        )
            .prop_map(|(p, q)| LabeledSample::new(Points::new(2, p).unwrap(), Points::new(2, q).unwrap()).unwrap())
    })
}

/// Minimizes the quadratic KuLSIF sub-problem with two dense Newton steps.
fn newton_kulsif(k: &DMatrix<f64>, m: usize, n: usize, lambda: f64, prev: &DVector<f64>) -> DVector<f64> {
    let total = m + n;
    let w = DVector::from_fn(total, |i, _| if i < m { 1.0 / m as f64 } else { 1.0 / n as f64 });
    let d = DMatrix::from_fn(total, total, |i, j| if i == j && i >= m { w[i] } else { 0.0 });
    let hess = k * &d * k + k * lambda;
    let mut a = prev.clone();
    for _ in 0..2 {
        let v = k * &a;
        let s = DVector::from_fn(total, |i, _| if i < m { -w[i] } else { w[i] * v[i] }) + (&a - prev) * lambda;
        let step = hess.clone().lu().solve(&(k * s)).expect("Hessian is invertible");
        a -= step;
    }
    a
}

fn well_spread(s: &LabeledSample) -> bool {
    let pts = s.pooled().unwrap();
    for i in 0..pts.len() {
        for j in 0..i {
            let d: f64 = pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            if d < 0.05 {
                return false;
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kulsif_recursion_matches_newton(s in sample(3), log_lambda in -2.0f64..1.0, t in 1usize..=3) {
        prop_assume!(well_spread(&s));
        let lambda = 10f64.powf(log_lambda);
        let fit = FitProblem::new(&s, KernelSpec::gaussian(1.0).unwrap(), SampleWeighting::Balanced).unwrap();
        let k = fit.gram().to_nalgebra();
        let path = fit.kulsif_path(lambda, t).unwrap();
        let mut prev = DVector::zeros(fit.len());
        for a in &path.iterates {
            let oracle = newton_kulsif(&k, fit.n_numerator(), fit.n_denominator(), lambda, &prev);
            for (x, y) in a.iter().zip(oracle.iter()) {
                prop_assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{x} vs {y}");
            }
            prev = oracle;
        }
    }

    #[test]
    fn paths_extend_consistently(s in sample(6), t in 1usize..=5) {
        let fit = FitProblem::new(&s, KernelSpec::gaussian(0.8).unwrap(), SampleWeighting::Balanced).unwrap();
        let long = fit.kulsif_path(0.1, t + 2).unwrap();
        let short = fit.kulsif_path(0.1, t).unwrap();
        prop_assert_eq!(&long.iterates[..t], &short.iterates[..]);
    }

    #[test]
    fn cg_reaches_the_kulsif_objective(s in sample(8), log_lambda in -2.0f64..0.0, t in 1usize..=3) {
        prop_assume!(well_spread(&s));
        let lambda = 10f64.powf(log_lambda);
        let fit = FitProblem::new(&s, KernelSpec::gaussian(1.0).unwrap(), SampleWeighting::Balanced).unwrap();
        let exact = fit.kulsif_path(lambda, t).unwrap();
        let cg = fit.cg_path(LossFamily::Kulsif, lambda, t, &CgOptions { target_eps: 1e-10, ..CgOptions::default() }).unwrap();
        let a = exact.report.final_objective().unwrap();
        let b = cg.report.final_objective().unwrap();
        prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12), "{a} vs {b}");
    }

    #[test]
    fn cg_iterates_are_stationary(s in sample(6), fam in prop::sample::select(vec![LossFamily::Lr, LossFamily::Exp, LossFamily::Sq]), pooled in any::<bool>()) {
        let weighting = if pooled { SampleWeighting::Pooled } else { SampleWeighting::Balanced };
        let fit = FitProblem::new(&s, KernelSpec::gaussian(1.0).unwrap(), weighting).unwrap();
        let path = fit.cg_path(fam, 0.5, 2, &CgOptions::default()).unwrap();
        for sub in &path.report.subproblems {
            prop_assert!(sub.grad_norm <= sub.tolerance || sub.stalled, "{sub:?}");
        }
    }

    #[test]
    fn model_json_round_trip_is_exact(s in sample(5), lambda in 0.01f64..10.0, t in 1usize..4) {
        let fit = FitProblem::new(&s, KernelSpec::gaussian(0.7).unwrap(), SampleWeighting::Balanced).unwrap();
        let path = fit.kulsif_path(lambda, t).unwrap();
        let model = fit.model(LossFamily::Kulsif, lambda, t, path.iterates.last().unwrap().clone());
        let back = RatioModel::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.to_json().unwrap(), model.to_json().unwrap());
        let bits = |c: &[f64]| c.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.coeffs()), bits(model.coeffs()));
    }
}
