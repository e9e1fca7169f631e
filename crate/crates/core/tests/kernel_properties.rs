use iterdre::kernels::{gram, gram_symmetric, median_bandwidth, sobolev_eval};
use iterdre::{KernelSpec, Points};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn points(dim: usize, max_len: usize) -> impl Strategy<Value = Points> {
    (1..=max_len).prop_flat_map(move |n| {
        prop::collection::vec(-3.0f64..3.0, n * dim).prop_map(move |v| Points::new(dim, v).unwrap())
    })
}

fn unit_points(max_len: usize) -> impl Strategy<Value = Points> {
    prop::collection::vec(0.0f64..1.0, 1..=max_len).prop_map(|v| Points::from_scalars(&v))
}

/// Cosine series of the periodic Sobolev kernel, summed from the smallest
/// term up.
fn sobolev_series(diff: f64, order: u32, terms: usize) -> f64 {
    let mut sum = 0.0;
    for l in (1..=terms).rev() {
        let l = l as f64;
        sum += (2.0 * std::f64::consts::PI * l * diff).cos() / l.powi(order as i32);
    }
    1.0 + 2.0 * sum
}

fn min_eigenvalue(g: &iterdre::GramMatrix) -> (f64, f64) {
    let m = g.to_nalgebra();
    let trace = m.trace();
    let eig = SymmetricEigen::new(m);
    (eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min), trace)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gaussian_gram_is_symmetric_and_psd(pts in points(3, 25), bw in 0.2f64..5.0) {
        let g = gram_symmetric(&KernelSpec::gaussian(bw).unwrap(), &pts).unwrap();
        for i in 0..g.rows() {
            prop_assert_eq!(g.get(i, i), 1.0);
            for j in 0..g.cols() {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let (lo, trace) = min_eigenvalue(&g);
        prop_assert!(lo >= -1e-10 * trace, "min eigenvalue {lo}");
    }

    #[test]
    fn sobolev_gram_is_symmetric_and_psd(pts in unit_points(25), k in 1u32..=5) {
        let order = 2 * k;
        let g = gram_symmetric(&KernelSpec::sobolev(order).unwrap(), &pts).unwrap();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                prop_assert!((g.get(i, j) - g.get(j, i)).abs() <= 1e-12 * g.get(i, i).abs());
            }
        }
        let (lo, trace) = min_eigenvalue(&g);
        prop_assert!(lo >= -1e-10 * trace, "min eigenvalue {lo}");
    }

    #[test]
    fn cross_gram_agrees_with_symmetric_gram(pts in points(2, 15), bw in 0.3f64..3.0) {
        let k = KernelSpec::gaussian(bw).unwrap();
        let a = gram(&k, &pts, &pts).unwrap();
        let b = gram_symmetric(&k, &pts).unwrap();
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn sobolev_closed_form_matches_series(x in 0.0f64..1.0, y in 0.0f64..1.0, k in 2u32..=5) {
        let order = 2 * k;
        let exact = sobolev_eval(x, y, order).unwrap();
        let series = sobolev_series(x - y, order, 20_000);
        prop_assert!((exact - series).abs() < 1e-6, "{exact} vs {series}");
    }

    #[test]
    fn sobolev_is_periodic_and_even(x in 0.0f64..1.0, y in 0.0f64..1.0, shift in -3i32..3, k in 1u32..=5) {
        let order = 2 * k;
        let a = sobolev_eval(x, y, order).unwrap();
        let b = sobolev_eval(x + shift as f64, y, order).unwrap();
        let c = sobolev_eval(y, x, order).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        prop_assert!((a - c).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn median_bandwidth_scales_with_the_data(pts in points(2, 20), scale in 0.1f64..10.0) {
        prop_assume!(pts.len() >= 2);
        if let Ok(h) = median_bandwidth(&pts) {
            let scaled = Points::new(2, pts.as_slice().iter().map(|v| v * scale).collect()).unwrap();
            let hs = median_bandwidth(&scaled).unwrap();
            prop_assert!((hs - scale * h).abs() <= 1e-12 * hs);
        }
    }
}

#[test]
fn order_two_series_with_many_terms() {
    // Away from zero the order-2 tail decays like 1/M^2.
    for d in [0.1, 0.37, 0.5, 0.93] {
        let exact = sobolev_eval(d, 0.0, 2).unwrap();
        let series = sobolev_series(d, 2, 2_000_000);
        assert!((exact - series).abs() < 1e-6, "{d}: {exact} vs {series}");
    }
}
