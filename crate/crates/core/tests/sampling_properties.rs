use iterdre::selection::{split_data, SelectionConfig};
use iterdre::synthetic::{
    make_geometric_problem_with_dim, make_regularity_problem, sample_mixture, sample_regularity, GaussianMixture,
};
use iterdre::Points;
use proptest::prelude::*;

fn bits(p: &Points) -> Vec<u64> {
    p.as_slice().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mixture_sampling_is_seed_deterministic(seed in any::<u64>(), dim in 1usize..6, count in 1usize..200) {
        let problem = make_geometric_problem_with_dim(seed, dim);
        let a = problem.sample(count, count + 1, seed ^ 0x5eed);
        let b = problem.sample(count, count + 1, seed ^ 0x5eed);
        prop_assert_eq!(bits(&a.numerator), bits(&b.numerator));
        prop_assert_eq!(bits(&a.denominator), bits(&b.denominator));
        prop_assert_eq!(a.numerator.len(), count);
        prop_assert_eq!(a.denominator.len(), count + 1);
        prop_assert!(a.numerator.all_finite() && a.denominator.all_finite());
        prop_assert_eq!(make_geometric_problem_with_dim(seed, dim), problem);
    }

    #[test]
    fn different_seeds_give_different_draws(seed in any::<u64>()) {
        let gm = GaussianMixture::standard(vec![0.0, 0.0]).unwrap();
        let a = sample_mixture(&gm, 16, seed);
        let b = sample_mixture(&gm, 16, seed.wrapping_add(1));
        prop_assert_ne!(bits(&a), bits(&b));
    }

    #[test]
    fn regularity_sampling_is_deterministic_and_in_range(seed in any::<u64>(), m in 1usize..300, n in 1usize..300) {
        let problem = make_regularity_problem(2, 1.25, 1024).unwrap();
        let (p1, q1) = sample_regularity(&problem, m, n, seed);
        let (p2, q2) = sample_regularity(&problem, m, n, seed);
        prop_assert_eq!(bits(&p1), bits(&p2));
        prop_assert_eq!(bits(&q1), bits(&q2));
        prop_assert_eq!((p1.len(), q1.len()), (m, n));
        prop_assert!(p1.as_slice().iter().chain(q1.as_slice()).all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn splits_are_deterministic_partitions(seed in any::<u64>(), m in 10usize..200, n in 10usize..200, three in any::<bool>()) {
        let xp = Points::from_scalars(&(0..m).map(|i| i as f64).collect::<Vec<_>>());
        let xq = Points::from_scalars(&(0..n).map(|i| -(i as f64) - 1.0).collect::<Vec<_>>());
        let split = if three { vec![0.64, 0.16, 0.2] } else { vec![0.8, 0.2] };
        let cfg = SelectionConfig { seed, split, ..SelectionConfig::default() };
        let a = split_data(&xp, &xq, &cfg).unwrap();
        let b = split_data(&xp, &xq, &cfg).unwrap();
        prop_assert_eq!(bits(&a.train.numerator), bits(&b.train.numerator));
        prop_assert_eq!(bits(&a.val.denominator), bits(&b.val.denominator));

        let mut all_p: Vec<f64> = a.train.numerator.as_slice().to_vec();
        all_p.extend_from_slice(a.val.numerator.as_slice());
        let mut all_q: Vec<f64> = a.train.denominator.as_slice().to_vec();
        all_q.extend_from_slice(a.val.denominator.as_slice());
        if let Some(t) = &a.test {
            all_p.extend_from_slice(t.numerator.as_slice());
            all_q.extend_from_slice(t.denominator.as_slice());
        }
        all_p.sort_by(f64::total_cmp);
        all_q.sort_by(|x, y| y.total_cmp(x));
        prop_assert_eq!(all_p, xp.as_slice().to_vec());
        prop_assert_eq!(all_q, xq.as_slice().to_vec());
        prop_assert_eq!(a.test.is_some(), three);
    }
}
