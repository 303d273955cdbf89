use covreg::estimator::kkt_residual;
use covreg::model::{min_eigenvalue, n_pairs};
use covreg::tuning::fold_assignment;
use covreg::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stack(p: usize, q: usize, scale: f64, rng: &mut ChaCha8Rng) -> CoefficientStack {
    let layers = (0..=q)
        .map(|_| (0..n_pairs(p)).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
        .collect();
    CoefficientStack::from_packed(p, layers).unwrap()
}

fn random_design(n: usize, p: usize, q: usize, rng: &mut ChaCha8Rng) -> CenteredDesign {
    let y = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let x = DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..3.0));
    center_data(&y, &x, MeanMode::ColumnMean).unwrap()
}

fn scaled(stack: &CoefficientStack, c: f64) -> CoefficientStack {
    let layers = stack.layers().iter().map(|l| l.iter().map(|v| v * c).collect()).collect();
    CoefficientStack::from_packed(stack.p(), layers).unwrap()
}

fn mix(a: &CoefficientStack, b: &CoefficientStack, t: f64) -> CoefficientStack {
    let layers = a
        .layers()
        .iter()
        .zip(b.layers())
        .map(|(la, lb)| la.iter().zip(lb).map(|(x, y)| t * x + (1.0 - t) * y).collect())
        .collect();
    CoefficientStack::from_packed(a.p(), layers).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigma_is_linear_in_x(seed in any::<u64>(), p in 1usize..6, q in 1usize..4, a in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_stack(p, q, 1.0, &mut rng);
        let x1: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xm: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + (1.0 - a) * v).collect();
        let lhs = s.evaluate_sigma(&xm).unwrap();
        let rhs = s.evaluate_sigma(&x1).unwrap() * a + s.evaluate_sigma(&x2).unwrap() * (1.0 - a);
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn positive_margin_certifies_the_box(seed in any::<u64>(), p in 1usize..6, q in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = random_stack(p, q, 0.2, &mut rng);
        for j in 0..p {
            s.set(0, j, j, 1.0 + rng.random_range(0.0..1.0));
        }
        let lower: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.1..2.0)).collect();
        let bounds = CovariateBounds::new(lower.clone(), upper.clone()).unwrap();
        if pd_margin(&s, &bounds).unwrap() > 0.0 {
            for _ in 0..100 {
                let x: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| rng.random_range(*l..=*u)).collect();
                prop_assert!(min_eigenvalue(&s.evaluate_sigma(&x).unwrap()).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn penalty_is_positively_homogeneous(seed in any::<u64>(), p in 1usize..6, q in 0usize..4, c in 0.01f64..10.0,
                                         lam in 0.0f64..1.0, lam_g in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_stack(p, q, 1.0, &mut rng);
        let cfg = PenaltyConfig::new(lam, lam_g).unwrap();
        let base = penalty_value(&s, &cfg);
        let got = penalty_value(&scaled(&s, c), &cfg);
        prop_assert!((got - c * base).abs() <= 1e-10 * (1.0 + c * base));
        // the B₀ diagonal is unpenalized
        let mut t = s.clone();
        for j in 0..p {
            t.set(0, j, j, 123.0);
        }
        prop_assert!((penalty_value(&t, &cfg) - base).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn objective_is_convex(seed in any::<u64>(), p in 1usize..5, q in 0usize..3, t in 0.01f64..0.99,
                           lam in 0.0f64..0.5, lam_g in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_design(30, p, q, &mut rng);
        let a = random_stack(p, q, 1.0, &mut rng);
        let b = random_stack(p, q, 1.0, &mut rng);
        let cfg = PenaltyConfig::new(lam, lam_g).unwrap();
        let lhs = objective(&d, &mix(&a, &b, t), &cfg).unwrap();
        let rhs = t * objective(&d, &a, &cfg).unwrap() + (1.0 - t) * objective(&d, &b, &cfg).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn soft_threshold_shrinks(a in -10.0f64..10.0, lam in 0.0f64..5.0) {
        let s = soft_threshold(a, lam);
        prop_assert!(s.abs() <= a.abs());
        prop_assert_eq!(s == 0.0, a.abs() <= lam);
        if s != 0.0 {
            prop_assert_eq!(s.signum(), a.signum());
            prop_assert!((a.abs() - s.abs() - lam).abs() <= 1e-12);
        }
    }

    #[test]
    fn folds_partition_the_rows(n in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = fold_assignment(n, k, seed);
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fits_descend_and_satisfy_optimality(seed in any::<u64>(), p in 2usize..5, q in 1usize..4,
                                           lam in 0.005f64..0.2, lam_g in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_design(60, p, q, &mut rng);
        let cfg = PenaltyConfig::new(lam, lam_g).unwrap();
        let r = fit(&d, &FitConfig::new(cfg)).unwrap();
        prop_assert!(r.converged);
        for w in r.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert!(kkt_residual(&d, &r.raw_stack, &cfg).unwrap() <= 1e-6);
        for l in 0..=q {
            for (a, b) in r.raw_stack.layer(l).iter().zip(r.stack.layer(l)) {
                prop_assert_eq!(*a == 0.0, *b == 0.0);
            }
        }
        prop_assert!(pd_margin(&r.stack, d.bounds()).unwrap() >= -1e-10);
    }
}
