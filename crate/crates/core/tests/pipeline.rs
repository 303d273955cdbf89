use covreg::simulate::{gen_covariates, gen_responses, replicate_rng, true_stack, rsse, selection_rates};
use covreg::*;

fn hub_design(n: usize, p: usize, q: usize, seed: u64) -> CenteredDesign {
    let mut rng = replicate_rng(seed, 0);
    let x = gen_covariates(n, q, Setting::Binary, &mut rng);
    let (y, _) = gen_responses(&x, Structure::Hub, p, &mut rng).unwrap();
    center_data(&y, &x, MeanMode::ColumnMean).unwrap()
}

#[test]
fn cross_validated_fit_finds_the_effective_covariate() {
    let (p, q) = (10, 4);
    let d = hub_design(400, p, q, 11);
    let grid = CvGrid::log_spaced(vec![0.5], 10, 0.02, 1.0, 5).unwrap();
    let cv = cv_select(&d, &grid, 3, SelectionRule::Minimum).unwrap();
    let again = cv_select(&d, &grid, 3, SelectionRule::Minimum).unwrap();
    assert_eq!(cv, again);

    let r = fit(&d, &FitConfig::new(cv.best)).unwrap();
    assert!(r.converged);
    assert!(r.raw_stack.effective_covariates().contains(&1));
    let est = d.scaling().to_original(&r.stack);
    let truth = true_stack(Structure::Hub, p, q);
    let (tpr, _) = selection_rates(&est, &truth);
    assert!(tpr >= 0.9, "tpr {tpr}");
    let norm = |l: usize| est.layer(l).iter().map(|v| v * v).sum::<f64>().sqrt();
    for l in 2..=q {
        assert!(norm(l) < 0.25 * norm(1), "layer {l}");
    }
    let zero = CoefficientStack::zeros(p, q);
    assert!(rsse(&est, &truth) < 0.5 * rsse(&zero, &truth));
}

#[test]
fn inference_flags_hub_edges() {
    let (p, q) = (6, 2);
    let d = hub_design(600, p, q, 12);
    let r = fit(&d, &FitConfig::new(PenaltyConfig::new(0.05, 0.05).unwrap())).unwrap();
    let inf = infer(&d, &r.raw_stack, &InferenceConfig::default()).unwrap();
    let res = &inf.original;
    for l in 0..=q {
        for (idx, v) in res.debiased.layer(l).iter().enumerate() {
            assert!(res.ci_lower.layer(l)[idx] <= *v && *v <= res.ci_upper.layer(l)[idx]);
            assert!(res.se.layer(l)[idx] >= 0.0);
        }
    }
    let edges = detect_edges(res, 0.05, Correction::Bonferroni).unwrap();
    // hub 0 links to 1..=4 through the first covariate
    for k in 1..=4 {
        assert!(edges.iter().any(|e| e.layer == 1 && e.j == 0 && e.k == k), "missing edge (0,{k})");
    }
    assert!(edges.iter().filter(|e| e.layer == 2).count() <= 1);
}

#[test]
fn experiment_is_reproducible() {
    let sc = Scenario::new(Structure::Clique, Setting::Continuous, 120, 10, 3).unwrap();
    let mut cfg = ExperimentConfig::new(2, 99);
    cfg.grid = CvGrid::log_spaced(vec![0.5], 5, 0.05, 1.0, 3).unwrap();
    let a = run_experiment(&sc, &cfg).unwrap();
    let b = run_experiment(&sc, &cfg).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert_eq!(a.replicates.len(), 2);
    assert!(a.summary(Method::SparseCovReg).is_some());
}
