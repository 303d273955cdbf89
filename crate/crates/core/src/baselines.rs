//! Comparison estimators that ignore the penalty or the covariates.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::design::CenteredDesign;
use crate::error::{CovRegError, Result};
use crate::estimator::{product_table, soft_threshold};
use crate::model::{n_pairs, CoefficientStack, CovariateBounds};
use crate::tuning::{fold_assignment, mean_se};

/// `Z'Z/n`.
pub fn dense_sample(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows().max(1) as f64;
    let mut s = z.tr_mul(z) / n;
    for i in 0..s.nrows() {
        for j in 0..i {
            s[(i, j)] = s[(j, i)];
        }
    }
    s
}

/// Sample covariance with soft-thresholded off-diagonal entries.
pub fn sparse_sample(z: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(CovRegError::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let mut s = dense_sample(z);
    let p = s.nrows();
    for j in 0..p {
        for k in 0..p {
            if j != k {
                s[(j, k)] = soft_threshold(s[(j, k)], lambda);
            }
        }
    }
    Ok(s)
}

/// Unpenalized least squares of every product `z_j∘z_k` on `X`.
pub fn dense_covreg(design: &CenteredDesign) -> Result<CoefficientStack> {
    let (n, d) = (design.n(), design.q() + 1);
    if n <= d {
        return Err(CovRegError::TooFewObservations { required: d + 1, got: n });
    }
    let x = design.x();
    let gram = x.tr_mul(x);
    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(v.abs())));
    if !(lo > 1e-12 * hi) {
        return Err(CovRegError::Singular(format!(
            "X'X is singular (eigenvalues in [{lo:.3e}, {hi:.3e}])"
        )));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| CovRegError::Singular("X'X is not positive definite".into()))?;
    let np = n_pairs(design.p());
    let v = DMatrix::from_row_slice(n, np, &product_table(design.z()));
    let b = chol.solve(&x.tr_mul(&v));
    let layers = (0..d).map(|l| b.row(l).iter().copied().collect()).collect();
    CoefficientStack::from_packed(design.p(), layers)
}

#[derive(Debug, Clone)]
pub struct SparseSampleCv {
    pub lambdas: Vec<f64>,
    pub mean_loss: Vec<f64>,
    pub se_loss: Vec<f64>,
    pub best_lambda: f64,
    pub estimate: DMatrix<f64>,
}

/// Chooses the threshold by K-fold cross-validation of the held-out
/// product loss. Each fold is centered with its training means. Ties go to
/// the larger threshold.
pub fn sparse_sample_cv(z: &DMatrix<f64>, lambdas: &[f64], folds: usize, seed: u64) -> Result<SparseSampleCv> {
    if lambdas.is_empty() {
        return Err(CovRegError::InvalidParameter("empty threshold grid".into()));
    }
    let n = z.nrows();
    if folds < 2 || n < 2 * folds {
        return Err(CovRegError::TooFewObservations { required: 2 * folds.max(2), got: n });
    }
    let assignment = fold_assignment(n, folds, seed);
    let mut per_fold = vec![vec![0.0; folds]; lambdas.len()];
    for (f, test) in assignment.iter().enumerate() {
        let train: Vec<usize> = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
        let zt = z.select_rows(&train);
        let means = zt.row_mean();
        let center = |m: DMatrix<f64>| {
            let mut m = m;
            for mut row in m.row_iter_mut() {
                row -= &means;
            }
            m
        };
        let ztr = center(zt);
        let zte = center(z.select_rows(test));
        let held = CenteredDesign::from_parts(
            zte.clone(),
            DMatrix::from_element(zte.nrows(), 1, 1.0),
            CovariateBounds::unit(0),
        )?;
        for (g, &lam) in lambdas.iter().enumerate() {
            let s = sparse_sample(&ztr, lam)?;
            let stack = CoefficientStack::from_dense(&[s])?;
            per_fold[g][f] = crate::model::loss(&held, &stack)?;
        }
    }
    let (mean_loss, se_loss): (Vec<f64>, Vec<f64>) = per_fold.iter().map(|v| mean_se(v)).unzip();
    let mut best = 0;
    for g in 1..lambdas.len() {
        let better = mean_loss[g] < mean_loss[best]
            || (mean_loss[g] == mean_loss[best] && lambdas[g] > lambdas[best]);
        if better {
            best = g;
        }
    }
    let best_lambda = lambdas[best];
    let estimate = sparse_sample(z, best_lambda)?;
    Ok(SparseSampleCv {
        lambdas: lambdas.to_vec(),
        mean_loss,
        se_loss,
        best_lambda,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit, FitConfig};
    use crate::model::PenaltyConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn dense_sample_examples() {
        let z = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        assert_eq!(dense_sample(&z), DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]));
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        assert_eq!(dense_sample(&z), DMatrix::identity(2, 2));
        let z = random(30, 4, 1);
        let s = dense_sample(&z);
        for j in 0..4 {
            for k in 0..4 {
                let naive: f64 = (0..30).map(|i| z[(i, j)] * z[(i, k)]).sum::<f64>() / 30.0;
                assert!((s[(j, k)] - naive).abs() < 1e-12);
            }
        }
        assert!(crate::model::min_eigenvalue(&s).unwrap() >= -1e-10);
    }

    #[test]
    fn sparse_sample_examples() {
        let z = random(30, 4, 2);
        let s = dense_sample(&z);
        assert_eq!(sparse_sample(&z, 0.0).unwrap(), s);
        let big = s.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let t = sparse_sample(&z, big).unwrap();
        assert_eq!(t, DMatrix::from_diagonal(&s.diagonal()));
        assert!(sparse_sample(&z, -1.0).is_err());
    }

    #[test]
    fn sparse_sample_is_the_covariate_free_fit() {
        let z = random(40, 4, 3);
        let d = CenteredDesign::from_parts(z.clone(), DMatrix::from_element(40, 1, 1.0), CovariateBounds::unit(0)).unwrap();
        for lam in [0.0, 0.01, 0.05, 0.2] {
            let r = fit(&d, &FitConfig::new(PenaltyConfig::new(lam, 0.0).unwrap())).unwrap();
            let s = sparse_sample(&z, lam).unwrap();
            assert_eq!(r.raw_stack.dense(0), s);
        }
    }

    #[test]
    fn dense_covreg_examples() {
        let z = random(25, 3, 4);
        let d = CenteredDesign::from_parts(z.clone(), DMatrix::from_element(25, 1, 1.0), CovariateBounds::unit(0)).unwrap();
        let b = dense_covreg(&d).unwrap();
        assert!((b.dense(0) - dense_sample(&z)).amax() < 1e-12);

        let x = DMatrix::from_fn(25, 2, |_, l| if l == 0 { 1.0 } else { 0.5 });
        let d = CenteredDesign::from_parts(z, x, CovariateBounds::unit(1)).unwrap();
        assert!(matches!(dense_covreg(&d), Err(CovRegError::Singular(_))));
    }

    #[test]
    fn cv_picks_a_grid_value_and_is_reproducible() {
        let z = random(60, 5, 5);
        let grid = [0.0, 0.02, 0.05, 0.1, 0.5];
        let a = sparse_sample_cv(&z, &grid, 5, 1).unwrap();
        let b = sparse_sample_cv(&z, &grid, 5, 1).unwrap();
        assert_eq!(a.mean_loss, b.mean_loss);
        assert!(grid.contains(&a.best_lambda));
        assert_eq!(a.estimate, sparse_sample(&z, a.best_lambda).unwrap());
        // independent uniform columns: heavy thresholding wins
        assert!(a.best_lambda >= 0.05);
    }
}
