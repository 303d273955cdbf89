//! K-fold cross-validation over `(λ, λ_g) = (α λ*, (1 − α) λ*)`.
//!
//! Each fold re-estimates the centering on its training rows and applies it to
//! the held-out rows. Along each `α`, the `λ*` path is traversed from the
//! largest value down with warm starts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::design::{CenteredDesign, Centering, MeanMode, MeanModel};
use crate::error::{CovRegError, Result};
use crate::estimator::{fit, FitConfig};
use crate::model::{self, CoefficientStack, PenaltyConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CvGrid {
    alphas: Vec<f64>,
    lambda_stars: Vec<f64>,
    folds: usize,
}

impl CvGrid {
    pub fn new(alphas: Vec<f64>, lambda_stars: Vec<f64>, folds: usize) -> Result<Self> {
        if alphas.is_empty() || lambda_stars.is_empty() {
            return Err(CovRegError::InvalidParameter("grid must not be empty".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(CovRegError::InvalidParameter(format!("alpha {a} outside (0, 1)")));
        }
        if let Some(l) = lambda_stars.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(CovRegError::InvalidParameter(format!("lambda* {l} must be positive")));
        }
        if folds < 2 {
            return Err(CovRegError::InvalidParameter(format!("need at least 2 folds, got {folds}")));
        }
        Ok(Self {
            alphas,
            lambda_stars,
            folds,
        })
    }

    /// `α ∈ {0.25, 0.5, 0.75}`, `λ* ∈ {0.01, 0.02, …, 1.00}`, 5 folds.
    pub fn full() -> Self {
        Self {
            alphas: vec![0.25, 0.5, 0.75],
            lambda_stars: (1..=100).map(|i| i as f64 / 100.0).collect(),
            folds: 5,
        }
    }

    /// `nlam` log-spaced `λ*` values between `lo` and `hi` (inclusive).
    pub fn log_spaced(alphas: Vec<f64>, nlam: usize, lo: f64, hi: f64, folds: usize) -> Result<Self> {
        if nlam == 0 || !(lo > 0.0 && hi >= lo) {
            return Err(CovRegError::InvalidParameter(format!(
                "invalid log grid: {nlam} points on [{lo}, {hi}]"
            )));
        }
        let lambda_stars = if nlam == 1 {
            vec![hi]
        } else {
            let (a, b) = (lo.ln(), hi.ln());
            (0..nlam)
                .map(|i| (a + (b - a) * i as f64 / (nlam - 1) as f64).exp())
                .collect()
        };
        Self::new(alphas, lambda_stars, folds)
    }

    /// `α = 0.5`, 20 log-spaced `λ*` on `[0.01, 1]`, 5 folds.
    pub fn reduced() -> Self {
        Self::log_spaced(vec![0.5], 20, 0.01, 1.0, 5).expect("static grid is valid")
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn lambda_stars(&self) -> &[f64] {
        &self.lambda_stars
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn len(&self) -> usize {
        self.alphas.len() * self.lambda_stars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in `α`-major order.
    pub fn points(&self) -> Vec<GridPoint> {
        self.alphas
            .iter()
            .flat_map(|&alpha| {
                self.lambda_stars.iter().map(move |&lambda_star| GridPoint {
                    alpha,
                    lambda_star,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub alpha: f64,
    pub lambda_star: f64,
}

impl GridPoint {
    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            lambda: self.alpha * self.lambda_star,
            lambda_g: (1.0 - self.alpha) * self.lambda_star,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionRule {
    #[default]
    Minimum,
    /// Largest `λ*` whose mean loss is within one standard error of the minimum.
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub points: Vec<GridPoint>,
    /// Mean held-out loss per grid point.
    pub mean_loss: Vec<f64>,
    /// Standard error of the mean over folds.
    pub se_loss: Vec<f64>,
    /// `per_fold_loss[point][fold]`
    pub per_fold_loss: Vec<Vec<f64>>,
    pub best_index: usize,
    pub best: PenaltyConfig,
    pub diagnostics: Vec<String>,
}

impl CvResult {
    pub fn best_point(&self) -> GridPoint {
        self.points[self.best_index]
    }
}

/// Held-out quadratic loss (no penalty).
pub fn cv_loss(heldout: &CenteredDesign, stack: &CoefficientStack) -> Result<f64> {
    model::loss(heldout, stack)
}

/// Random permutation split into `k` folds whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Training/held-out designs for each fold, with held-out rows centered by
/// the training statistics.
pub fn fold_designs(design: &CenteredDesign, folds: &[Vec<usize>]) -> Vec<Result<(CenteredDesign, CenteredDesign)>> {
    let n = design.n();
    folds
        .iter()
        .map(|test| {
            let mut in_test = vec![false; n];
            test.iter().for_each(|&i| in_test[i] = true);
            let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            split_design(design, &train, test)
        })
        .collect()
}

fn split_design(design: &CenteredDesign, train: &[usize], test: &[usize]) -> Result<(CenteredDesign, CenteredDesign)> {
    match design.centering() {
        None => Ok((design.select_rows(train), design.select_rows(test))),
        Some(c) => {
            let mode = match c.mean_model() {
                MeanModel::ColumnMean(_) => MeanMode::ColumnMean,
                MeanModel::Linear(_) => MeanMode::LinearRegression,
            };
            let y = design.raw_responses();
            let x = design.raw_covariates();
            let (ytr, xtr) = (y.select_rows(train), x.select_rows(train));
            let centering = Centering::fit(&ytr, &xtr, mode)?;
            let train_design = centering.apply(&ytr, &xtr)?.with_bounds(design.bounds().clone())?;
            let test_design = centering.apply(&y.select_rows(test), &x.select_rows(test))?;
            Ok((train_design, test_design))
        }
    }
}

/// Held-out losses along one `α` path for one fold, in `lambda_stars` order.
fn fold_path(train: &CenteredDesign, test: &CenteredDesign, alpha: f64, lambda_stars: &[f64]) -> (Vec<f64>, Vec<String>) {
    let mut order: Vec<usize> = (0..lambda_stars.len()).collect();
    order.sort_by(|&a, &b| lambda_stars[b].total_cmp(&lambda_stars[a]));
    let mut losses = vec![f64::INFINITY; lambda_stars.len()];
    let mut notes = Vec::new();
    let mut warm: Option<CoefficientStack> = None;
    for idx in order {
        let point = GridPoint {
            alpha,
            lambda_star: lambda_stars[idx],
        };
        let mut cfg = FitConfig::new(point.penalty());
        if let Some(w) = warm.take() {
            cfg = cfg.with_warm_start(w);
        }
        match fit(train, &cfg).and_then(|r| cv_loss(test, &r.stack).map(|l| (l, r))) {
            Ok((loss, res)) if loss.is_finite() => {
                losses[idx] = loss;
                warm = Some(res.raw_stack);
            }
            Ok((loss, _)) => notes.push(format!("alpha={alpha} lambda*={}: loss {loss}", point.lambda_star)),
            Err(e) => notes.push(format!("alpha={alpha} lambda*={}: {e}", point.lambda_star)),
        }
    }
    (losses, notes)
}

/// Chooses `(λ, λ_g)` by K-fold cross-validation.
pub fn cv_select(design: &CenteredDesign, grid: &CvGrid, seed: u64, rule: SelectionRule) -> Result<CvResult> {
    let n = design.n();
    let k = grid.folds();
    if n < k {
        return Err(CovRegError::TooFewObservations { required: k, got: n });
    }
    let folds = fold_assignment(n, k, seed);
    let splits = fold_designs(design, &folds);
    let mut diagnostics = Vec::new();

    let tasks: Vec<(usize, usize)> = (0..grid.alphas().len())
        .flat_map(|a| (0..k).map(move |f| (a, f)))
        .collect();
    let results: Vec<(Vec<f64>, Vec<String>)> = tasks
        .par_iter()
        .map(|&(a, f)| match &splits[f] {
            Ok((train, test)) => fold_path(train, test, grid.alphas()[a], grid.lambda_stars()),
            Err(e) => (
                vec![f64::INFINITY; grid.lambda_stars().len()],
                vec![format!("fold {f}: {e}")],
            ),
        })
        .collect();

    let nlam = grid.lambda_stars().len();
    let points = grid.points();
    let mut per_fold_loss = vec![vec![f64::INFINITY; k]; points.len()];
    for (&(a, f), (losses, notes)) in tasks.iter().zip(results) {
        for (li, loss) in losses.into_iter().enumerate() {
            per_fold_loss[a * nlam + li][f] = loss;
        }
        diagnostics.extend(notes.into_iter().map(|m| format!("fold {f}: {m}")));
    }
    let (mean_loss, se_loss): (Vec<f64>, Vec<f64>) = per_fold_loss.iter().map(|fl| mean_se(fl)).unzip();
    let best_index = select(&points, &mean_loss, &se_loss, rule).ok_or_else(|| {
        CovRegError::NonFinite("every grid point has an infinite cross-validation loss".into())
    })?;
    Ok(CvResult {
        best: points[best_index].penalty(),
        points,
        mean_loss,
        se_loss,
        per_fold_loss,
        best_index,
        diagnostics,
    })
}

pub(crate) fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if !mean.is_finite() || values.len() < 2 {
        return (mean, if mean.is_finite() { 0.0 } else { f64::INFINITY });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Index of the minimum loss; ties go to the larger `λ*`, then the larger `α`.
fn select(points: &[GridPoint], mean: &[f64], se: &[f64], rule: SelectionRule) -> Option<usize> {
    let better = |i: usize, j: usize| -> bool {
        // is i preferred over j among equal-loss candidates
        (points[i].lambda_star, points[i].alpha) > (points[j].lambda_star, points[j].alpha)
    };
    let mut best: Option<usize> = None;
    for i in 0..points.len() {
        if !mean[i].is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if mean[i] < mean[b] || (mean[i] == mean[b] && better(i, b)) => Some(i),
            keep => keep,
        };
    }
    let best = best?;
    match rule {
        SelectionRule::Minimum => Some(best),
        SelectionRule::OneStandardError => {
            let cutoff = mean[best] + se[best];
            let mut chosen = best;
            for (i, m) in mean.iter().enumerate() {
                if m.is_finite() && *m <= cutoff && better(i, chosen) {
                    chosen = i;
                }
            }
            Some(chosen)
        }
    }
}
