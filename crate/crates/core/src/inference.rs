//! Debiased estimates, robust standard errors and confidence intervals.
//!
//! A direction matrix `M` approximately inverts `Θ̂ = X'X/n` row by row; each
//! row is the solution of a small QP. The one-step correction
//! `B̂ᵘ = B̂ + (1/n) M X' (z_j∘z_k − X B̂)` is applied to every pair `j ≤ k`.
//! For a linear contrast `a` of the layers (a unit vector for the internal
//! scale, or a row of the back-transform for the original scale) the
//! influence weights are `h = X M' a` and the variance of the contrast is
//! estimated from `hᵢ ε̂ᵢ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::design::CenteredDesign;
use crate::error::{CovRegError, Result};
use crate::estimator::product_table;
use crate::model::{check_dims, n_pairs, pair_table, CoefficientStack};
use crate::qp::{BoxQp, QpSettings, QpStatus};

pub const DEFAULT_BETA: f64 = 0.45;
const MAX_RELAXATIONS: usize = 5;
const FEASIBILITY_TOL: f64 = 1e-8;

/// Gram matrix `X'X/n`.
pub fn theta_hat(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows().max(1) as f64;
    let mut t = x.tr_mul(x) / n;
    // exact symmetry
    for i in 0..t.nrows() {
        for j in 0..i {
            let v = 0.5 * (t[(i, j)] + t[(j, i)]);
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
    t
}

/// `√(log(p(p+1)(q+1)) / n)`.
pub fn default_mu(n: usize, p: usize, q: usize) -> f64 {
    let count = (p * (p + 1) * (q + 1)) as f64;
    (count.max(std::f64::consts::E).ln() / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowReport {
    pub row: usize,
    pub mu_requested: f64,
    pub mu_used: f64,
    pub relaxations: usize,
    /// `‖Θ̂m − eₗ‖_∞` at the returned solution.
    pub theta_violation: f64,
    /// `‖Xm‖_∞` at the returned solution.
    pub x_sup: f64,
    pub objective: f64,
    /// ADMM iterations summed over constraint-generation rounds.
    pub qp_iterations: usize,
    /// Whether the final solution came from the active-set polish.
    pub polished: bool,
}

#[derive(Debug, Clone)]
pub struct DirectionMatrix {
    m: DMatrix<f64>,
    mu: f64,
    beta: f64,
    reports: Vec<RowReport>,
}

impl DirectionMatrix {
    /// Wraps a user-supplied matrix, e.g. `Θ̂⁻¹`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(CovRegError::DimensionMismatch("direction matrix must be square".into()));
        }
        Ok(Self {
            m,
            mu: 0.0,
            beta: DEFAULT_BETA,
            reports: Vec::new(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reports(&self) -> &[RowReport] {
        &self.reports
    }

    pub fn total_relaxations(&self) -> usize {
        self.reports.iter().map(|r| r.relaxations).sum()
    }
}

/// Row `l` of the direction matrix:
/// `argmin m'Θ̂m` s.t. `‖Θ̂m − eₗ‖_∞ ≤ μ`, `‖Xm‖_∞ ≤ n^β`.
///
/// The rows of `X` enter through constraint generation: the problem is first
/// solved with the `Θ̂` constraints only and violated rows of `X` are added
/// until none remain. If the problem is infeasible, `μ` is doubled up to five
/// times.
pub fn solve_direction_row(
    theta: &DMatrix<f64>,
    x: &DMatrix<f64>,
    l: usize,
    mu: f64,
    beta: f64,
) -> Result<(DVector<f64>, RowReport)> {
    let d = theta.nrows();
    if theta.ncols() != d || x.ncols() != d {
        return Err(CovRegError::DimensionMismatch(format!(
            "Θ̂ is {}x{}, X has {} columns",
            theta.nrows(),
            theta.ncols(),
            x.ncols()
        )));
    }
    if l >= d {
        return Err(CovRegError::InvalidParameter(format!("row {l} out of range 0..{d}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(CovRegError::InvalidParameter(format!("mu must be positive, got {mu}")));
    }
    if !(beta > 0.25 && beta < 0.5) {
        return Err(CovRegError::InvalidParameter(format!("beta must lie in (1/4, 1/2), got {beta}")));
    }
    let n = x.nrows();
    let bound = (n as f64).powf(beta);

    let mut mu_try = mu;
    for relaxations in 0..=MAX_RELAXATIONS {
        if let Some((m, qp_iterations, polished)) = solve_at(theta, x, l, mu_try, bound) {
            let report = RowReport {
                row: l,
                mu_requested: mu,
                mu_used: mu_try,
                relaxations,
                theta_violation: theta_violation(theta, &m, l),
                x_sup: (x * &m).amax(),
                objective: m.dot(&(theta * &m)),
                qp_iterations,
                polished,
            };
            return Ok((m, report));
        }
        mu_try *= 2.0;
    }
    Err(CovRegError::InfeasibleDirection {
        row: l,
        attempts: MAX_RELAXATIONS + 1,
        mu: mu_try / 2.0,
    })
}

fn theta_violation(theta: &DMatrix<f64>, m: &DVector<f64>, l: usize) -> f64 {
    let mut r = theta * m;
    r[l] -= 1.0;
    r.amax()
}

fn solve_at(
    theta: &DMatrix<f64>,
    x: &DMatrix<f64>,
    l: usize,
    mu: f64,
    bound: f64,
) -> Option<(DVector<f64>, usize, bool)> {
    let d = theta.nrows();
    let q = DVector::zeros(d);
    let mut working: Vec<usize> = Vec::new();
    let settings = QpSettings::default();
    let mut iterations = 0;
    loop {
        // rows scaled so every constraint has unit half-width
        let rows = d + working.len();
        let mut a = DMatrix::zeros(rows, d);
        let mut lo = DVector::zeros(rows);
        let mut hi = DVector::zeros(rows);
        for r in 0..d {
            for c in 0..d {
                a[(r, c)] = theta[(r, c)] / mu;
            }
            let e = if r == l { 1.0 } else { 0.0 };
            lo[r] = (e - mu) / mu;
            hi[r] = (e + mu) / mu;
        }
        for (w, &i) in working.iter().enumerate() {
            for c in 0..d {
                a[(d + w, c)] = x[(i, c)] / bound;
            }
            lo[d + w] = -1.0;
            hi[d + w] = 1.0;
        }
        let sol = BoxQp {
            p: theta,
            q: &q,
            a: &a,
            lo: &lo,
            hi: &hi,
        }
        .solve(&settings);
        iterations += sol.iterations;
        if sol.status == QpStatus::Infeasible {
            return None;
        }
        let m = sol.x;
        if theta_violation(theta, &m, l) > mu + FEASIBILITY_TOL {
            return None;
        }
        let xm = x * &m;
        let violated: Vec<usize> = (0..x.nrows())
            .filter(|&i| xm[i].abs() > bound + FEASIBILITY_TOL && !working.contains(&i))
            .collect();
        if violated.is_empty() {
            if xm.amax() > bound + FEASIBILITY_TOL {
                return None;
            }
            return Some((m, iterations, sol.polished));
        }
        working.extend(violated);
    }
}

/// Solves every row, in parallel.
pub fn direction_matrix(x: &DMatrix<f64>, mu: f64, beta: f64) -> Result<DirectionMatrix> {
    let theta = theta_hat(x);
    let d = theta.nrows();
    let rows: Vec<Result<(DVector<f64>, RowReport)>> = (0..d)
        .into_par_iter()
        .map(|l| solve_direction_row(&theta, x, l, mu, beta))
        .collect();
    let mut m = DMatrix::zeros(d, d);
    let mut reports = Vec::with_capacity(d);
    for (l, r) in rows.into_iter().enumerate() {
        let (row, report) = r?;
        m.set_row(l, &row.transpose());
        reports.push(report);
    }
    Ok(DirectionMatrix { m, mu, beta, reports })
}

fn layers_matrix(stack: &CoefficientStack) -> DMatrix<f64> {
    let np = n_pairs(stack.p());
    DMatrix::from_fn(stack.n_layers(), np, |l, c| stack.layer(l)[c])
}

fn stack_from_matrix(p: usize, b: &DMatrix<f64>) -> CoefficientStack {
    let layers = (0..b.nrows()).map(|l| b.row(l).iter().copied().collect()).collect();
    CoefficientStack::from_packed(p, layers).expect("shape checked by caller")
}

/// `n × p(p+1)/2` residuals `z_ij z_ik − Σₗ x_il B_l,jk`.
pub fn residual_matrix(design: &CenteredDesign, stack: &CoefficientStack) -> Result<DMatrix<f64>> {
    check_dims(design, stack)?;
    let np = n_pairs(design.p());
    let v = DMatrix::from_row_slice(design.n(), np, &product_table(design.z()));
    Ok(v - design.x() * layers_matrix(stack))
}

/// One-step bias correction of every `(l, j ≤ k)` coefficient.
pub fn debias(design: &CenteredDesign, stack: &CoefficientStack, m: &DMatrix<f64>) -> Result<CoefficientStack> {
    let d = design.q() + 1;
    if m.nrows() != d || m.ncols() != d {
        return Err(CovRegError::DimensionMismatch(format!(
            "direction matrix is {}x{}, expected {d}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    let r = residual_matrix(design, stack)?;
    let g = design.x().tr_mul(&r) / design.n() as f64;
    let bu = layers_matrix(stack) + m * g;
    Ok(stack_from_matrix(design.p(), &bu))
}

/// Influence weights `h = X M' a` of the contrast `a`.
pub fn contrast_weights(design: &CenteredDesign, m: &DMatrix<f64>, a: &DVector<f64>) -> DVector<f64> {
    design.x() * (m.transpose() * a)
}

/// `(1/n) Σᵢ (hᵢ εᵢ − mean)²` for every column of `residuals`.
pub fn weighted_variance(h: &DVector<f64>, residuals: &DMatrix<f64>) -> Vec<f64> {
    let n = residuals.nrows() as f64;
    residuals
        .column_iter()
        .map(|e| {
            let mean = h.iter().zip(e.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
            h.iter()
                .zip(e.iter())
                .map(|(a, b)| (a * b - mean).powi(2))
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Variance estimate for layer `l` on the internal scale, one value per pair.
pub fn empirical_variance(
    design: &CenteredDesign,
    debiased: &CoefficientStack,
    m: &DMatrix<f64>,
    l: usize,
) -> Result<Vec<f64>> {
    let d = design.q() + 1;
    if l >= d {
        return Err(CovRegError::InvalidParameter(format!("layer {l} out of range 0..{d}")));
    }
    let eps = residual_matrix(design, debiased)?;
    let h = contrast_weights(design, m, &DVector::from_fn(d, |i, _| if i == l { 1.0 } else { 0.0 }));
    Ok(weighted_variance(&h, &eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Correction {
    #[default]
    None,
    /// Per-test level `α / (p(p−1)/2)`.
    Bonferroni,
}

impl Correction {
    pub fn per_test_level(self, alpha: f64, p: usize) -> f64 {
        match self {
            Correction::None => alpha,
            Correction::Bonferroni => alpha / ((p * p.saturating_sub(1) / 2).max(1) as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DebiasResult {
    pub estimate: CoefficientStack,
    pub debiased: CoefficientStack,
    pub se: CoefficientStack,
    pub ci_lower: CoefficientStack,
    pub ci_upper: CoefficientStack,
    pub alpha: f64,
    pub correction: Correction,
    /// `[layer][pair]`, at the corrected level.
    pub significant: Vec<Vec<bool>>,
    /// `[layer][pair]`, zero estimated standard error.
    pub degenerate: Vec<Vec<bool>>,
}

/// Intervals `B̂ᵘ ± Φ⁻¹(1−α/2)·se`; entries are flagged significant when the
/// interval at the corrected level excludes zero.
pub fn confidence_intervals(
    estimate: &CoefficientStack,
    debiased: &CoefficientStack,
    se: &CoefficientStack,
    alpha: f64,
    correction: Correction,
) -> Result<DebiasResult> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CovRegError::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let (p, d) = (debiased.p(), debiased.n_layers());
    for s in [estimate, se] {
        if s.p() != p || s.n_layers() != d {
            return Err(CovRegError::DimensionMismatch("stacks differ in shape".into()));
        }
    }
    if se.layers().iter().flatten().any(|v| !(*v >= 0.0)) {
        return Err(CovRegError::InvalidParameter("standard errors must be nonnegative".into()));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let z_test = normal_quantile(1.0 - correction.per_test_level(alpha, p) / 2.0);
    let mut lower = debiased.clone();
    let mut upper = debiased.clone();
    let mut significant = Vec::with_capacity(d);
    let mut degenerate = Vec::with_capacity(d);
    for l in 0..d {
        let (bu, s) = (debiased.layer(l), se.layer(l));
        for (c, v) in lower.layer_mut(l).iter_mut().enumerate() {
            *v = bu[c] - z * s[c];
        }
        for (c, v) in upper.layer_mut(l).iter_mut().enumerate() {
            *v = bu[c] + z * s[c];
        }
        degenerate.push(s.iter().map(|v| *v == 0.0).collect());
        significant.push(
            bu.iter()
                .zip(s)
                .map(|(b, s)| *s > 0.0 && b.abs() > z_test * s)
                .collect(),
        );
    }
    Ok(DebiasResult {
        estimate: estimate.clone(),
        debiased: debiased.clone(),
        se: se.clone(),
        ci_lower: lower,
        ci_upper: upper,
        alpha,
        correction,
        significant,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub layer: usize,
    pub j: usize,
    pub k: usize,
    pub debiased: f64,
    pub se: f64,
}

/// Off-diagonal entries whose interval at the corrected level excludes zero.
pub fn detect_edges(result: &DebiasResult, alpha: f64, correction: Correction) -> Result<Vec<Edge>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CovRegError::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let p = result.debiased.p();
    let z = normal_quantile(1.0 - correction.per_test_level(alpha, p) / 2.0);
    let table = pair_table(p);
    let mut out = Vec::new();
    for l in 0..result.debiased.n_layers() {
        for (c, &(j, k)) in table.iter().enumerate() {
            if j == k {
                continue;
            }
            let (b, s) = (result.debiased.layer(l)[c], result.se.layer(l)[c]);
            if s > 0.0 && b.abs() > z * s {
                out.push(Edge {
                    layer: l,
                    j,
                    k,
                    debiased: b,
                    se: s,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct InferenceConfig {
    /// Defaults to `√(log(p(p+1)(q+1))/n)`.
    pub mu: Option<f64>,
    pub beta: f64,
    pub alpha: f64,
    pub correction: Correction,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mu: None,
            beta: DEFAULT_BETA,
            alpha: 0.05,
            correction: Correction::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub directions: DirectionMatrix,
    /// Residuals of the debiased fit, `n × p(p+1)/2`.
    pub residuals: DMatrix<f64>,
    pub internal: DebiasResult,
    /// Back-transformed to the raw covariate scale.
    pub original: DebiasResult,
}

/// Standard errors `√(v̂/n)` of the contrasts, stacked as layers.
pub fn contrast_standard_errors(
    design: &CenteredDesign,
    m: &DMatrix<f64>,
    residuals: &DMatrix<f64>,
    contrasts: &[DVector<f64>],
) -> CoefficientStack {
    let n = design.n() as f64;
    let layers: Vec<Vec<f64>> = contrasts
        .par_iter()
        .map(|a| {
            let h = contrast_weights(design, m, a);
            weighted_variance(&h, residuals).into_iter().map(|v| (v / n).sqrt()).collect()
        })
        .collect();
    CoefficientStack::from_packed(design.p(), layers).expect("one layer per contrast")
}

/// Debiases `stack` and builds intervals on both the internal and the raw scale.
pub fn infer(design: &CenteredDesign, stack: &CoefficientStack, cfg: &InferenceConfig) -> Result<Inference> {
    check_dims(design, stack)?;
    let mu = cfg
        .mu
        .unwrap_or_else(|| default_mu(design.n(), design.p(), design.q()));
    let directions = direction_matrix(design.x(), mu, cfg.beta)?;
    infer_with(design, stack, directions, cfg)
}

/// As [`infer`] with a precomputed direction matrix.
pub fn infer_with(
    design: &CenteredDesign,
    stack: &CoefficientStack,
    directions: DirectionMatrix,
    cfg: &InferenceConfig,
) -> Result<Inference> {
    let m = directions.matrix();
    let debiased = debias(design, stack, m)?;
    let residuals = residual_matrix(design, &debiased)?;
    let d = design.q() + 1;
    let units: Vec<DVector<f64>> = (0..d)
        .map(|l| DVector::from_fn(d, |i, _| if i == l { 1.0 } else { 0.0 }))
        .collect();
    let se = contrast_standard_errors(design, m, &residuals, &units);
    let internal = confidence_intervals(stack, &debiased, &se, cfg.alpha, cfg.correction)?;

    let scaling = design.scaling();
    let se_orig = contrast_standard_errors(design, m, &residuals, &scaling.original_contrasts());
    let original = confidence_intervals(
        &scaling.to_original(stack),
        &scaling.to_original(&debiased),
        &se_orig,
        cfg.alpha,
        cfg.correction,
    )?;
    Ok(Inference {
        directions,
        residuals,
        internal,
        original,
    })
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: rational approximation refined by one Halley step.
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}
