//! Blockwise coordinate descent for the penalized least-squares objective,
//! followed by the shrinkage towards the identity that makes `Σ(x)` positive
//! semi-definite over the whole covariate box.
//!
//! The response products `z_ij z_ik` are held as an `n × p(p+1)/2` row-major
//! table together with the current residual table. A block update for layer
//! `l` needs the partial-residual correlation
//! `gₗ = (1/n) Σᵢ x_il r̃_i = (1/n) Σᵢ x_il rᵢ + cₗ Bₗ`, with `cₗ = (1/n) Σᵢ x_il²`,
//! after which the residuals are patched with the change in `Bₗ`.
//!
//! Sweeps alternate between full passes over all layers and passes over the
//! active layers only (the intercept plus the currently nonzero groups). The
//! stopping rule is only checked after a full pass, so the fixed point is the
//! same as plain cyclic descent. A fit stops once a full pass lowers the
//! objective by less than `tol · (1 + J₀)` and the largest subgradient
//! violation is at most `kkt_tol`.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::design::CenteredDesign;
use crate::error::{CovRegError, Result};
use crate::model::{self, check_dims, n_pairs, pairs, CoefficientStack, CovariateBounds, PenaltyConfig};

/// `sign(a) · max(|a| − lam, 0)`.
#[inline]
pub fn soft_threshold(a: f64, lam: f64) -> f64 {
    if a > lam {
        a - lam
    } else if a < -lam {
        a + lam
    } else {
        0.0
    }
}

/// Intercept block: diagonal entries take the unpenalized mean, off-diagonal
/// entries are soft-thresholded. `g` holds the mean partial residuals.
fn intercept_block(p: usize, g: &[f64], lambda: f64, out: &mut [f64]) {
    for ((idx, (j, k)), gv) in pairs(p).enumerate().zip(g) {
        out[idx] = if j == k { *gv } else { soft_threshold(*gv, lambda) };
    }
}

/// Covariate block: exact minimizer of
/// `(c/2)‖b‖² − gᵀb + λ‖b‖₁ + λ_g‖b‖₂`, i.e. `S·(‖S‖ − λ_g)/(c‖S‖)` with
/// `S = S_λ(g)`, or zero when `‖S‖ ≤ λ_g`.
fn group_block(g: &[f64], c: f64, penalty: &PenaltyConfig, out: &mut [f64]) {
    let mut norm2 = 0.0;
    for (o, gv) in out.iter_mut().zip(g) {
        let s = soft_threshold(*gv, penalty.lambda);
        *o = s;
        norm2 += s * s;
    }
    let norm = norm2.sqrt();
    if norm <= penalty.lambda_g || norm == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let factor = (norm - penalty.lambda_g) / (c * norm);
    out.iter_mut().for_each(|o| *o *= factor);
}

/// Options for [`fit`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub penalty: PenaltyConfig,
    /// Relative tolerance: sweeps stop once the objective drops by less than
    /// `tol · (1 + J₀)`, `J₀` being the objective at the starting point.
    pub tol: f64,
    /// A fit only counts as converged once the largest optimality violation
    /// is at most this value. `f64::INFINITY` disables the check.
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<CoefficientStack>,
}

impl FitConfig {
    pub fn new(penalty: PenaltyConfig) -> Self {
        Self {
            penalty,
            tol: 1e-6,
            kkt_tol: 1e-6,
            max_iter: 500,
            warm_start: None,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_kkt_tol(mut self, kkt_tol: f64) -> Self {
        self.kkt_tol = kkt_tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_warm_start(mut self, stack: CoefficientStack) -> Self {
        self.warm_start = Some(stack);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(CovRegError::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(CovRegError::InvalidParameter(format!(
                "kkt_tol must be positive, got {}",
                self.kkt_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(CovRegError::InvalidParameter("max_iter must be at least 1".into()));
        }
        PenaltyConfig::new(self.penalty.lambda, self.penalty.lambda_g).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Final estimate after the positive-definiteness adjustment.
    pub stack: CoefficientStack,
    /// Coordinate-descent solution before the adjustment.
    pub raw_stack: CoefficientStack,
    pub delta: f64,
    /// Objective after each sweep; the first entry is the starting point.
    pub objective_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

/// Mutable solver state.
struct Solver<'a> {
    p: usize,
    n: usize,
    m: usize,
    x: &'a DMatrix<f64>,
    /// `(1/n) Σᵢ x_il²`
    col_sq: Vec<f64>,
    products: Vec<f64>,
    resid: Vec<f64>,
    stack: CoefficientStack,
    penalty: PenaltyConfig,
    grad: Vec<f64>,
    next: Vec<f64>,
    delta: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(design: &'a CenteredDesign, stack: CoefficientStack, penalty: PenaltyConfig) -> Result<Self> {
        let (n, p) = (design.n(), design.p());
        let m = n_pairs(p);
        let x = design.x();
        let col_sq: Vec<f64> = (0..x.ncols())
            .map(|l| x.column(l).iter().map(|v| v * v).sum::<f64>() / n as f64)
            .collect();
        if let Some(l) = (1..col_sq.len()).find(|&l| col_sq[l] == 0.0) {
            return Err(CovRegError::ZeroVarianceCovariate { column: l - 1 });
        }
        let products = product_table(design.z());
        let mut solver = Self {
            p,
            n,
            m,
            x,
            col_sq,
            resid: products.clone(),
            products,
            stack,
            penalty,
            grad: vec![0.0; m],
            next: vec![0.0; m],
            delta: vec![0.0; m],
        };
        solver.refresh_residuals();
        Ok(solver)
    }

    /// Coefficients as an `m × (q+1)` matrix, one layer per column.
    fn layer_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.m, self.stack.n_layers());
        for l in 0..self.stack.n_layers() {
            b.column_mut(l).copy_from_slice(self.stack.layer(l));
        }
        b
    }

    fn refresh_residuals(&mut self) {
        self.resid.copy_from_slice(&self.products);
        let b = self.layer_matrix();
        let xt = self.x.transpose();
        // the row-major n × m table is the column-major m × n transpose
        let mut rt = DMatrixViewMut::from_slice(&mut self.resid, self.m, self.n);
        rt.gemm(-1.0, &b, &xt, 1.0);
    }

    /// One cyclic pass over `layers`. The residual patch for a changed layer
    /// is applied in the same pass over the table that accumulates the
    /// correlation of the next layer.
    fn sweep(&mut self, layers: &[usize]) {
        let (n, m) = (self.n, self.m);
        let inv_n = 1.0 / n as f64;
        let mut pending: Option<usize> = None;
        for &l in layers {
            self.grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..n {
                let xil = self.x[(i, l)];
                let row = &mut self.resid[i * m..(i + 1) * m];
                match pending {
                    Some(prev) => {
                        let xp = self.x[(i, prev)];
                        for ((r, d), g) in row.iter_mut().zip(&self.delta).zip(self.grad.iter_mut()) {
                            *r -= xp * d;
                            *g += xil * *r;
                        }
                    }
                    None => {
                        for (g, r) in self.grad.iter_mut().zip(row.iter()) {
                            *g += xil * r;
                        }
                    }
                }
            }
            let c = self.col_sq[l];
            for (g, b) in self.grad.iter_mut().zip(self.stack.layer(l)) {
                *g = *g * inv_n + c * b;
            }
            if l == 0 {
                intercept_block(self.p, &self.grad, self.penalty.lambda, &mut self.next);
            } else {
                group_block(&self.grad, self.col_sq[l], &self.penalty, &mut self.next);
            }
            let mut changed = false;
            for ((d, new), old) in self.delta.iter_mut().zip(&self.next).zip(self.stack.layer(l)) {
                *d = new - old;
                changed |= *d != 0.0;
            }
            pending = if changed {
                self.stack.layer_mut(l).copy_from_slice(&self.next);
                Some(l)
            } else {
                None
            };
        }
        if let Some(prev) = pending {
            for i in 0..n {
                let xp = self.x[(i, prev)];
                let row = &mut self.resid[i * m..(i + 1) * m];
                for (r, d) in row.iter_mut().zip(&self.delta) {
                    *r -= xp * d;
                }
            }
        }
    }

    fn objective(&self) -> f64 {
        let rss: f64 = self.resid.iter().map(|r| r * r).sum();
        rss / (2.0 * self.n as f64) + model::penalty_value(&self.stack, &self.penalty)
    }

    /// Largest optimality violation, from freshly recomputed residuals.
    fn kkt(&mut self) -> f64 {
        self.refresh_residuals();
        let rt = DMatrixView::from_slice(&self.resid, self.m, self.n);
        let grad = (rt * self.x) * (-1.0 / self.n as f64);
        (0..self.stack.n_layers())
            .map(|l| layer_kkt(self.p, l, grad.column(l).as_slice(), self.stack.layer(l), &self.penalty))
            .fold(0.0, f64::max)
    }

    fn is_active(&self, l: usize) -> bool {
        l == 0 || self.stack.layer(l).iter().any(|v| *v != 0.0)
    }
}

/// Row-major table of `z_ij z_ik`, one row of `p(p+1)/2` products per observation.
pub(crate) fn product_table(z: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = (z.nrows(), z.ncols());
    let m = n_pairs(p);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for ((j, k), v) in pairs(p).zip(row.iter_mut()) {
            *v = z[(i, j)] * z[(i, k)];
        }
    }
    out
}

/// Default starting point: `B₀` = diagonal of the sample second-moment matrix, `Bₗ = 0`.
pub fn initial_stack(design: &CenteredDesign) -> CoefficientStack {
    let (n, p) = (design.n(), design.p());
    let mut s = CoefficientStack::zeros(p, design.q());
    for j in 0..p {
        let v = design.z().column(j).iter().map(|z| z * z).sum::<f64>() / n as f64;
        s.set(0, j, j, v);
    }
    s
}

/// Residual-based partial correlations for layer `l`, computed from scratch.
fn partial_correlation_naive(design: &CenteredDesign, stack: &CoefficientStack, l: usize) -> Vec<f64> {
    let (n, p) = (design.n(), design.p());
    let x = design.x();
    let mut g = vec![0.0; n_pairs(p)];
    for i in 0..n {
        for (idx, (j, k)) in pairs(p).enumerate() {
            let mut r = design.z()[(i, j)] * design.z()[(i, k)];
            for m in 0..stack.n_layers() {
                if m != l {
                    r -= x[(i, m)] * stack.layer(m)[idx];
                }
            }
            g[idx] += x[(i, l)] * r;
        }
    }
    g.iter_mut().for_each(|v| *v /= n as f64);
    g
}

/// One exact update of `B₀` given the other layers.
pub fn update_b0(design: &CenteredDesign, stack: &CoefficientStack, penalty: &PenaltyConfig) -> Result<Vec<f64>> {
    check_dims(design, stack)?;
    let g = partial_correlation_naive(design, stack, 0);
    let mut out = vec![0.0; g.len()];
    intercept_block(design.p(), &g, penalty.lambda, &mut out);
    Ok(out)
}

/// One exact sparse-group update of `Bₗ`, `1 ≤ l ≤ q`, given the other layers.
pub fn update_bl(
    design: &CenteredDesign,
    stack: &CoefficientStack,
    l: usize,
    penalty: &PenaltyConfig,
) -> Result<Vec<f64>> {
    check_dims(design, stack)?;
    if l == 0 || l > design.q() {
        return Err(CovRegError::InvalidParameter(format!(
            "covariate layer index must lie in 1..={}, got {l}",
            design.q()
        )));
    }
    let c = design.x().column(l).iter().map(|v| v * v).sum::<f64>() / design.n() as f64;
    if c == 0.0 {
        return Err(CovRegError::ZeroVarianceCovariate { column: l - 1 });
    }
    let g = partial_correlation_naive(design, stack, l);
    let mut out = vec![0.0; g.len()];
    group_block(&g, c, penalty, &mut out);
    Ok(out)
}

/// Minimizes the unconstrained objective by blockwise coordinate descent and
/// applies the positive-definiteness adjustment with the design's bounds.
pub fn fit(design: &CenteredDesign, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if design.n() < 2 {
        return Err(CovRegError::TooFewObservations { required: 2, got: design.n() });
    }
    let start = match &cfg.warm_start {
        Some(s) => {
            check_dims(design, s)?;
            s.clone()
        }
        None => initial_stack(design),
    };
    let mut solver = Solver::new(design, start, cfg.penalty)?;
    let q = design.q();

    let j0 = solver.objective();
    if !j0.is_finite() {
        return Err(CovRegError::NonFinite(format!("initial objective is {j0}")));
    }
    let xi = cfg.tol * (1.0 + j0.abs());
    let mut trace = vec![j0];
    let mut sweeps = 0usize;
    let mut converged = false;

    if q == 0 && design.x().iter().all(|v| *v == 1.0) {
        // separable: the exact minimizer is the thresholded sample second moment
        let s = crate::baselines::dense_sample(design.z());
        let g: Vec<f64> = pairs(design.p()).map(|(j, k)| s[(j, k)]).collect();
        intercept_block(design.p(), &g, cfg.penalty.lambda, &mut solver.next);
        solver.stack.layer_mut(0).copy_from_slice(&solver.next);
        solver.refresh_residuals();
        trace.push(solver.objective());
        sweeps = 1;
        converged = true;
    }

    let all: Vec<usize> = (0..=q).collect();
    'outer: while !converged && sweeps < cfg.max_iter {
        // full pass over every layer
        let before = *trace.last().unwrap();
        solver.sweep(&all);
        sweeps += 1;
        if sweeps.is_multiple_of(25) {
            solver.refresh_residuals();
        }
        let after = solver.objective();
        if !after.is_finite() {
            return Err(CovRegError::NonFinite(format!("objective became {after} at sweep {sweeps}")));
        }
        trace.push(after);
        if before - after < xi && solver.kkt() <= cfg.kkt_tol {
            converged = true;
            break;
        }

        // passes over active layers until they settle
        let active: Vec<usize> = (0..=q).filter(|&l| solver.is_active(l)).collect();
        if active.len() == q + 1 {
            continue;
        }
        loop {
            if sweeps >= cfg.max_iter {
                break 'outer;
            }
            let before = *trace.last().unwrap();
            solver.sweep(&active);
            sweeps += 1;
            if sweeps.is_multiple_of(25) {
                solver.refresh_residuals();
            }
            let after = solver.objective();
            if !after.is_finite() {
                return Err(CovRegError::NonFinite(format!("objective became {after} at sweep {sweeps}")));
            }
            trace.push(after);
            if before - after < xi {
                break;
            }
        }
    }

    let raw_stack = solver.stack;
    let (stack, delta) = pd_adjust(&raw_stack, design.bounds())?;
    Ok(FitResult {
        stack,
        raw_stack,
        delta,
        objective_trace: trace,
        iters: sweeps,
        converged,
    })
}

/// Shrinks the stack towards the identity just enough for the worst-case
/// matrix over the covariate box to be positive semi-definite:
/// `B̂₀ = (B̃₀ + δI)/(1+δ)`, `B̂ₗ = B̃ₗ/(1+δ)`, `δ = max(0, −λ_min(worst case))`.
pub fn pd_adjust(raw: &CoefficientStack, bounds: &CovariateBounds) -> Result<(CoefficientStack, f64)> {
    let margin = model::pd_margin(raw, bounds)?;
    let delta = (-margin).max(0.0);
    if delta == 0.0 {
        return Ok((raw.clone(), 0.0));
    }
    let shrink = 1.0 / (1.0 + delta);
    let mut out = raw.clone();
    let p = raw.p();
    for l in 0..raw.n_layers() {
        for v in out.layer_mut(l).iter_mut() {
            *v *= shrink;
        }
    }
    for j in 0..p {
        let v = out.get(0, j, j) + delta * shrink;
        out.set(0, j, j, v);
    }
    Ok((out, delta))
}

/// Largest violation of the optimality conditions of the unconstrained
/// objective at `stack` (max norm over all coordinates and groups).
pub fn kkt_residual(design: &CenteredDesign, stack: &CoefficientStack, penalty: &PenaltyConfig) -> Result<f64> {
    check_dims(design, stack)?;
    let (n, p) = (design.n(), design.p());
    let m = n_pairs(p);
    let x = design.x();
    let mut resid = product_table(design.z());
    for l in 0..stack.n_layers() {
        for i in 0..n {
            let xil = x[(i, l)];
            for (r, b) in resid[i * m..(i + 1) * m].iter_mut().zip(stack.layer(l)) {
                *r -= xil * b;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for l in 0..stack.n_layers() {
        // gradient of the loss with respect to layer l
        let mut grad = vec![0.0; m];
        for i in 0..n {
            let xil = x[(i, l)];
            for (g, r) in grad.iter_mut().zip(&resid[i * m..(i + 1) * m]) {
                *g -= xil * r;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n as f64);
        worst = worst.max(layer_kkt(p, l, &grad, stack.layer(l), penalty));
    }
    Ok(worst)
}

/// Subgradient violation of one layer given the loss gradient `grad`.
fn layer_kkt(p: usize, l: usize, grad: &[f64], layer: &[f64], penalty: &PenaltyConfig) -> f64 {
    let mut worst: f64 = 0.0;
    if l == 0 {
        for ((j, k), (g, b)) in pairs(p).zip(grad.iter().zip(layer)) {
            let v = if j == k {
                g.abs()
            } else if *b != 0.0 {
                (g + penalty.lambda * b.signum()).abs()
            } else {
                (g.abs() - penalty.lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        return worst;
    }
    let norm = layer.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        let s: f64 = grad
            .iter()
            .map(|g| soft_threshold(-g, penalty.lambda).powi(2))
            .sum::<f64>()
            .sqrt();
        return (s - penalty.lambda_g).max(0.0);
    }
    for (g, b) in grad.iter().zip(layer) {
        let v = if *b != 0.0 {
            (g + penalty.lambda * b.signum() + penalty.lambda_g * b / norm).abs()
        } else {
            (g.abs() - penalty.lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovariateBounds;
    use rand::{Rng, SeedableRng};

    fn random_design(n: usize, p: usize, q: usize, seed: u64) -> CenteredDesign {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.5..1.5));
        let x = DMatrix::from_fn(n, q, |_, _| rng.random_range(0.0..1.0));
        crate::design::center_data(&y, &x, crate::design::MeanMode::ColumnMean).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(2.0, 1.0), 1.0);
        assert!((soft_threshold(-1.2, 0.5) + 0.7).abs() < 1e-15);
    }

    #[test]
    fn intercept_update_without_covariates_is_second_moment() {
        let d = random_design(30, 3, 0, 1);
        let s = CoefficientStack::zeros(3, 0);
        let b0 = update_b0(&d, &s, &PenaltyConfig::new(0.0, 0.0).unwrap()).unwrap();
        let zz = d.z().transpose() * d.z() / 30.0;
        for (idx, (j, k)) in pairs(3).enumerate() {
            assert!((b0[idx] - zz[(j, k)]).abs() < 1e-12);
        }
        let big = update_b0(&d, &s, &PenaltyConfig::new(1e6, 0.0).unwrap()).unwrap();
        for (idx, (j, k)) in pairs(3).enumerate() {
            if j == k {
                assert!((big[idx] - zz[(j, j)]).abs() < 1e-12);
            } else {
                assert_eq!(big[idx], 0.0);
            }
        }
    }

    #[test]
    fn intercept_update_matches_scalar_loop() {
        let d = random_design(25, 3, 2, 2);
        let mut s = CoefficientStack::zeros(3, 2);
        s.set(1, 0, 1, 0.3);
        s.set(2, 2, 2, -0.2);
        let pen = PenaltyConfig::new(0.05, 0.1).unwrap();
        let b0 = update_b0(&d, &s, &pen).unwrap();
        for (idx, (j, k)) in pairs(3).enumerate() {
            // scalar least squares on the partial residual, then threshold
            let mut acc = 0.0;
            for i in 0..25 {
                let mut r = d.z()[(i, j)] * d.z()[(i, k)];
                for l in 1..3 {
                    r -= d.x()[(i, l)] * s.get(l, j, k);
                }
                acc += r;
            }
            let mean = acc / 25.0;
            let expect = if j == k { mean } else { soft_threshold(mean, 0.05) };
            assert!((b0[idx] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn group_update_zero_when_lambda_g_dominates() {
        let d = random_design(40, 3, 1, 3);
        let s = initial_stack(&d);
        let b1 = update_bl(&d, &s, 1, &PenaltyConfig::new(0.0, 1e3).unwrap()).unwrap();
        assert!(b1.iter().all(|v| *v == 0.0));
        assert!(update_bl(&d, &s, 0, &PenaltyConfig::new(0.0, 0.0).unwrap()).is_err());
        assert!(update_bl(&d, &s, 2, &PenaltyConfig::new(0.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn group_update_unpenalized_is_coordinate_least_squares() {
        let d = random_design(40, 3, 2, 4);
        let mut s = initial_stack(&d);
        s.set(2, 0, 2, 0.4);
        let b1 = update_bl(&d, &s, 1, &PenaltyConfig::new(0.0, 0.0).unwrap()).unwrap();
        let g = partial_correlation_naive(&d, &s, 1);
        let c = d.x().column(1).norm_squared() / 40.0;
        for (b, gv) in b1.iter().zip(&g) {
            assert!((b - gv / c).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_group_update_is_the_fixed_point() {
        for seed in 0..10 {
            let d = random_design(50, 3, 2, 10 + seed);
            let s = initial_stack(&d);
            let pen = PenaltyConfig::new(0.01, 0.02).unwrap();
            let closed = update_bl(&d, &s, 1, &pen).unwrap();
            if closed.iter().all(|v| *v == 0.0) {
                continue;
            }
            // iterate b ← (c + λ_g/‖b‖)⁻¹ S_λ(g) from a random start
            let g = partial_correlation_naive(&d, &s, 1);
            let c = d.x().column(1).norm_squared() / 50.0;
            let sv: Vec<f64> = g.iter().map(|v| soft_threshold(*v, pen.lambda)).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut b: Vec<f64> = sv.iter().map(|v| v * rng.random_range(0.5..2.0)).collect();
            for _ in 0..10_000 {
                let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                let f = 1.0 / (c + pen.lambda_g / norm);
                b = sv.iter().map(|v| f * v).collect();
            }
            for (a, e) in closed.iter().zip(&b) {
                assert!((a - e).abs() < 1e-10, "seed {seed}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn single_variance_fit_is_sample_variance() {
        let d = random_design(20, 1, 0, 5);
        let cfg = FitConfig::new(PenaltyConfig::new(3.0, 3.0).unwrap());
        let res = fit(&d, &cfg).unwrap();
        let var = d.z().column(0).norm_squared() / 20.0;
        assert!((res.stack.get(0, 0, 0) - var).abs() < 1e-12);
        assert_eq!(res.delta, 0.0);
    }

    #[test]
    fn all_zero_responses_give_zero_stack() {
        let z = DMatrix::zeros(10, 3);
        let x = DMatrix::from_fn(10, 2, |i, l| if l == 0 { 1.0 } else { (i as f64 - 4.5) / 4.5 });
        let d = CenteredDesign::from_parts(z, x, CovariateBounds::unit(1)).unwrap();
        let res = fit(&d, &FitConfig::new(PenaltyConfig::new(0.1, 0.1).unwrap())).unwrap();
        assert_eq!(res.delta, 0.0);
        assert!(res.stack.layers().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn trace_is_monotone_and_kkt_holds() {
        for seed in 0..10 {
            let d = random_design(60, 4, 3, 100 + seed);
            let cfg = FitConfig::new(PenaltyConfig::new(0.05, 0.05).unwrap()).with_tol(1e-13);
            let res = fit(&d, &cfg).unwrap();
            assert!(res.converged);
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            let kkt = kkt_residual(&d, &res.raw_stack, &cfg.penalty).unwrap();
            assert!(kkt < 1e-6, "seed {seed}: kkt {kkt}");
        }
    }

    #[test]
    fn pd_adjust_examples() {
        let mut raw = CoefficientStack::zeros(2, 1);
        raw.set(0, 0, 0, 1.0);
        raw.set(0, 1, 1, 1.0);
        let bounds = CovariateBounds::unit(1);
        let (s, delta) = pd_adjust(&raw, &bounds).unwrap();
        assert_eq!(delta, 0.0);
        assert_eq!(s, raw);

        // worst case B0 - |B1| = diag(1, 1) - diag(0, 1.2) has λ_min = -0.2
        raw.set(1, 1, 1, 1.2);
        let (s, delta) = pd_adjust(&raw, &bounds).unwrap();
        assert!((delta - 0.2).abs() < 1e-12);
        assert!((s.get(0, 0, 0) - (1.0 / 1.2 + 0.2 / 1.2)).abs() < 1e-12);
        assert!((s.get(1, 1, 1) - 1.0).abs() < 1e-12);
        assert_eq!(s.get(1, 0, 0), 0.0);
        assert!(model::pd_margin(&s, &bounds).unwrap() >= -1e-10);
    }

    #[test]
    fn rejects_bad_config() {
        let d = random_design(10, 2, 1, 9);
        let mut cfg = FitConfig::new(PenaltyConfig::new(0.1, 0.1).unwrap());
        cfg.tol = 0.0;
        assert!(fit(&d, &cfg).is_err());
        let cfg = FitConfig::new(PenaltyConfig::new(0.1, 0.1).unwrap()).with_max_iter(0);
        assert!(fit(&d, &cfg).is_err());
    }

    #[test]
    fn max_iter_reports_non_convergence() {
        let d = random_design(50, 4, 3, 11);
        let cfg = FitConfig::new(PenaltyConfig::new(0.01, 0.01).unwrap())
            .with_tol(1e-15)
            .with_max_iter(2);
        let res = fit(&d, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iters, 2);
    }
}
