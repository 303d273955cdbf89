//! The covariance regression model `Σ(x) = B₀ + Σₗ xₗ Bₗ`.
//!
//! Each coefficient matrix is symmetric and stored packed: only the upper
//! triangle (diagonal included) is kept, in row-major `vech` order
//! `(0,0), (0,1), …, (0,p-1), (1,1), …, (p-1,p-1)`. Symmetry therefore holds
//! by construction.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::design::CenteredDesign;
use crate::error::{CovRegError, Result};

/// Number of `j ≤ k` pairs for dimension `p`.
#[inline]
pub fn n_pairs(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Packed index of `(j, k)`; order of the two indices does not matter.
#[inline]
pub fn pair_index(p: usize, j: usize, k: usize) -> usize {
    let (a, b) = if j <= k { (j, k) } else { (k, j) };
    a * p - a * a.saturating_sub(1) / 2 + (b - a)
}

/// All `(j, k)` pairs with `j ≤ k`, in packed order.
pub fn pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |j| (j..p).map(move |k| (j, k)))
}

/// Inverse of [`pair_index`] as a lookup table.
pub fn pair_table(p: usize) -> Vec<(usize, usize)> {
    pairs(p).collect()
}

/// The (q+1) symmetric p×p coefficient matrices `B₀, …, B_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientStack {
    p: usize,
    layers: Vec<Vec<f64>>,
}

impl CoefficientStack {
    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            p,
            layers: vec![vec![0.0; n_pairs(p)]; q + 1],
        }
    }

    /// Builds a stack from packed layers. Every layer must have `p(p+1)/2` entries.
    pub fn from_packed(p: usize, layers: Vec<Vec<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CovRegError::DimensionMismatch(
                "a stack needs at least the intercept layer".into(),
            ));
        }
        let m = n_pairs(p);
        if let Some(bad) = layers.iter().position(|l| l.len() != m) {
            return Err(CovRegError::DimensionMismatch(format!(
                "layer {bad} has {} entries, expected {m}",
                layers[bad].len()
            )));
        }
        Ok(Self { p, layers })
    }

    /// Builds a stack from dense matrices, symmetrizing each as `(A + Aᵀ)/2`.
    pub fn from_dense(mats: &[DMatrix<f64>]) -> Result<Self> {
        let p = mats
            .first()
            .ok_or_else(|| CovRegError::DimensionMismatch("empty matrix list".into()))?
            .nrows();
        let mut layers = Vec::with_capacity(mats.len());
        for (l, a) in mats.iter().enumerate() {
            if a.nrows() != p || a.ncols() != p {
                return Err(CovRegError::DimensionMismatch(format!(
                    "matrix {l} is {}x{}, expected {p}x{p}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            layers.push(pairs(p).map(|(j, k)| 0.5 * (a[(j, k)] + a[(k, j)])).collect());
        }
        Ok(Self { p, layers })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of covariates (layers minus the intercept).
    pub fn q(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.layers[l]
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn get(&self, l: usize, j: usize, k: usize) -> f64 {
        self.layers[l][pair_index(self.p, j, k)]
    }

    pub fn set(&mut self, l: usize, j: usize, k: usize, value: f64) {
        let idx = pair_index(self.p, j, k);
        self.layers[l][idx] = value;
    }

    pub fn dense(&self, l: usize) -> DMatrix<f64> {
        unpack(self.p, &self.layers[l])
    }

    /// Evaluates `Σ(x) = B₀ + Σₗ xₗ Bₗ`.
    pub fn evaluate_sigma(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if x.len() != self.q() {
            return Err(CovRegError::DimensionMismatch(format!(
                "covariate vector has length {}, model has q = {}",
                x.len(),
                self.q()
            )));
        }
        let mut packed = self.layers[0].clone();
        for (xl, layer) in x.iter().zip(&self.layers[1..]) {
            if *xl != 0.0 {
                for (acc, b) in packed.iter_mut().zip(layer) {
                    *acc += xl * b;
                }
            }
        }
        Ok(unpack(self.p, &packed))
    }

    /// Layers `l ≥ 1` that are not identically zero.
    pub fn effective_covariates(&self) -> Vec<usize> {
        (1..self.layers.len())
            .filter(|&l| self.layers[l].iter().any(|v| *v != 0.0))
            .collect()
    }

    pub fn nonzero_count(&self, l: usize) -> usize {
        self.layers[l].iter().filter(|v| **v != 0.0).count()
    }

    /// Entrywise maximum absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .zip(other.layers.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(|v| v.is_finite())
    }
}

/// Expands a packed upper triangle into a dense symmetric matrix.
pub fn unpack(p: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for ((j, k), v) in pairs(p).zip(packed) {
        m[(j, k)] = *v;
        m[(k, j)] = *v;
    }
    m
}

/// Box `[u, v]` containing the covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl CovariateBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(CovRegError::DimensionMismatch(format!(
                "bounds have {} lower and {} upper entries",
                lower.len(),
                upper.len()
            )));
        }
        for (l, (u, v)) in lower.iter().zip(&upper).enumerate() {
            if !u.is_finite() || !v.is_finite() || u > v {
                return Err(CovRegError::InvalidParameter(format!(
                    "covariate {l}: bounds [{u}, {v}] are not a finite interval"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-1, 1]` for every covariate.
    pub fn unit(q: usize) -> Self {
        Self {
            lower: vec![-1.0; q],
            upper: vec![1.0; q],
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

/// Penalty levels: `lambda` for the entrywise lasso, `lambda_g` for the group norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub lambda_g: f64,
}

impl PenaltyConfig {
    pub fn new(lambda: f64, lambda_g: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite() && lambda_g >= 0.0 && lambda_g.is_finite()) {
            return Err(CovRegError::InvalidParameter(format!(
                "penalties must be finite and nonnegative, got lambda = {lambda}, lambda_g = {lambda_g}"
            )));
        }
        Ok(Self { lambda, lambda_g })
    }
}

fn symmetric_eigen(b: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(CovRegError::Eigen("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(b.clone());
    let finite = eig
        .eigenvalues
        .iter()
        .chain(eig.eigenvectors.iter())
        .all(|v| v.is_finite());
    if finite {
        return Ok(eig);
    }
    // nalgebra occasionally returns NaNs on sparse reducible matrices
    jacobi_eigen(b)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
fn jacobi_eigen(b: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = b.nrows();
    let mut a = b.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            let eigenvalues = a.diagonal();
            return Ok(SymmetricEigen {
                eigenvectors: v,
                eigenvalues,
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(CovRegError::Eigen("Jacobi iteration did not converge".into()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(b: &DMatrix<f64>) -> Result<f64> {
    if b.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(symmetric_eigen(b)?.eigenvalues.min())
}

/// Splits a symmetric matrix into its PSD and NSD spectral parts, `B = B⁺ + B⁻`.
pub fn split_pos_neg(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if b.nrows() != b.ncols() {
        return Err(CovRegError::DimensionMismatch("matrix is not square".into()));
    }
    let eig = symmetric_eigen(b)?;
    let q = &eig.eigenvectors;
    let pos = eig.eigenvalues.map(|v| v.max(0.0));
    let neg = eig.eigenvalues.map(|v| v.min(0.0));
    let mut plus = q * DMatrix::from_diagonal(&pos) * q.transpose();
    let mut minus = q * DMatrix::from_diagonal(&neg) * q.transpose();
    symmetrize(&mut plus);
    symmetrize(&mut minus);
    Ok((plus, minus))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for k in (j + 1)..n {
            let v = 0.5 * (m[(j, k)] + m[(k, j)]);
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
}

/// `B₀ + Σₗ (vₗ Bₗ⁻ + uₗ Bₗ⁺)`, the worst-case matrix over the covariate box.
pub fn worst_case_matrix(stack: &CoefficientStack, bounds: &CovariateBounds) -> Result<DMatrix<f64>> {
    if bounds.len() != stack.q() {
        return Err(CovRegError::DimensionMismatch(format!(
            "bounds cover {} covariates, stack has q = {}",
            bounds.len(),
            stack.q()
        )));
    }
    let mut acc = stack.dense(0);
    for l in 1..=stack.q() {
        if stack.layer(l).iter().all(|v| *v == 0.0) {
            continue;
        }
        let (plus, minus) = split_pos_neg(&stack.dense(l))?;
        acc += minus * bounds.upper()[l - 1] + plus * bounds.lower()[l - 1];
    }
    Ok(acc)
}

/// Smallest eigenvalue of [`worst_case_matrix`]. A positive value certifies
/// that `Σ(x)` is positive definite for every `x` inside the box.
pub fn pd_margin(stack: &CoefficientStack, bounds: &CovariateBounds) -> Result<f64> {
    min_eigenvalue(&worst_case_matrix(stack, bounds)?)
}

/// Sparse-group-lasso penalty. The diagonal of `B₀` is never penalized and
/// `B₀` carries no group term; the diagonals of `Bₗ`, `l ≥ 1`, are penalized
/// by both terms.
pub fn penalty_value(stack: &CoefficientStack, cfg: &PenaltyConfig) -> f64 {
    let p = stack.p();
    let mut l1 = 0.0;
    for (idx, (j, k)) in pairs(p).enumerate() {
        if j != k {
            l1 += stack.layer(0)[idx].abs();
        }
    }
    let mut group = 0.0;
    for layer in &stack.layers()[1..] {
        l1 += layer.iter().map(|v| v.abs()).sum::<f64>();
        group += layer.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    cfg.lambda * l1 + cfg.lambda_g * group
}

/// Unpenalized least-squares loss `(1/2n) Σ_{j≤k} Σᵢ (z_ij z_ik − Σₗ x_il B_{l,jk})²`.
pub fn loss(design: &CenteredDesign, stack: &CoefficientStack) -> Result<f64> {
    check_dims(design, stack)?;
    let (z, x) = (design.z(), design.x());
    let n = design.n();
    let p = design.p();
    let mut fitted = vec![0.0; n_pairs(p)];
    let mut total = 0.0;
    for i in 0..n {
        fitted.iter_mut().for_each(|f| *f = 0.0);
        for l in 0..stack.n_layers() {
            let xil = x[(i, l)];
            if xil != 0.0 {
                for (f, b) in fitted.iter_mut().zip(stack.layer(l)) {
                    *f += xil * b;
                }
            }
        }
        for ((j, k), f) in pairs(p).zip(&fitted) {
            let r = z[(i, j)] * z[(i, k)] - f;
            total += r * r;
        }
    }
    Ok(total / (2.0 * n as f64))
}

/// Penalized objective: [`loss`] plus [`penalty_value`].
pub fn objective(design: &CenteredDesign, stack: &CoefficientStack, cfg: &PenaltyConfig) -> Result<f64> {
    Ok(loss(design, stack)? + penalty_value(stack, cfg))
}

pub(crate) fn check_dims(design: &CenteredDesign, stack: &CoefficientStack) -> Result<()> {
    if design.p() != stack.p() || design.q() != stack.q() {
        return Err(CovRegError::DimensionMismatch(format!(
            "design is p = {}, q = {} but stack is p = {}, q = {}",
            design.p(),
            design.q(),
            stack.p(),
            stack.q()
        )));
    }
    Ok(())
}
