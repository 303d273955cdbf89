//! Centering of responses and covariates.
//!
//! Responses are centered by a mean model (column means, or a per-response
//! linear regression on the raw covariates). Covariates are centered and then
//! divided by their maximum absolute value so that every internal covariate
//! lies in `[-1, 1]`. The fitted [`Centering`] is kept with the design so that
//! held-out rows can be transformed with training statistics, and so that
//! coefficients can be mapped back to the raw covariate scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{CovRegError, Result};
use crate::model::{CoefficientStack, CovariateBounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanMode {
    #[default]
    ColumnMean,
    LinearRegression,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeanModel {
    ColumnMean(Vec<f64>),
    /// `(q+1) × p` coefficients on `[1, Xraw]`.
    Linear(DMatrix<f64>),
}

/// Per-covariate affine map `x_int = (x_raw − center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateScaling {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl CovariateScaling {
    pub fn new(center: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if center.len() != scale.len() {
            return Err(CovRegError::DimensionMismatch(
                "center and scale lengths differ".into(),
            ));
        }
        if let Some(l) = scale.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CovRegError::InvalidParameter(format!(
                "scale of covariate {l} must be positive and finite"
            )));
        }
        Ok(Self { center, scale })
    }

    pub fn identity(q: usize) -> Self {
        Self {
            center: vec![0.0; q],
            scale: vec![1.0; q],
        }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Maps internal-scale coefficients to the raw covariate scale:
    /// `B̄ₗ = Bₗ / scaleₗ`, `B̄₀ = B₀ − Σₗ centerₗ B̄ₗ`.
    pub fn to_original(&self, stack: &CoefficientStack) -> CoefficientStack {
        let mut out = stack.clone();
        for l in 1..=stack.q() {
            let s = self.scale[l - 1];
            let c = self.center[l - 1];
            for v in out.layer_mut(l).iter_mut() {
                *v /= s;
            }
            if c != 0.0 {
                let scaled: Vec<f64> = out.layer(l).to_vec();
                for (b0, bl) in out.layer_mut(0).iter_mut().zip(&scaled) {
                    *b0 -= c * bl;
                }
            }
        }
        out
    }

    /// Inverse of [`Self::to_original`].
    pub fn to_internal(&self, stack: &CoefficientStack) -> CoefficientStack {
        let mut out = stack.clone();
        for l in 1..=stack.q() {
            let s = self.scale[l - 1];
            let c = self.center[l - 1];
            if c != 0.0 {
                let raw: Vec<f64> = stack.layer(l).to_vec();
                for (b0, bl) in out.layer_mut(0).iter_mut().zip(&raw) {
                    *b0 += c * bl;
                }
            }
            for v in out.layer_mut(l).iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// Rows of the linear map from internal to original coefficients: the
    /// original layer `l` equals `Σ_m a_l[m] · B_m` (internal).
    pub fn original_contrasts(&self) -> Vec<DVector<f64>> {
        let q = self.scale.len();
        let mut out = Vec::with_capacity(q + 1);
        let mut a0 = DVector::zeros(q + 1);
        a0[0] = 1.0;
        for l in 1..=q {
            a0[l] = -self.center[l - 1] / self.scale[l - 1];
        }
        out.push(a0);
        for l in 1..=q {
            let mut a = DVector::zeros(q + 1);
            a[l] = 1.0 / self.scale[l - 1];
            out.push(a);
        }
        out
    }
}

/// A fitted centering transform: mean model for responses plus covariate scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Centering {
    mean: MeanModel,
    scaling: CovariateScaling,
}

impl Centering {
    /// Estimates the transform from training data.
    pub fn fit(y: &DMatrix<f64>, xraw: &DMatrix<f64>, mode: MeanMode) -> Result<Self> {
        let n = y.nrows();
        if n < 2 {
            return Err(CovRegError::TooFewObservations { required: 2, got: n });
        }
        if xraw.nrows() != n {
            return Err(CovRegError::DimensionMismatch(format!(
                "responses have {n} rows, covariates have {}",
                xraw.nrows()
            )));
        }
        check_finite(y, "responses")?;
        check_finite(xraw, "covariates")?;

        let q = xraw.ncols();
        let mut center = Vec::with_capacity(q);
        let mut scale = Vec::with_capacity(q);
        for l in 0..q {
            let col = xraw.column(l);
            let mean = col.mean();
            let max_abs = col.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
            if max_abs <= 1e-12 * (1.0 + mean.abs()) {
                return Err(CovRegError::ZeroVarianceCovariate { column: l });
            }
            center.push(mean);
            scale.push(max_abs);
        }

        let mean = match mode {
            MeanMode::ColumnMean => MeanModel::ColumnMean(y.row_mean().iter().copied().collect()),
            MeanMode::LinearRegression => {
                let a = with_intercept(xraw);
                let svd = a.clone().svd(true, true);
                let coef = svd
                    .solve(y, 1e-12)
                    .map_err(|e| CovRegError::Singular(format!("mean regression: {e}")))?;
                MeanModel::Linear(coef)
            }
        };
        Ok(Self {
            mean,
            scaling: CovariateScaling { center, scale },
        })
    }

    pub fn scaling(&self) -> &CovariateScaling {
        &self.scaling
    }

    pub fn mean_model(&self) -> &MeanModel {
        &self.mean
    }

    /// Applies the transform to (possibly new) rows.
    pub fn apply(&self, y: &DMatrix<f64>, xraw: &DMatrix<f64>) -> Result<CenteredDesign> {
        let n = y.nrows();
        let q = self.scaling.scale.len();
        if xraw.nrows() != n || xraw.ncols() != q {
            return Err(CovRegError::DimensionMismatch(format!(
                "expected {n}x{q} covariates, got {}x{}",
                xraw.nrows(),
                xraw.ncols()
            )));
        }
        let p = y.ncols();
        let z = match &self.mean {
            MeanModel::ColumnMean(means) => {
                if means.len() != p {
                    return Err(CovRegError::DimensionMismatch(format!(
                        "mean model has {} responses, data has {p}",
                        means.len()
                    )));
                }
                DMatrix::from_fn(n, p, |i, j| y[(i, j)] - means[j])
            }
            MeanModel::Linear(coef) => {
                if coef.ncols() != p {
                    return Err(CovRegError::DimensionMismatch(format!(
                        "mean model has {} responses, data has {p}",
                        coef.ncols()
                    )));
                }
                y - with_intercept(xraw) * coef
            }
        };
        let x = DMatrix::from_fn(n, q + 1, |i, l| {
            if l == 0 {
                1.0
            } else {
                (xraw[(i, l - 1)] - self.scaling.center[l - 1]) / self.scaling.scale[l - 1]
            }
        });
        Ok(CenteredDesign {
            z,
            x,
            bounds: CovariateBounds::unit(q),
            centering: Some(self.clone()),
        })
    }
}

/// Residuals `Z` (n×p) and internal design `X` (n×(q+1), leading column of ones).
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredDesign {
    z: DMatrix<f64>,
    x: DMatrix<f64>,
    bounds: CovariateBounds,
    centering: Option<Centering>,
}

impl CenteredDesign {
    /// Wraps already-centered data. `x` must carry the intercept column.
    pub fn from_parts(z: DMatrix<f64>, x: DMatrix<f64>, bounds: CovariateBounds) -> Result<Self> {
        if z.nrows() != x.nrows() {
            return Err(CovRegError::DimensionMismatch(format!(
                "Z has {} rows, X has {}",
                z.nrows(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(CovRegError::DimensionMismatch(
                "X must contain the intercept column".into(),
            ));
        }
        if bounds.len() + 1 != x.ncols() {
            return Err(CovRegError::DimensionMismatch(format!(
                "bounds cover {} covariates, X has {}",
                bounds.len(),
                x.ncols() - 1
            )));
        }
        check_finite(&z, "Z")?;
        check_finite(&x, "X")?;
        Ok(Self {
            z,
            x,
            bounds,
            centering: None,
        })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn q(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn bounds(&self) -> &CovariateBounds {
        &self.bounds
    }

    /// Replaces the covariate box used by the positive-definiteness adjustment.
    pub fn with_bounds(mut self, bounds: CovariateBounds) -> Result<Self> {
        if bounds.len() != self.q() {
            return Err(CovRegError::DimensionMismatch(format!(
                "bounds cover {} covariates, design has {}",
                bounds.len(),
                self.q()
            )));
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn centering(&self) -> Option<&Centering> {
        self.centering.as_ref()
    }

    /// Covariate scaling, or the identity when the design was built from parts.
    pub fn scaling(&self) -> CovariateScaling {
        self.centering
            .as_ref()
            .map(|c| c.scaling.clone())
            .unwrap_or_else(|| CovariateScaling::identity(self.q()))
    }

    /// Subset of rows, keeping the bounds and centering metadata.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            z: self.z.select_rows(rows),
            x: self.x.select_rows(rows),
            bounds: self.bounds.clone(),
            centering: self.centering.clone(),
        }
    }

    /// Raw responses reconstructed by adding the fitted means back.
    pub fn raw_responses(&self) -> DMatrix<f64> {
        match self.centering.as_ref().map(|c| &c.mean) {
            None => self.z.clone(),
            Some(MeanModel::ColumnMean(means)) => {
                DMatrix::from_fn(self.n(), self.p(), |i, j| self.z[(i, j)] + means[j])
            }
            Some(MeanModel::Linear(coef)) => &self.z + with_intercept(&self.raw_covariates()) * coef,
        }
    }

    /// Raw-scale covariate matrix reconstructed from the internal design.
    pub fn raw_covariates(&self) -> DMatrix<f64> {
        let s = self.scaling();
        DMatrix::from_fn(self.n(), self.q(), |i, l| {
            self.x[(i, l + 1)] * s.scale[l] + s.center[l]
        })
    }
}

/// Centers responses and covariates.
pub fn center_data(y: &DMatrix<f64>, xraw: &DMatrix<f64>, mode: MeanMode) -> Result<CenteredDesign> {
    Centering::fit(y, xraw, mode)?.apply(y, xraw)
}

fn with_intercept(xraw: &DMatrix<f64>) -> DMatrix<f64> {
    let n = xraw.nrows();
    DMatrix::from_fn(n, xraw.ncols() + 1, |i, l| if l == 0 { 1.0 } else { xraw[(i, l - 1)] })
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (i, j) = (pos % m.nrows(), pos / m.nrows());
        return Err(CovRegError::NonFinite(format!("{what}[{i}, {j}]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_column_centers_and_scales_to_unit() {
        let y = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 0.0, 1.0]);
        let d = center_data(&y, &x, MeanMode::ColumnMean).unwrap();
        let col: Vec<f64> = d.x().column(1).iter().copied().collect();
        assert_eq!(col, vec![-1.0, 1.0, -1.0, 1.0]);
        assert!(d.x().column(0).iter().all(|v| *v == 1.0));
        let s = d.scaling();
        assert_eq!(s.center(), &[0.5]);
        assert_eq!(s.scale(), &[0.5]);
    }

    #[test]
    fn constant_response_gives_zero_residuals() {
        let y = DMatrix::from_row_slice(3, 2, &[5.0, 1.0, 5.0, 2.0, 5.0, 3.0]);
        let x = DMatrix::from_row_slice(3, 1, &[0.1, 0.5, 0.9]);
        let d = center_data(&y, &x, MeanMode::ColumnMean).unwrap();
        assert!(d.z().column(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_zero_variance_and_tiny_n() {
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        assert_eq!(
            center_data(&y, &x, MeanMode::ColumnMean).unwrap_err(),
            CovRegError::ZeroVarianceCovariate { column: 1 }
        );
        let y1 = DMatrix::from_row_slice(1, 1, &[1.0]);
        let x1 = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(
            center_data(&y1, &x1, MeanMode::ColumnMean),
            Err(CovRegError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn linear_mean_mode_removes_covariate_driven_means() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, p, q) = (60, 3, 2);
        let x = DMatrix::from_fn(n, q, |_, _| rng.random_range(0.0..1.0));
        let gamma = DMatrix::from_row_slice(q, p, &[2.0, -1.0, 0.5, 3.0, 0.0, -4.0]);
        let noise = DMatrix::from_fn(n, p, |_, _| rng.random_range(-0.1..0.1));
        let y = &x * &gamma + noise.add_scalar(7.0);
        let d = center_data(&y, &x, MeanMode::LinearRegression).unwrap();
        for j in 0..p {
            assert!(d.z().column(j).mean().abs() < 1e-10);
            // residual also orthogonal to the raw covariates
            for l in 0..q {
                assert!(d.z().column(j).dot(&x.column(l)).abs() < 1e-9);
            }
        }
        for l in 1..=q {
            assert!(d.x().column(l).mean().abs() < 1e-10);
            assert!(d.x().column(l).amax() <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn original_scale_round_trip() {
        let scaling = CovariateScaling::new(vec![0.5, -2.0], vec![0.25, 3.0]).unwrap();
        let mut s = CoefficientStack::zeros(2, 2);
        s.set(0, 0, 0, 1.0);
        s.set(0, 0, 1, 0.2);
        s.set(1, 0, 1, 0.4);
        s.set(2, 1, 1, -0.3);
        let orig = scaling.to_original(&s);
        assert!((orig.get(1, 0, 1) - 1.6).abs() < 1e-15);
        // Σ is identical on both scales
        let xraw = [0.9, 1.0];
        let xint = [(0.9 - 0.5) / 0.25, (1.0 + 2.0) / 3.0];
        let a = orig.evaluate_sigma(&xraw).unwrap();
        let b = s.evaluate_sigma(&xint).unwrap();
        assert!((a - b).abs().max() < 1e-14);
        assert!(scaling.to_internal(&orig).max_abs_diff(&s) < 1e-14);
    }

    #[test]
    fn contrasts_reproduce_back_transform() {
        let scaling = CovariateScaling::new(vec![0.5, -2.0], vec![0.25, 3.0]).unwrap();
        let mut s = CoefficientStack::zeros(2, 2);
        for (l, v) in [(0, 1.0), (1, 0.4), (2, -0.3)] {
            s.set(l, 0, 1, v);
        }
        let orig = scaling.to_original(&s);
        let contrasts = scaling.original_contrasts();
        for (l, a) in contrasts.iter().enumerate() {
            let v: f64 = (0..3).map(|m| a[m] * s.get(m, 0, 1)).sum();
            assert!((v - orig.get(l, 0, 1)).abs() < 1e-14);
        }
    }
}
