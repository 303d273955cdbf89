//! Synthetic covariate-dependent covariance structures, replicate drivers and
//! the error metrics used to compare estimators.
//!
//! Only the first covariate is effective in every structure; the remaining
//! `q − 1` covariates are noise. Each replicate draws from its own ChaCha
//! stream of the master seed, so any subset of replicates can be rerun alone.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baselines::{dense_covreg, dense_sample, sparse_sample_cv};
use crate::design::{center_data, CenteredDesign, MeanMode};
use crate::error::{CovRegError, Result};
use crate::estimator::{fit, FitConfig};
use crate::inference::{infer, normal_quantile, Inference, InferenceConfig};
use crate::model::{n_pairs, pair_table, CoefficientStack};
use crate::tuning::{cv_select, CvGrid, GridPoint, SelectionRule};

pub const CLIQUE_BLOCK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    Ma1,
    Clique,
    Hub,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Ma1, Structure::Clique, Structure::Hub];

    pub fn name(self) -> &'static str {
        match self {
            Structure::Ma1 => "ma1",
            Structure::Clique => "clique",
            Structure::Hub => "hub",
        }
    }

    /// Whether `B₁` has a nonzero `(j, k)` entry, `j ≤ k`.
    fn linked(self, j: usize, k: usize) -> bool {
        let (j, k) = (j.min(k), j.max(k));
        match self {
            Structure::Ma1 => k - j == 1,
            Structure::Clique => j != k && j / CLIQUE_BLOCK == k / CLIQUE_BLOCK,
            Structure::Hub => j % 5 == 0 && k > j && k <= j + 4,
        }
    }

    fn slope(self) -> f64 {
        match self {
            Structure::Hub => 0.4,
            _ => 0.5,
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Structure {
    type Err = CovRegError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ma1" | "ma(1)" => Ok(Structure::Ma1),
            "clique" => Ok(Structure::Clique),
            "hub" => Ok(Structure::Hub),
            other => Err(CovRegError::InvalidParameter(format!(
                "unknown structure '{other}' (expected ma1, clique or hub)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    /// Uniform(0, 1) covariates.
    Continuous,
    /// Bernoulli(0.5) covariates.
    Binary,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::Continuous, Setting::Binary];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Continuous => "continuous",
            Setting::Binary => "binary",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = CovRegError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" | "1" | "uniform" => Ok(Setting::Continuous),
            "binary" | "2" | "bernoulli" => Ok(Setting::Binary),
            other => Err(CovRegError::InvalidParameter(format!(
                "unknown setting '{other}' (expected continuous or binary)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub structure: Structure,
    pub setting: Setting,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

impl Scenario {
    pub fn new(structure: Structure, setting: Setting, n: usize, p: usize, q: usize) -> Result<Self> {
        if p < 2 {
            return Err(CovRegError::InvalidParameter(format!("p must be at least 2, got {p}")));
        }
        if q < 1 {
            return Err(CovRegError::InvalidParameter("q must be at least 1".into()));
        }
        if structure == Structure::Clique && !p.is_multiple_of(CLIQUE_BLOCK) {
            return Err(CovRegError::InvalidParameter(format!(
                "clique structure needs p divisible by {CLIQUE_BLOCK}, got {p}"
            )));
        }
        if n < 2 {
            return Err(CovRegError::TooFewObservations { required: 2, got: n });
        }
        Ok(Self {
            structure,
            setting,
            n,
            p,
            q,
        })
    }
}

/// Random stream for replicate `r` of the master seed.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub fn gen_covariates<R: Rng + ?Sized>(n: usize, q: usize, setting: Setting, rng: &mut R) -> DMatrix<f64> {
    // row by row so that the draw order does not depend on storage order
    let mut x = DMatrix::zeros(n, q);
    for i in 0..n {
        for l in 0..q {
            x[(i, l)] = match setting {
                Setting::Continuous => rng.random::<f64>(),
                Setting::Binary => f64::from(u8::from(rng.random::<bool>())),
            };
        }
    }
    x
}

/// `Σ(x)` as a function of the effective covariate.
pub fn true_sigma(structure: Structure, x1: f64, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| {
        if j == k {
            0.5 + 0.5 * x1
        } else if structure.linked(j, k) {
            structure.slope() * x1
        } else {
            0.0
        }
    })
}

/// Raw-scale coefficients: `B₀ = 0.5 I`, `B₁` carries the pattern, the rest vanish.
pub fn true_stack(structure: Structure, p: usize, q: usize) -> CoefficientStack {
    let mut s = CoefficientStack::zeros(p, q);
    for (j, k) in pair_table(p) {
        if j == k {
            s.set(0, j, j, 0.5);
            if q >= 1 {
                s.set(1, j, j, 0.5);
            }
        } else if q >= 1 && structure.linked(j, k) {
            s.set(1, j, k, structure.slope());
        }
    }
    s
}

/// Draws `yᵢ ~ N(0, Σ(xᵢ₁))`. Returns the responses and the number of rows
/// whose covariance needed the `1e-10·I` jitter.
pub fn gen_responses<R: Rng + ?Sized>(
    xraw: &DMatrix<f64>,
    structure: Structure,
    p: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, usize)> {
    if xraw.ncols() == 0 {
        return Err(CovRegError::DimensionMismatch("covariate matrix has no columns".into()));
    }
    let n = xraw.nrows();
    let mut y = DMatrix::zeros(n, p);
    let mut jittered = 0;
    for i in 0..n {
        let sigma = true_sigma(structure, xraw[(i, 0)], p);
        let chol = match sigma.clone().cholesky() {
            Some(c) => c,
            None => {
                jittered += 1;
                (sigma + DMatrix::identity(p, p) * 1e-10)
                    .cholesky()
                    .ok_or_else(|| CovRegError::NotPsd(format!("Σ(x) of row {i} is not positive semi-definite")))?
            }
        };
        let e = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let draw = chol.l() * e;
        y.set_row(i, &draw.transpose());
    }
    Ok((y, jittered))
}

/// `(1/n) Σᵢ ‖Σ̂(xᵢ) − Σ*(xᵢ)‖_F`, both stacks on the raw covariate scale.
pub fn avg_frobenius(estimate: &CoefficientStack, truth: &CoefficientStack, xraw: &DMatrix<f64>) -> Result<f64> {
    if estimate.p() != truth.p() || estimate.q() != truth.q() || xraw.ncols() != truth.q() {
        return Err(CovRegError::DimensionMismatch("stacks and covariates differ in shape".into()));
    }
    let p = truth.p();
    let table = pair_table(p);
    let diff: Vec<Vec<f64>> = estimate
        .layers()
        .iter()
        .zip(truth.layers())
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v).collect())
        .collect();
    let n = xraw.nrows();
    let mut total = 0.0;
    let mut entry = vec![0.0; n_pairs(p)];
    for i in 0..n {
        entry.copy_from_slice(&diff[0]);
        for l in 1..diff.len() {
            let x = xraw[(i, l - 1)];
            if x != 0.0 {
                for (e, d) in entry.iter_mut().zip(&diff[l]) {
                    *e += x * d;
                }
            }
        }
        let sq: f64 = entry
            .iter()
            .zip(&table)
            .map(|(v, (j, k))| if j == k { v * v } else { 2.0 * v * v })
            .sum();
        total += sq.sqrt();
    }
    Ok(total / n.max(1) as f64)
}

/// `{Σ_{j≤k} Σ_{l=0..q} (B* − B̂)²}^{1/2}`.
pub fn rsse(estimate: &CoefficientStack, truth: &CoefficientStack) -> f64 {
    estimate
        .layers()
        .iter()
        .flatten()
        .zip(truth.layers().iter().flatten())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// True and false positive rates over `l ≥ 1`, `j ≤ k`.
pub fn selection_rates(estimate: &CoefficientStack, truth: &CoefficientStack) -> (f64, f64) {
    let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for l in 1..truth.n_layers() {
        for (e, t) in estimate.layer(l).iter().zip(truth.layer(l)) {
            if *t != 0.0 {
                pos += 1;
                tp += usize::from(*e != 0.0);
            } else {
                neg += 1;
                fp += usize::from(*e != 0.0);
            }
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (rate(tp, pos), rate(fp, neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Coverage {
    pub overall: f64,
    pub support: f64,
    pub complement: f64,
}

/// Fraction of off-diagonal truths inside `[lower, upper]`, over all layers.
pub fn coverage(lower: &CoefficientStack, upper: &CoefficientStack, truth: &CoefficientStack) -> Coverage {
    let table = pair_table(truth.p());
    let (mut hit_s, mut n_s, mut hit_c, mut n_c) = (0usize, 0usize, 0usize, 0usize);
    for l in 0..truth.n_layers() {
        for (c, &(j, k)) in table.iter().enumerate() {
            if j == k {
                continue;
            }
            let t = truth.layer(l)[c];
            let inside = lower.layer(l)[c] <= t && t <= upper.layer(l)[c];
            if t != 0.0 {
                n_s += 1;
                hit_s += usize::from(inside);
            } else {
                n_c += 1;
                hit_c += usize::from(inside);
            }
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Coverage {
        overall: rate(hit_s + hit_c, n_s + n_c),
        support: rate(hit_s, n_s),
        complement: rate(hit_c, n_c),
    }
}

/// Standard errors of the original-scale debiased coefficients computed from
/// the true per-observation variances `Σ_jj Σ_kk + Σ_jk²`.
pub fn true_standard_errors(
    design: &CenteredDesign,
    inference: &Inference,
    structure: Structure,
    xraw: &DMatrix<f64>,
) -> CoefficientStack {
    let (n, p) = (design.n(), design.p());
    let table = pair_table(p);
    // n × P table of true product variances
    let mut var = DMatrix::zeros(n, table.len());
    for i in 0..n {
        let s = true_sigma(structure, xraw[(i, 0)], p);
        for (c, &(j, k)) in table.iter().enumerate() {
            var[(i, c)] = s[(j, j)] * s[(k, k)] + s[(j, k)] * s[(j, k)];
        }
    }
    let m = inference.directions.matrix();
    let layers: Vec<Vec<f64>> = design
        .scaling()
        .original_contrasts()
        .iter()
        .map(|a| {
            let h = crate::inference::contrast_weights(design, m, a);
            let h2 = DVector::from_iterator(n, h.iter().map(|v| v * v));
            let sums = var.tr_mul(&h2);
            sums.iter().map(|s| s.sqrt() / n as f64).collect()
        })
        .collect();
    CoefficientStack::from_packed(p, layers).expect("one layer per contrast")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    SparseCovReg,
    DenseCovReg,
    SparseSample,
    DenseSample,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SparseCovReg,
        Method::DenseCovReg,
        Method::SparseSample,
        Method::DenseSample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SparseCovReg => "SparseCovReg",
            Method::DenseCovReg => "DenseCovReg",
            Method::SparseSample => "SparseSample",
            Method::DenseSample => "DenseSample",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CovRegError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "sparsecovreg" => Ok(Method::SparseCovReg),
            "densecovreg" => Ok(Method::DenseCovReg),
            "sparsesample" => Ok(Method::SparseSample),
            "densesample" => Ok(Method::DenseSample),
            _ => Err(CovRegError::InvalidParameter(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: Method,
    pub avg_frobenius: f64,
    pub rsse: f64,
    /// Only for estimators that select covariate effects.
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceMetrics {
    pub empirical: Coverage,
    pub true_variance: Coverage,
    pub relaxations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub replicate: usize,
    pub method: Method,
    pub subject: usize,
    pub truth: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateReport {
    pub replicate: usize,
    pub methods: Vec<MethodMetrics>,
    pub inference: Option<InferenceMetrics>,
    pub selected: Option<GridPoint>,
    pub delta: Option<f64>,
    pub jittered_rows: usize,
    pub scatter: Vec<ScatterPoint>,
}

impl ReplicateReport {
    pub fn metrics(&self, method: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == method)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub grid: CvGrid,
    pub seed: u64,
    /// Debias the SparseCovReg fit and score interval coverage.
    pub inference: bool,
    pub alpha: f64,
    pub scatter: bool,
}

impl ExperimentConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            methods: Method::ALL.to_vec(),
            grid: CvGrid::reduced(),
            seed,
            inference: false,
            alpha: 0.05,
            scatter: false,
        }
    }
}

/// Mean, standard deviation and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
                se: f64::NAN,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            sd,
            se: sd / (count as f64).sqrt(),
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub avg_frobenius: Summary,
    pub rsse: Summary,
    pub tpr: Option<Summary>,
    pub fpr: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub empirical: Coverage,
    pub true_variance: Coverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub replicates: Vec<ReplicateReport>,
    pub methods: Vec<MethodSummary>,
    pub coverage: Option<CoverageSummary>,
}

impl ExperimentReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn scatter(&self) -> impl Iterator<Item = &ScatterPoint> {
        self.replicates.iter().flat_map(|r| r.scatter.iter())
    }
}

/// Runs one replicate of the scenario.
pub fn run_replicate(scenario: &Scenario, cfg: &ExperimentConfig, replicate: usize) -> Result<ReplicateReport> {
    let Scenario { structure, setting, n, p, q } = *scenario;
    let mut rng = replicate_rng(cfg.seed, replicate as u64);
    let xraw = gen_covariates(n, q, setting, &mut rng);
    let (y, jittered_rows) = gen_responses(&xraw, structure, p, &mut rng)?;
    let cv_seed = rng.next_u64();
    let design = center_data(&y, &xraw, MeanMode::ColumnMean)?;
    let truth = true_stack(structure, p, q);
    let scaling = design.scaling();

    let mut methods = Vec::new();
    let mut scatter = Vec::new();
    let mut inference = None;
    let mut selected = None;
    let mut delta = None;
    for &method in &cfg.methods {
        let (estimate, rates) = match method {
            Method::SparseCovReg => {
                let cv = cv_select(&design, &cfg.grid, cv_seed, SelectionRule::Minimum)?;
                let best = cv.best_point();
                let fitted = fit(&design, &FitConfig::new(best.penalty()))?;
                selected = Some(best);
                delta = Some(fitted.delta);
                if cfg.inference {
                    let icfg = InferenceConfig {
                        alpha: cfg.alpha,
                        ..InferenceConfig::default()
                    };
                    let inf = infer(&design, &fitted.raw_stack, &icfg)?;
                    let se_true = true_standard_errors(&design, &inf, structure, &xraw);
                    let z = normal_quantile(1.0 - cfg.alpha / 2.0);
                    let bu = &inf.original.debiased;
                    let mut lo = bu.clone();
                    let mut hi = bu.clone();
                    for l in 0..bu.n_layers() {
                        for (c, v) in lo.layer_mut(l).iter_mut().enumerate() {
                            *v -= z * se_true.layer(l)[c];
                        }
                        for (c, v) in hi.layer_mut(l).iter_mut().enumerate() {
                            *v += z * se_true.layer(l)[c];
                        }
                    }
                    inference = Some(InferenceMetrics {
                        empirical: coverage(&inf.original.ci_lower, &inf.original.ci_upper, &truth),
                        true_variance: coverage(&lo, &hi, &truth),
                        relaxations: inf.directions.total_relaxations(),
                    });
                }
                let est = scaling.to_original(&fitted.stack);
                let rates = selection_rates(&est, &truth);
                (est, Some(rates))
            }
            Method::DenseCovReg => (scaling.to_original(&dense_covreg(&design)?), None),
            Method::SparseSample => {
                let cv = sparse_sample_cv(design.z(), cfg.grid.lambda_stars(), cfg.grid.folds(), cv_seed)?;
                (constant_stack(&cv.estimate, q)?, None)
            }
            Method::DenseSample => (constant_stack(&dense_sample(design.z()), q)?, None),
        };
        if cfg.scatter {
            for i in 0..n {
                let x1 = xraw[(i, 0)];
                let xi: Vec<f64> = xraw.row(i).iter().copied().collect();
                let est: f64 = (0..=q)
                    .map(|l| estimate.get(l, 0, 1) * if l == 0 { 1.0 } else { xi[l - 1] })
                    .sum();
                scatter.push(ScatterPoint {
                    replicate,
                    method,
                    subject: i,
                    truth: if structure.linked(0, 1) { structure.slope() * x1 } else { 0.0 },
                    estimate: est,
                });
            }
        }
        methods.push(MethodMetrics {
            method,
            avg_frobenius: avg_frobenius(&estimate, &truth, &xraw)?,
            rsse: rsse(&estimate, &truth),
            tpr: rates.map(|r| r.0),
            fpr: rates.map(|r| r.1),
        });
    }
    Ok(ReplicateReport {
        replicate,
        methods,
        inference,
        selected,
        delta,
        jittered_rows,
        scatter,
    })
}

fn constant_stack(sigma: &DMatrix<f64>, q: usize) -> Result<CoefficientStack> {
    let p = sigma.nrows();
    let mut mats = vec![sigma.clone()];
    mats.extend((0..q).map(|_| DMatrix::zeros(p, p)));
    CoefficientStack::from_dense(&mats)
}

/// Runs all replicates in parallel and aggregates them in replicate order.
pub fn run_experiment(scenario: &Scenario, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.replicates == 0 {
        return Err(CovRegError::InvalidParameter("at least one replicate is required".into()));
    }
    let reports: Vec<Result<ReplicateReport>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(scenario, cfg, r).map_err(|e| CovRegError::Replicate {
                replicate: r,
                source: Box::new(e),
            })
        })
        .collect();
    let replicates = reports.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(*scenario, cfg, replicates))
}

fn aggregate(scenario: Scenario, cfg: &ExperimentConfig, replicates: Vec<ReplicateReport>) -> ExperimentReport {
    let methods = cfg
        .methods
        .iter()
        .map(|&method| {
            let rows: Vec<&MethodMetrics> = replicates.iter().filter_map(|r| r.metrics(method)).collect();
            let pick = |f: &dyn Fn(&MethodMetrics) -> Option<f64>| -> Option<Summary> {
                let v: Vec<f64> = rows.iter().filter_map(|m| f(m)).collect();
                (!v.is_empty()).then(|| Summary::of(&v))
            };
            MethodSummary {
                method,
                avg_frobenius: Summary::of(&rows.iter().map(|m| m.avg_frobenius).collect::<Vec<_>>()),
                rsse: Summary::of(&rows.iter().map(|m| m.rsse).collect::<Vec<_>>()),
                tpr: pick(&|m| m.tpr),
                fpr: pick(&|m| m.fpr),
            }
        })
        .collect();
    let inf: Vec<&InferenceMetrics> = replicates.iter().filter_map(|r| r.inference.as_ref()).collect();
    let coverage = (!inf.is_empty()).then(|| {
        let mean = |f: &dyn Fn(&InferenceMetrics) -> f64| {
            let v: Vec<f64> = inf.iter().map(|m| f(m)).filter(|v| v.is_finite()).collect();
            Summary::of(&v).mean
        };
        CoverageSummary {
            empirical: Coverage {
                overall: mean(&|m| m.empirical.overall),
                support: mean(&|m| m.empirical.support),
                complement: mean(&|m| m.empirical.complement),
            },
            true_variance: Coverage {
                overall: mean(&|m| m.true_variance.overall),
                support: mean(&|m| m.true_variance.support),
                complement: mean(&|m| m.true_variance.complement),
            },
        }
    });
    ExperimentReport {
        scenario,
        replicates,
        methods,
        coverage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariate_settings() {
        let mut rng = replicate_rng(1, 0);
        let x = gen_covariates(200, 10, Setting::Binary, &mut rng);
        assert!(x.iter().all(|v| *v == 0.0 || *v == 1.0));
        assert!((x.mean() - 0.5).abs() < 3.0 / (2000f64).sqrt());
        let x = gen_covariates(200, 10, Setting::Continuous, &mut rng);
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        let a = gen_covariates(5, 3, Setting::Continuous, &mut replicate_rng(9, 2));
        let b = gen_covariates(5, 3, Setting::Continuous, &mut replicate_rng(9, 2));
        let c = gen_covariates(5, 3, Setting::Continuous, &mut replicate_rng(9, 3));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sigma_templates() {
        let s = true_sigma(Structure::Ma1, 1.0, 5);
        for j in 0..5 {
            for k in 0..5 {
                let want = match usize::abs_diff(j, k) {
                    0 => 1.0,
                    1 => 0.5,
                    _ => 0.0,
                };
                assert_eq!(s[(j, k)], want);
            }
        }
        assert_eq!(true_sigma(Structure::Clique, 0.0, 20), DMatrix::identity(20, 20) * 0.5);
        let c = true_sigma(Structure::Clique, 1.0, 20);
        assert_eq!(c[(0, 9)], 0.5);
        assert_eq!(c[(9, 10)], 0.0);
        let h = true_sigma(Structure::Hub, 1.0, 50);
        // 1-based rows 1, 6, 11, ... link to the next four columns
        for j in 0..50 {
            for k in j + 1..50 {
                let want = if j % 5 == 0 && k <= j + 4 { 0.4 } else { 0.0 };
                assert_eq!(h[(j, k)], want, "({j},{k})");
            }
        }
    }

    #[test]
    fn stack_matches_template() {
        let mut rng = replicate_rng(3, 0);
        for s in Structure::ALL {
            let st = true_stack(s, 20, 3);
            for _ in 0..10 {
                let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                assert_eq!(st.evaluate_sigma(&x).unwrap(), true_sigma(s, x[0], 20));
            }
        }
        let ma = true_stack(Structure::Ma1, 4, 2);
        assert_eq!(ma.get(1, 0, 0), 0.5);
        assert_eq!(ma.get(1, 1, 2), 0.5);
        assert_eq!(ma.get(1, 0, 2), 0.0);
        assert!(ma.layer(2).iter().all(|v| *v == 0.0));
        assert_eq!(true_stack(Structure::Hub, 10, 1).get(1, 5, 9), 0.4);
    }

    #[test]
    fn scaled_identity_draws() {
        // every structure reduces to 0.5·I at x₁ = 0
        let (n, p) = (4000, 10);
        let x = DMatrix::zeros(n, 2);
        let (y, jit) = gen_responses(&x, Structure::Clique, p, &mut replicate_rng(4, 0)).unwrap();
        assert_eq!(jit, 0);
        let s = crate::baselines::dense_sample(&y);
        let op = (s - DMatrix::identity(p, p) * 0.5).symmetric_eigen().eigenvalues.amax();
        assert!(op < 0.5 * 3.0 * (p as f64 / n as f64).sqrt(), "{op}");
    }

    #[test]
    fn generator_moments_match_templates() {
        let reps = 20000;
        for structure in Structure::ALL {
            let p = 10;
            let x = DMatrix::from_element(reps, 1, 1.0);
            let (y, _) = gen_responses(&x, structure, p, &mut replicate_rng(5, structure as u64)).unwrap();
            let s = crate::baselines::dense_sample(&y);
            let t = true_sigma(structure, 1.0, p);
            assert!((s - t).amax() < 4.0 / (reps as f64).sqrt() * 1.5, "{structure}");
        }
        // MA1 first off-diagonal at x₁ = 1 over 10⁵ draws
        let x = DMatrix::from_element(100_000, 1, 1.0);
        let (y, _) = gen_responses(&x, Structure::Ma1, 2, &mut replicate_rng(6, 0)).unwrap();
        let c = y.column(0).dot(&y.column(1)) / 100_000.0;
        assert!((c - 0.5).abs() < 0.01);
        let (a, _) = gen_responses(&x.rows(0, 10).into_owned(), Structure::Ma1, 3, &mut replicate_rng(6, 1)).unwrap();
        let (b, _) = gen_responses(&x.rows(0, 10).into_owned(), Structure::Ma1, 3, &mut replicate_rng(6, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metric_examples() {
        let truth = true_stack(Structure::Ma1, 6, 2);
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.3]);
        assert_eq!(rsse(&truth, &truth), 0.0);
        assert_eq!(selection_rates(&truth, &truth), (1.0, 0.0));
        assert_eq!(avg_frobenius(&truth, &truth, &x).unwrap(), 0.0);
        let zero = CoefficientStack::zeros(6, 2);
        let want = (6.0 + 2.0 * 5.0 * 0.25f64).sqrt();
        assert!((avg_frobenius(&zero, &truth, &x).unwrap() - want).abs() < 1e-12);

        // 3×3, q = 1: true nonzeros at (0,0) and (0,1); estimate hits (0,0) and (1,2)
        let mut t = CoefficientStack::zeros(3, 1);
        t.set(1, 0, 0, 1.0);
        t.set(1, 0, 1, 1.0);
        let mut e = CoefficientStack::zeros(3, 1);
        e.set(1, 0, 0, 0.7);
        e.set(1, 1, 2, 0.1);
        assert_eq!(selection_rates(&e, &t), (0.5, 0.25));
    }

    #[test]
    fn coverage_counts_off_diagonals() {
        let mut truth = CoefficientStack::zeros(3, 1);
        truth.set(1, 0, 1, 0.5);
        let lo = CoefficientStack::zeros(3, 1);
        let mut hi = CoefficientStack::zeros(3, 1);
        hi.set(1, 0, 1, 0.4);
        // 6 off-diagonal slots: one in the support (missed), five zeros (all covered)
        let c = coverage(&lo, &hi, &truth);
        assert_eq!(c.support, 0.0);
        assert_eq!(c.complement, 1.0);
        assert!((c.overall - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn names_parse() {
        assert_eq!("MA1".parse::<Structure>().unwrap(), Structure::Ma1);
        assert_eq!("binary".parse::<Setting>().unwrap(), Setting::Binary);
        assert_eq!("sparse-covreg".parse::<Method>().unwrap(), Method::SparseCovReg);
        assert!("star".parse::<Structure>().is_err());
        assert!(Scenario::new(Structure::Clique, Setting::Binary, 100, 15, 2).is_err());
        assert!(Scenario::new(Structure::Ma1, Setting::Binary, 100, 1, 2).is_err());
        assert!(Scenario::new(Structure::Ma1, Setting::Binary, 100, 5, 0).is_err());
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let sc = Scenario::new(Structure::Ma1, Setting::Binary, 120, 6, 3).unwrap();
        let mut cfg = ExperimentConfig::new(2, 17);
        cfg.grid = CvGrid::log_spaced(vec![0.5], 5, 0.01, 1.0, 3).unwrap();
        cfg.inference = true;
        cfg.scatter = true;
        let a = run_experiment(&sc, &cfg).unwrap();
        let b = run_experiment(&sc, &cfg).unwrap();
        assert_eq!(a, b);
        let dense = a.replicates[0]
            .scatter
            .iter()
            .filter(|s| s.method == Method::DenseSample)
            .map(|s| s.estimate)
            .collect::<Vec<_>>();
        assert!(dense.windows(2).all(|w| w[0] == w[1]));
        for r in &a.replicates {
            for m in &r.methods {
                assert!(m.rsse >= 0.0);
                if let (Some(t), Some(f)) = (m.tpr, m.fpr) {
                    assert!((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&f));
                }
            }
        }
        // rerunning replicate 1 alone gives the same report
        let single = run_replicate(&sc, &cfg, 1).unwrap();
        assert_eq!(single, a.replicates[1]);
    }
}
