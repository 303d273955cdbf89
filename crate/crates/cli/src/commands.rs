//! The five subcommands.

use std::fs;
use std::path::Path;

use covreg::estimator::kkt_residual;
use covreg::model::pair_table;
use covreg::simulate::{replicate_rng, run_experiment, ExperimentConfig, ExperimentReport, Method, Scenario};
use covreg::{
    center_data, cv_select, detect_edges, fit, infer, CenteredDesign, CvGrid, FitConfig,
    FitResult, InferenceConfig, PenaltyConfig, SelectionRule, Setting, Structure,
};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{CvArgs, DataArgs, FitArgs, GridArgs, InferArgs, RuleArg, SimulateArgs, StabilityArgs};
use crate::error::{CliError, Result};
use crate::io::{create_writer, layer_name, num, read_coefficients, read_table, write_coefficients, write_json};
use crate::manifest::Manifest;

/// Responses, covariates and their column names.
pub struct Data {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub responses: Vec<String>,
    pub covariates: Vec<String>,
}

pub fn load_data(args: &DataArgs) -> Result<Data> {
    let y = read_table(&args.y)?;
    let (x, covariates) = match &args.x {
        Some(path) => {
            let x = read_table(path)?;
            if x.nrows() != y.nrows() {
                return Err(CliError::Input(format!(
                    "row mismatch: {} has {} data rows, {} has {}",
                    args.y.display(),
                    y.nrows(),
                    path.display(),
                    x.nrows()
                )));
            }
            (x.values, x.names)
        }
        None => (DMatrix::zeros(y.nrows(), 0), Vec::new()),
    };
    Ok(Data {
        y: y.values,
        x,
        responses: y.names,
        covariates,
    })
}

impl Data {
    pub fn design(&self, mode: covreg::MeanMode) -> Result<CenteredDesign> {
        Ok(center_data(&self.y, &self.x, mode)?)
    }

    fn rows(&self, rows: &[usize]) -> Data {
        Data {
            y: self.y.select_rows(rows),
            x: self.x.select_rows(rows),
            responses: self.responses.clone(),
            covariates: self.covariates.clone(),
        }
    }
}

pub fn grid_from(args: &GridArgs) -> Result<CvGrid> {
    let alphas = args.alphas.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75]);
    let grid = match args.nlam {
        Some(nlam) => CvGrid::log_spaced(alphas, nlam, args.lambda_min, args.lambda_max, args.folds)?,
        None => CvGrid::new(alphas, CvGrid::full().lambda_stars().to_vec(), args.folds)?,
    };
    Ok(grid)
}

fn rule_from(r: RuleArg) -> SelectionRule {
    match r {
        RuleArg::Min => SelectionRule::Minimum,
        RuleArg::OneSe => SelectionRule::OneStandardError,
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

#[derive(Serialize)]
struct LayerCount {
    layer: usize,
    name: String,
    nonzero: usize,
    nonzero_offdiagonal: usize,
}

#[derive(Serialize)]
struct FitSummary {
    n: usize,
    p: usize,
    q: usize,
    lambda: f64,
    lambda_g: f64,
    converged: bool,
    sweeps: usize,
    delta: f64,
    kkt_residual: f64,
    objective_trace: Vec<f64>,
    effective_covariates: Vec<String>,
    layers: Vec<LayerCount>,
}

/// Writes the coefficient files, the fit summary and optionally `Σ̂ᵢ`.
fn write_fit(
    out: &Path,
    data: &Data,
    design: &CenteredDesign,
    penalty: PenaltyConfig,
    result: &FitResult,
    sigma: bool,
    manifest: &mut Manifest,
) -> Result<()> {
    let scaling = design.scaling();
    let adjusted = scaling.to_original(&result.stack);
    let raw = scaling.to_original(&result.raw_stack);
    write_coefficients(&out.join("coefficients.csv"), &adjusted, &data.covariates, &data.responses)?;
    manifest.output("coefficients.csv");
    write_coefficients(&out.join("coefficients_unadjusted.csv"), &raw, &data.covariates, &data.responses)?;
    manifest.output("coefficients_unadjusted.csv");

    let table = pair_table(design.p());
    let layers = (0..adjusted.n_layers())
        .map(|l| LayerCount {
            layer: l,
            name: layer_name(l, &data.covariates).to_string(),
            nonzero: adjusted.nonzero_count(l),
            nonzero_offdiagonal: table
                .iter()
                .zip(adjusted.layer(l))
                .filter(|((j, k), v)| j != k && **v != 0.0)
                .count(),
        })
        .collect();
    let summary = FitSummary {
        n: design.n(),
        p: design.p(),
        q: design.q(),
        lambda: penalty.lambda,
        lambda_g: penalty.lambda_g,
        converged: result.converged,
        sweeps: result.iters,
        delta: result.delta,
        kkt_residual: kkt_residual(design, &result.raw_stack, &penalty)?,
        objective_trace: result.objective_trace.clone(),
        effective_covariates: result
            .raw_stack
            .effective_covariates()
            .into_iter()
            .map(|l| data.covariates[l - 1].clone())
            .collect(),
        layers,
    };
    write_json(&out.join("fit_summary.json"), &summary)?;
    manifest.output("fit_summary.json");

    if sigma {
        let mut w = create_writer(&out.join("sigma.csv"))?;
        w.write_record(["subject", "j_name", "k_name", "value"])?;
        for i in 0..data.x.nrows() {
            let xi: Vec<f64> = data.x.row(i).iter().copied().collect();
            let s = adjusted.evaluate_sigma(&xi)?;
            for &(j, k) in &table {
                w.write_record([&i.to_string(), &data.responses[j], &data.responses[k], &num(s[(j, k)])])?;
            }
        }
        w.flush()?;
        manifest.output("sigma.csv");
    }
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let mut manifest = Manifest::new("fit", args, None);
    let data = load_data(&args.data)?;
    let design = data.design(args.data.mean.into())?;
    manifest.mark("read");
    let penalty = PenaltyConfig::new(args.lambda, args.lambda_g)?;
    let result = fit(&design, &FitConfig::new(penalty))?;
    manifest.mark("fit");
    prepare_out(&args.out)?;
    write_fit(&args.out, &data, &design, penalty, &result, args.sigma, &mut manifest)?;
    manifest.mark("write");
    manifest.write(&args.out)
}

#[derive(Serialize)]
struct Selected {
    alpha: f64,
    lambda_star: f64,
    lambda: f64,
    lambda_g: f64,
    mean_loss: f64,
    se_loss: f64,
    diagnostics: Vec<String>,
}

pub fn cmd_cv(args: &CvArgs) -> Result<()> {
    let mut manifest = Manifest::new("cv", args, Some(args.seed));
    let data = load_data(&args.data)?;
    let design = data.design(args.data.mean.into())?;
    let grid = grid_from(&args.grid)?;
    manifest.mark("read");
    let cv = cv_select(&design, &grid, args.seed, rule_from(args.grid.rule))?;
    manifest.mark("cross-validation");
    prepare_out(&args.out)?;

    let mut w = create_writer(&args.out.join("cv_surface.csv"))?;
    let mut header: Vec<String> = ["alpha", "lambda_star", "lambda", "lambda_g", "mean_loss", "se_loss"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=grid.folds()).map(|f| format!("fold_{f}")));
    w.write_record(&header)?;
    for (i, point) in cv.points.iter().enumerate() {
        let pen = point.penalty();
        let mut row = vec![
            num(point.alpha),
            num(point.lambda_star),
            num(pen.lambda),
            num(pen.lambda_g),
            num(cv.mean_loss[i]),
            num(cv.se_loss[i]),
        ];
        row.extend(cv.per_fold_loss[i].iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    manifest.output("cv_surface.csv");

    let best = cv.best_point();
    write_json(
        &args.out.join("selected.json"),
        &Selected {
            alpha: best.alpha,
            lambda_star: best.lambda_star,
            lambda: cv.best.lambda,
            lambda_g: cv.best.lambda_g,
            mean_loss: cv.mean_loss[cv.best_index],
            se_loss: cv.se_loss[cv.best_index],
            diagnostics: cv.diagnostics.clone(),
        },
    )?;
    manifest.output("selected.json");

    let result = fit(&design, &FitConfig::new(cv.best))?;
    manifest.mark("refit");
    write_fit(&args.out, &data, &design, cv.best, &result, args.sigma, &mut manifest)?;
    manifest.mark("write");
    manifest.write(&args.out)
}

#[derive(Serialize)]
struct DirectionReport {
    mu: f64,
    beta: f64,
    total_relaxations: usize,
    rows: Vec<DirectionRow>,
}

#[derive(Serialize)]
struct DirectionRow {
    row: usize,
    name: String,
    mu_used: f64,
    relaxations: usize,
    theta_violation: f64,
    x_sup: f64,
}

pub fn cmd_infer(args: &InferArgs) -> Result<()> {
    let mut manifest = Manifest::new("infer", args, None);
    let data = load_data(&args.data)?;
    let design = data.design(args.data.mean.into())?;
    let stack = read_coefficients(&args.coef, &data.covariates, &data.responses)?;
    let internal = design.scaling().to_internal(&stack);
    manifest.mark("read");
    let cfg = InferenceConfig {
        mu: args.mu,
        beta: args.beta,
        alpha: args.alpha,
        correction: args.correction.into(),
    };
    let result = infer(&design, &internal, &cfg)?;
    manifest.mark("inference");
    prepare_out(&args.out)?;

    let res = &result.original;
    let table = pair_table(design.p());
    let mut w = create_writer(&args.out.join("inference.csv"))?;
    w.write_record([
        "layer", "l_name", "j_name", "k_name", "estimate", "debiased", "se", "ci_lower", "ci_upper", "significant",
        "degenerate",
    ])?;
    for l in 0..res.debiased.n_layers() {
        let name = layer_name(l, &data.covariates);
        for (c, &(j, k)) in table.iter().enumerate() {
            w.write_record([
                l.to_string(),
                name.to_string(),
                data.responses[j].clone(),
                data.responses[k].clone(),
                num(res.estimate.layer(l)[c]),
                num(res.debiased.layer(l)[c]),
                num(res.se.layer(l)[c]),
                num(res.ci_lower.layer(l)[c]),
                num(res.ci_upper.layer(l)[c]),
                u8::from(res.significant[l][c]).to_string(),
                u8::from(res.degenerate[l][c]).to_string(),
            ])?;
        }
    }
    w.flush()?;
    manifest.output("inference.csv");

    let edges = detect_edges(res, args.alpha, args.correction.into())?;
    let mut w = create_writer(&args.out.join("edges.csv"))?;
    w.write_record(["layer", "l_name", "j_name", "k_name", "debiased", "se"])?;
    for e in &edges {
        w.write_record([
            e.layer.to_string(),
            layer_name(e.layer, &data.covariates).to_string(),
            data.responses[e.j].clone(),
            data.responses[e.k].clone(),
            num(e.debiased),
            num(e.se),
        ])?;
    }
    w.flush()?;
    manifest.output("edges.csv");

    let dirs = &result.directions;
    let report = DirectionReport {
        mu: dirs.mu(),
        beta: dirs.beta(),
        total_relaxations: dirs.total_relaxations(),
        rows: dirs
            .reports()
            .iter()
            .map(|r| DirectionRow {
                row: r.row,
                name: layer_name(r.row, &data.covariates).to_string(),
                mu_used: r.mu_used,
                relaxations: r.relaxations,
                theta_violation: r.theta_violation,
                x_sup: r.x_sup,
            })
            .collect(),
    };
    write_json(&args.out.join("directions.json"), &report)?;
    manifest.output("directions.json");
    manifest.mark("write");
    manifest.write(&args.out)
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_simulation_tables(out: &Path, report: &ExperimentReport, manifest: &mut Manifest) -> Result<()> {
    let mut w = create_writer(&out.join("table1.csv"))?;
    w.write_record(["method", "avg_frobenius_mean", "avg_frobenius_sd", "avg_frobenius_se", "replicates"])?;
    for m in &report.methods {
        let s = m.avg_frobenius;
        w.write_record([m.method.name().to_string(), num(s.mean), num(s.sd), num(s.se), s.count.to_string()])?;
    }
    w.flush()?;
    manifest.output("table1.csv");

    let mut w = create_writer(&out.join("table2.csv"))?;
    w.write_record(["method", "rsse_mean", "rsse_sd", "rsse_se", "tpr_mean", "tpr_sd", "fpr_mean", "fpr_sd"])?;
    for m in &report.methods {
        w.write_record([
            m.method.name().to_string(),
            num(m.rsse.mean),
            num(m.rsse.sd),
            num(m.rsse.se),
            opt(m.tpr.map(|s| s.mean)),
            opt(m.tpr.map(|s| s.sd)),
            opt(m.fpr.map(|s| s.mean)),
            opt(m.fpr.map(|s| s.sd)),
        ])?;
    }
    w.flush()?;
    manifest.output("table2.csv");

    let mut w = create_writer(&out.join("replicates.csv"))?;
    w.write_record(["replicate", "method", "avg_frobenius", "rsse", "tpr", "fpr", "alpha", "lambda_star", "delta"])?;
    for r in &report.replicates {
        for m in &r.methods {
            let sparse = m.method == Method::SparseCovReg;
            w.write_record([
                r.replicate.to_string(),
                m.method.name().to_string(),
                num(m.avg_frobenius),
                num(m.rsse),
                opt(m.tpr),
                opt(m.fpr),
                opt(r.selected.filter(|_| sparse).map(|g| g.alpha)),
                opt(r.selected.filter(|_| sparse).map(|g| g.lambda_star)),
                opt(r.delta.filter(|_| sparse)),
            ])?;
        }
    }
    w.flush()?;
    manifest.output("replicates.csv");

    if let Some(cov) = &report.coverage {
        let mut w = create_writer(&out.join("table3.csv"))?;
        w.write_record(["variance", "overall", "support", "complement"])?;
        for (name, c) in [("empirical", &cov.empirical), ("true", &cov.true_variance)] {
            w.write_record([name.to_string(), num(c.overall), num(c.support), num(c.complement)])?;
        }
        w.flush()?;
        manifest.output("table3.csv");

        let mut w = create_writer(&out.join("coverage_replicates.csv"))?;
        w.write_record(["replicate", "variance", "overall", "support", "complement", "relaxations"])?;
        for r in &report.replicates {
            if let Some(inf) = &r.inference {
                for (name, c) in [("empirical", &inf.empirical), ("true", &inf.true_variance)] {
                    w.write_record([
                        r.replicate.to_string(),
                        name.to_string(),
                        num(c.overall),
                        num(c.support),
                        num(c.complement),
                        inf.relaxations.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        manifest.output("coverage_replicates.csv");
    }

    let mut w = create_writer(&out.join("scatter.csv"))?;
    w.write_record(["replicate", "method", "subject", "truth", "estimate"])?;
    for s in report.scatter() {
        w.write_record([
            s.replicate.to_string(),
            s.method.name().to_string(),
            s.subject.to_string(),
            num(s.truth),
            num(s.estimate),
        ])?;
    }
    w.flush()?;
    manifest.output("scatter.csv");
    Ok(())
}

pub fn simulation_config(args: &SimulateArgs) -> Result<(Scenario, ExperimentConfig)> {
    let structure: Structure = args.structure.parse()?;
    let setting: Setting = args.setting.parse()?;
    let scenario = Scenario::new(structure, setting, args.n, args.p, args.q)?;
    let mut cfg = ExperimentConfig::new(args.reps, args.seed);
    if let Some(names) = &args.methods {
        cfg.methods = names.iter().map(|m| m.parse()).collect::<covreg::Result<Vec<Method>>>()?;
    }
    let grid_given = args.grid.alphas.is_some() || args.grid.nlam.is_some();
    cfg.grid = if args.reduced_grid && !grid_given {
        CvGrid::log_spaced(vec![0.5], 20, 0.01, 1.0, args.grid.folds)?
    } else {
        grid_from(&args.grid)?
    };
    cfg.inference = args.infer;
    cfg.alpha = args.alpha;
    cfg.scatter = true;
    Ok((scenario, cfg))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut manifest = Manifest::new("simulate", args, Some(args.seed));
    let (scenario, cfg) = simulation_config(args)?;
    let report = run_experiment(&scenario, &cfg)?;
    manifest.mark("simulate");
    prepare_out(&args.out)?;
    write_simulation_tables(&args.out, &report, &mut manifest)?;
    manifest.mark("write");
    manifest.write(&args.out)
}

/// Two disjoint halves of `0..n` whose sizes differ by at most one.
pub fn split_halves(n: usize, seed: u64, split: usize) -> (Vec<usize>, Vec<usize>, u64) {
    let mut rng = replicate_rng(seed, split as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut first = perm[..n / 2].to_vec();
    let mut second = perm[n / 2..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    (first, second, rng.next_u64())
}

struct HalfFit {
    penalty: PenaltyConfig,
    selected: Vec<usize>,
    n: usize,
}

fn fit_half(data: &Data, rows: &[usize], args: &StabilityArgs, grid: &CvGrid, cv_seed: u64) -> Result<HalfFit> {
    let half = data.rows(rows);
    let design = half.design(args.data.mean.into())?;
    let penalty = match (args.lambda, args.lambda_g) {
        (Some(l), Some(g)) => PenaltyConfig::new(l, g)?,
        _ => cv_select(&design, grid, cv_seed, rule_from(args.grid.rule))?.best,
    };
    let result = fit(&design, &FitConfig::new(penalty))?;
    Ok(HalfFit {
        penalty,
        selected: result.raw_stack.effective_covariates(),
        n: rows.len(),
    })
}

#[derive(Serialize)]
struct StabilitySummary {
    splits: usize,
    threshold: usize,
    mean_selected_first: f64,
    mean_selected_second: f64,
    co_selected: Vec<CoSelected>,
}

#[derive(Serialize)]
struct CoSelected {
    covariate: String,
    both: usize,
}

pub fn cmd_stability(args: &StabilityArgs) -> Result<()> {
    let mut manifest = Manifest::new("stability", args, Some(args.seed));
    if args.splits < 2 {
        return Err(CliError::Input(format!("need at least 2 splits, got {}", args.splits)));
    }
    let data = load_data(&args.data)?;
    let n = data.y.nrows();
    let q = data.covariates.len();
    let min_half = q + 3;
    if n / 2 < min_half {
        return Err(CliError::Input(format!(
            "n = {n} is too small to split: each half needs at least {min_half} rows"
        )));
    }
    let grid = grid_from(&args.grid)?;
    manifest.mark("read");
    let fits: Vec<Result<(HalfFit, HalfFit)>> = (0..args.splits)
        .into_par_iter()
        .map(|s| {
            let (first, second, cv_seed) = split_halves(n, args.seed, s);
            Ok((fit_half(&data, &first, args, &grid, cv_seed)?, fit_half(&data, &second, args, &grid, cv_seed)?))
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    manifest.mark("fits");
    prepare_out(&args.out)?;

    let names = |sel: &[usize]| sel.iter().map(|l| data.covariates[l - 1].clone()).collect::<Vec<_>>().join(";");
    let mut w = create_writer(&args.out.join("stability_splits.csv"))?;
    w.write_record(["split", "half", "rows", "lambda", "lambda_g", "n_selected", "selected"])?;
    let mut counts = vec![[0usize; 3]; q + 1];
    for (s, (a, b)) in fits.iter().enumerate() {
        for (h, f) in [("first", a), ("second", b)] {
            w.write_record([
                s.to_string(),
                h.to_string(),
                f.n.to_string(),
                num(f.penalty.lambda),
                num(f.penalty.lambda_g),
                f.selected.len().to_string(),
                names(&f.selected),
            ])?;
        }
        for &l in &a.selected {
            counts[l][0] += 1;
            if b.selected.contains(&l) {
                counts[l][2] += 1;
            }
        }
        for &l in &b.selected {
            counts[l][1] += 1;
        }
    }
    w.flush()?;
    manifest.output("stability_splits.csv");

    let mut w = create_writer(&args.out.join("stability_counts.csv"))?;
    w.write_record(["covariate", "selected_first", "selected_second", "selected_both"])?;
    for (name, c) in data.covariates.iter().zip(&counts[1..]) {
        w.write_record([name.clone(), c[0].to_string(), c[1].to_string(), c[2].to_string()])?;
    }
    w.flush()?;
    manifest.output("stability_counts.csv");

    let mut co_selected: Vec<CoSelected> = (1..=q)
        .filter(|&l| counts[l][2] > args.threshold)
        .map(|l| CoSelected {
            covariate: data.covariates[l - 1].clone(),
            both: counts[l][2],
        })
        .collect();
    co_selected.sort_by_key(|c| std::cmp::Reverse(c.both));
    let mean = |half: usize| {
        fits.iter()
            .map(|f| if half == 0 { f.0.selected.len() } else { f.1.selected.len() })
            .sum::<usize>() as f64
            / fits.len() as f64
    };
    write_json(
        &args.out.join("stability.json"),
        &StabilitySummary {
            splits: args.splits,
            threshold: args.threshold,
            mean_selected_first: mean(0),
            mean_selected_second: mean(1),
            co_selected,
        },
    )?;
    manifest.output("stability.json");
    manifest.mark("write");
    manifest.write(&args.out)
}
