//! Executes a validated configuration against the core library.

use std::collections::BTreeMap;

use mheat_core::geometry::ManifoldModel;
use mheat_core::mc::SimConfig;
use mheat_core::rng::derive_seed;
use mheat_core::semigroup::{
    estimate_grad, estimate_green_hess, estimate_hess, estimate_pt, HessianEstimatorConfig, TimeQuadrature,
};
use mheat_core::verify::{
    check_gaffney, check_kernel_bounds, check_semigroup_bounds, check_weighted_l2, cz_scan, kato_functional, params,
    random_family, z_score, Ball, BoundReport, CzOptions, KatoOptions, Param, Provenance, Sample,
    SemigroupCheckOptions, Verdict,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    CheckKind, CzscanSpec, EstimateSpec, Experiment, ExperimentConfig, Quantity, SimulateSpec, VerifySpec,
};
use crate::error::{CliError, Result};
use crate::fields::{build_field, build_potential, points_or_origin, BuiltField};

/// Everything a run produced, in deterministic order.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub reports: Vec<BoundReport>,
    /// Experiment-specific results that are not sample tables.
    pub extras: BTreeMap<String, Value>,
}

impl RunReport {
    /// 1 if any report failed, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.reports.iter().any(|r| r.verdict == Verdict::Fail) {
            1
        } else {
            0
        }
    }
}

/// A finished or aborted run; `error` is set when execution stopped early,
/// in which case `report` holds what was completed.
pub struct RunOutcome {
    pub report: RunReport,
    pub error: Option<CliError>,
}

pub fn run(config: &ExperimentConfig) -> RunOutcome {
    let mut report = RunReport { config: config.clone(), reports: Vec::new(), extras: BTreeMap::new() };
    let error = execute(config, &mut report).err();
    RunOutcome { report, error }
}

fn execute(cfg: &ExperimentConfig, out: &mut RunReport) -> Result<()> {
    let m = &cfg.manifold;
    match &cfg.experiment {
        Experiment::Simulate(s) => simulate(cfg, m, s, out),
        Experiment::Estimate(s) => estimate(cfg, m, s, out),
        Experiment::Verify(s) => verify(cfg, m, s, out),
        Experiment::Czscan(s) => czscan(cfg, m, s, out),
    }
}

fn sim(cfg: &ExperimentConfig, seed: u64) -> SimConfig {
    let s = SimConfig::new(cfg.n_paths, seed);
    match cfg.h {
        Some(h) => s.with_h(h),
        None => s,
    }
}

fn field(cfg: &ExperimentConfig) -> Result<BuiltField> {
    let spec = cfg.field.as_ref().ok_or_else(|| CliError::Usage("a [field] table is required".into()))?;
    Ok(build_field(&cfg.manifold, spec)?)
}

fn point_params(index: usize, coords: &[f64], extra: &[(&str, f64)]) -> Vec<Param> {
    let mut p = params(&[("point", index as f64)]);
    for (i, c) in coords.iter().enumerate() {
        p.push(Param { name: format!("x{i}"), value: *c });
    }
    p.extend(params(extra));
    p
}

/// Aggregate verdict of a statistical report: fail on any failure, pass
/// when every sample passed, inconclusive otherwise.
fn finish_statistical(report: &mut BoundReport, confidence: f64) {
    report.confidence = Some(confidence);
    let verdict = if report.count(Verdict::Fail) > 0 {
        Verdict::Fail
    } else if report.samples.iter().all(|s| s.verdict == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    report.verdict = verdict;
    report.passed = verdict == Verdict::Pass;
}

fn simulate(cfg: &ExperimentConfig, m: &ManifoldModel, s: &SimulateSpec, out: &mut RunReport) -> Result<()> {
    let f = field(cfg)?;
    let pts = points_or_origin(m, &s.points)?;
    let steps = if s.steps.is_empty() { vec![200] } else { s.steps.clone() };
    let z = z_score(s.confidence);
    let mut samples = Vec::new();
    let mut orders = Vec::new();
    for (i, x) in pts.iter().enumerate() {
        let reference = f.pt(m, x, s.t);
        let mut errors = Vec::new();
        for &n in &steps {
            let h = s.t / n as f64;
            let e = estimate_pt(m, f.field.as_ref(), x, s.t, &sim(cfg, derive_seed(cfg.seed, i as u64)).with_h(h))?;
            let (value, se) = (e.value[0], e.stderr[0]);
            let rhs = reference.unwrap_or(f64::NAN);
            let mut sample =
                Sample::new(point_params(i, &x.coords, &[("t", s.t), ("h", h)]), value, rhs, Provenance::MonteCarlo);
            sample.stderr = Some(se);
            // a mismatch at coarse steps is discretization bias, not a failure
            sample.verdict = match reference {
                Some(r) if (value - r).abs() <= z * se => Verdict::Pass,
                _ => Verdict::Inconclusive,
            };
            samples.push(sample);
            if let Some(r) = reference {
                errors.push((h, value - r, se));
            }
        }
        if errors.len() >= 2 {
            let slopes: Vec<f64> = errors
                .windows(2)
                .map(|w| (w[0].1.abs() / w[1].1.abs()).ln() / (w[0].0 / w[1].0).ln())
                .collect();
            let levels: Vec<Value> = errors.iter().map(|(h, e, se)| json!({"h": h, "error": e, "stderr": se})).collect();
            orders.push(json!({"point": i, "levels": levels, "order_estimates": slopes}));
        }
    }
    let mut report = BoundReport::new("simulate-pt", samples);
    finish_statistical(&mut report, s.confidence);
    out.reports.push(report);
    if !orders.is_empty() {
        out.extras.insert("weak_error".into(), Value::Array(orders));
    }
    Ok(())
}

fn estimate(cfg: &ExperimentConfig, m: &ManifoldModel, s: &EstimateSpec, out: &mut RunReport) -> Result<()> {
    let f = field(cfg)?;
    let pts = points_or_origin(m, &s.points)?;
    let d = m.dim();
    let v = s.v.clone().unwrap_or_else(|| (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect());
    let w = s.w.clone().unwrap_or_else(|| v.clone());
    let z = z_score(s.confidence);
    let mut hcfg = HessianEstimatorConfig::new(s.sigma.unwrap_or(1.0));
    hcfg.rule = s.rule;
    if let Some(split) = s.split {
        hcfg.profiles.split = split;
    }
    if let Some(n) = s.time_nodes {
        hcfg.time_quadrature = TimeQuadrature { nodes: n, ..TimeQuadrature::default() };
    }
    let t = s.t.unwrap_or(f64::NAN);
    let mut samples = Vec::new();
    let mut quadrature = Vec::new();
    for (i, x) in pts.iter().enumerate() {
        let sc = sim(cfg, derive_seed(cfg.seed, i as u64));
        let vt = m.tangent_from_frame(x, &v);
        let wt = m.tangent_from_frame(x, &w);
        let (value, se, tol, reference, extra) = match s.quantity {
            Quantity::Pt => {
                let e = estimate_pt(m, f.field.as_ref(), x, t, &sc)?;
                (e.value[0], e.stderr[0], 0.0, f.pt(m, x, t), vec![("t", t)])
            }
            Quantity::Grad => {
                let e = estimate_grad(m, f.field.as_ref(), x, &vt, t, &sc)?;
                (e.value[0], e.stderr[0], 0.0, f.grad(m, x, &v, t), vec![("t", t)])
            }
            Quantity::Hess => {
                let e = estimate_hess(m, f.field.as_ref(), x, &vt, &wt, t, &hcfg, s.mode, &sc)?;
                (e.value[0], e.stderr[0], 0.0, f.hess(m, x, &v, &w, t), vec![("t", t)])
            }
            Quantity::GreenHess => {
                let e = estimate_green_hess(m, f.field.as_ref(), x, &vt, &wt, &hcfg, s.mode, &sc)?;
                quadrature.push(json!({"point": i, "quadrature_tol": e.quadrature_tol, "t_max": e.t_max}));
                (e.value, e.stderr, e.quadrature_tol, f.green_hess(m, x, &v, &w, hcfg.sigma), vec![("sigma", hcfg.sigma)])
            }
        };
        let mut sample =
            Sample::new(point_params(i, &x.coords, &extra), value, reference.unwrap_or(f64::NAN), Provenance::MonteCarlo);
        sample.stderr = Some(se);
        sample.verdict = match reference {
            Some(r) if (value - r).abs() <= z * se + tol => Verdict::Pass,
            Some(_) => Verdict::Fail,
            None => Verdict::Inconclusive,
        };
        samples.push(sample);
    }
    let mut report = BoundReport::new(&format!("estimate-{}", s.quantity.as_str()), samples);
    finish_statistical(&mut report, s.confidence);
    if !f.has_reference() {
        report.notes.push("no closed form for this field; estimates are unchecked".into());
    }
    out.reports.push(report);
    if !quadrature.is_empty() {
        out.extras.insert("green_quadrature".into(), Value::Array(quadrature));
    }
    Ok(())
}

/// Appends `-p{p}` to report ids when several exponents run.
fn tag_exponent(mut reports: Vec<BoundReport>, p: f64, many: bool) -> Vec<BoundReport> {
    if many {
        for r in &mut reports {
            r.inequality_id = format!("{}-p{p}", r.inequality_id);
        }
    }
    reports
}

fn ball(b: &Option<crate::config::BallSpec>) -> Result<Ball> {
    let b = b.as_ref().ok_or_else(|| CliError::Usage("missing ball".into()))?;
    Ok(Ball { center: b.center.clone(), radius: b.radius })
}

fn verify(cfg: &ExperimentConfig, m: &ManifoldModel, s: &VerifySpec, out: &mut RunReport) -> Result<()> {
    let mut bounds = s.bound_config();
    let exps = s.exponents();
    let many = exps.len() > 1;
    match s.check {
        CheckKind::KernelBounds => {
            let (a, b) = check_kernel_bounds(m, &bounds)?;
            out.reports.extend([a, b]);
        }
        CheckKind::WeightedL2 => out.reports.extend(check_weighted_l2(m, &bounds)?),
        CheckKind::Gaffney => {
            let (e, f) = (ball(&s.e)?, ball(&s.f)?);
            for p in exps {
                let r = check_gaffney(m, &bounds, p, &e, &f)?;
                out.reports.extend(tag_exponent(vec![r], p, many));
            }
        }
        CheckKind::SemigroupBounds => {
            let f = field(cfg)?;
            let opts = SemigroupCheckOptions {
                points: points_or_origin(m, &s.points)?,
                times: s.times.clone(),
                sim: sim(cfg, cfg.seed),
                rule: s.rule,
                lp_check: s.lp_check,
            };
            for p in exps {
                bounds.p = p;
                let r = check_semigroup_bounds(m, f.field.as_ref(), &bounds, &opts)?;
                out.reports.extend(tag_exponent(r.into(), p, many));
            }
        }
        CheckKind::Kato => {
            let spec = cfg.potential.as_ref().ok_or_else(|| CliError::Usage("a [potential] table is required".into()))?;
            let v = build_potential(m, spec)?;
            let opts = KatoOptions {
                times: s.times.clone(),
                points: points_or_origin(m, &s.points)?,
                sim: sim(cfg, cfg.seed),
                confidence: s.confidence,
            };
            let k = kato_functional(m, v.as_ref(), &opts)?;
            out.extras.insert(
                "kato".into(),
                json!({
                    "c": k.c,
                    "theta": k.theta,
                    "nondecreasing": k.nondecreasing,
                    "vanishes_at_zero": k.vanishes_at_zero,
                    "rows": k.rows,
                }),
            );
            out.reports.extend([k.functional_report, k.moment_report]);
        }
    }
    Ok(())
}

fn czscan(cfg: &ExperimentConfig, m: &ManifoldModel, s: &CzscanSpec, out: &mut RunReport) -> Result<()> {
    let family = random_family(m, s.family_size, s.degree, s.family_seed.unwrap_or(cfg.seed))?;
    let many = s.p.len() > 1;
    let mut parseval = serde_json::Map::new();
    for &p in &s.p {
        let mut opts = CzOptions::spectral(p, s.sigma);
        opts.mode = s.mode;
        opts.grid_resolution = s.grid_resolution;
        opts.subfamily = s.subfamily;
        opts.sim = sim(cfg, cfg.seed);
        let r = cz_scan(m, &family, &opts)?;
        parseval.insert(format!("p{p}"), json!(r.parseval_residual));
        let mut reports = vec![r.resolvent, r.inequality];
        reports.extend(r.l2);
        out.reports.extend(tag_exponent(reports, p, many));
    }
    out.extras.insert("parseval_residual".into(), Value::Object(parseval));
    Ok(())
}
