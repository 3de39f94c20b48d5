//! Semigroup Hessian bounds: pointwise and Lᵖ growth of `t |Hess P_t f|`,
//! and domination of `Hess P_t f` by path moments of `f`.

use nalgebra::DMatrix;

use super::{params, BoundCheckConfig, BoundReport, Provenance, Sample, Verdict};
use crate::error::{invalid, Result};
use crate::geometry::fields::ScalarField;
use crate::geometry::{ManifoldModel, Point};
use crate::mc::SimConfig;
use crate::oracle::{heat_kernel, lp_norm, quadrature_grid, GridSpec};
use crate::rng::derive_seed;
use crate::semigroup::{estimate_hessian_moments, HessianEstimatorConfig};
use crate::transport::TransportRule;

/// Pair count above which the kernel-quadrature Lᵖ check is skipped.
const MAX_KERNEL_PAIRS: usize = 16_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SemigroupCheckOptions {
    pub points: Vec<Point>,
    pub times: Vec<f64>,
    pub sim: SimConfig,
    pub rule: TransportRule,
    /// Evaluate the Lᵖ-norm check on a quadrature grid.
    pub lp_check: bool,
}

#[derive(Clone, Debug)]
struct PointSample {
    x: usize,
    t: f64,
    hess_op: f64,
    hess_se: f64,
    f_sq: (f64, f64),
    hess_f_sq: (f64, f64),
    df_sq: (f64, f64),
    w_sq: (f64, f64),
}

fn sym_op_norm(a: &DMatrix<f64>) -> f64 {
    let s = 0.5 * (a + a.transpose());
    s.symmetric_eigenvalues().iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// `√m` with its delta-method standard error.
fn sqrt_moment((mean, se): (f64, f64)) -> (f64, f64) {
    let r = mean.max(0.0).sqrt();
    let e = if r > 0.0 { se / (2.0 * r) } else { se.sqrt() };
    (r, e)
}

/// Three reports:
/// * `semigroup-pointwise`: `t |Hess P_t f|(x) ≤ C (1+√t) e^{(2K+θ)t} (P_t f²)^{1/2}(x)`;
/// * `semigroup-lp`: `‖t Hess P_t f‖_p ≤ C (1+√t) e^{(2K+θ)t} ‖f‖_p` by kernel quadrature;
/// * `semigroup-domination`: `|Hess P_t f| ≤ e^{2Kt}(P_t|Hess f|²)^{1/2} + C e^{(2K+θ)t}(P_t|df|²)^{1/2}`
///   with `C e^{(2K+θ)t} = (Σ_{ij} E|W_t(e_i, e_j)|²)^{1/2}` measured on the same paths.
///
/// Monte Carlo sides use the mixed Hessian representation.
pub fn check_semigroup_bounds<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    cfg: &BoundCheckConfig,
    opts: &SemigroupCheckOptions,
) -> Result<[BoundReport; 3]> {
    cfg.validate()?;
    f.supports(m)?;
    if opts.points.is_empty() || opts.times.is_empty() {
        return invalid("semigroup checks need at least one point and one time");
    }
    if opts.sim.n_paths < 1000 {
        return invalid("statistical checks need at least 1000 paths");
    }
    let k = m.ricci_lower_bound();
    let z = cfg.z();
    let hcfg = HessianEstimatorConfig { rule: opts.rule, ..HessianEstimatorConfig::default() };
    let mut rows = Vec::new();
    for (xi, x) in opts.points.iter().enumerate() {
        for (ti, &t) in opts.times.iter().enumerate() {
            let sim = SimConfig { seed: derive_seed(opts.sim.seed, (xi * opts.times.len() + ti) as u64), ..opts.sim.clone() };
            let mom = estimate_hessian_moments(m, f, x, t, &hcfg, &sim)?;
            let hess = mom.hess.matrix();
            let se = mom.hess.stderr_matrix().norm();
            rows.push(PointSample {
                x: xi,
                t,
                hess_op: sym_op_norm(&hess),
                hess_se: se,
                f_sq: mom.f_sq,
                hess_f_sq: mom.hess_f_sq,
                df_sq: mom.df_sq,
                w_sq: mom.w_sq,
            });
        }
    }

    // (a) pointwise growth
    let growth = |t: f64| (1.0 + t.sqrt()) * ((2.0 * k + cfg.theta) * t).exp();
    let mut samples_a = Vec::new();
    let (mut c_lo, mut c_hi) = (0.0f64, 0.0f64);
    for r in &rows {
        let (fr, fr_se) = sqrt_moment(r.f_sq);
        let rhs = growth(r.t) * fr;
        let lhs = r.t * r.hess_op;
        let se = r.t * r.hess_se;
        let mut s = Sample::new(params(&[("point", r.x as f64), ("t", r.t)]), lhs, rhs, Provenance::MonteCarlo);
        s.stderr = Some(se);
        if rhs > 0.0 {
            c_lo = c_lo.max((lhs - z * se).max(0.0) / (growth(r.t) * (fr + z * fr_se)));
            c_hi = c_hi.max((lhs + z * se) / (growth(r.t) * (fr - z * fr_se).max(f64::MIN_POSITIVE)));
        } else if lhs <= z * se {
            s.ratio = 0.0;
        }
        samples_a.push(s);
    }
    let mut ra = BoundReport::new("semigroup-pointwise", samples_a);
    ra.confidence = Some(cfg.confidence);
    ra.set_constant("C_lower", c_lo);
    ra.set_constant("C_upper", c_hi);
    ra.set_constant("theta", cfg.theta);
    if !ra.all_finite() {
        ra.verdict = Verdict::Fail;
        ra.notes.push("non-finite ratio".into());
    } else if super::stable(c_lo, c_hi) {
        ra.verdict = Verdict::Pass;
        ra.passed = true;
    } else {
        ra.verdict = Verdict::Inconclusive;
        ra.notes.push(format!("constant only bracketed in [{c_lo:.4e}, {c_hi:.4e}] at this path count"));
    }

    // (b) Lᵖ version by kernel quadrature
    let rb = if opts.lp_check {
        lp_report(m, f, cfg, &opts.times)?
    } else {
        let mut r = BoundReport::new("semigroup-lp", Vec::new());
        r.notes.push("not requested".into());
        r
    };

    // (c) domination
    let mut samples_c = Vec::new();
    let mut c_fit = 0.0f64;
    for r in &rows {
        let (hf, hf_se) = sqrt_moment(r.hess_f_sq);
        let (df, df_se) = sqrt_moment(r.df_sq);
        let (wn, wn_se) = sqrt_moment(r.w_sq);
        let e2 = (2.0 * k * r.t).exp();
        let rhs = e2 * hf + wn * df;
        let rhs_se = ((e2 * hf_se).powi(2) + (wn * df_se).powi(2) + (df * wn_se).powi(2)).sqrt();
        let se = (r.hess_se.powi(2) + rhs_se.powi(2)).sqrt();
        c_fit = c_fit.max(wn * (-(2.0 * k + cfg.theta) * r.t).exp());
        let mut s = Sample::new(params(&[("point", r.x as f64), ("t", r.t)]), r.hess_op, rhs, Provenance::MonteCarlo);
        s.stderr = Some(se);
        if rhs == 0.0 && r.hess_op <= z * se {
            s.ratio = 0.0;
        }
        s.verdict = if r.hess_op <= rhs + z * se {
            Verdict::Pass
        } else if se > 0.5 * rhs {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        };
        samples_c.push(s);
    }
    let mut rc = BoundReport::new("semigroup-domination", samples_c);
    rc.confidence = Some(cfg.confidence);
    rc.set_constant("C", c_fit);
    rc.set_constant("K", k);
    let fails = rc.count(Verdict::Fail);
    rc.verdict = if fails > 0 {
        Verdict::Fail
    } else if rc.count(Verdict::Pass) > 0 {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    rc.passed = rc.verdict == Verdict::Pass;
    Ok([ra, rb, rc])
}

fn lp_grid_resolution(m: &ManifoldModel, base: usize) -> usize {
    match m {
        ManifoldModel::Torus { dim: 1 } | ManifoldModel::Sphere { dim: 1, .. } | ManifoldModel::Euclidean { dim: 1 } => {
            base.max(64)
        }
        ManifoldModel::Sphere { .. } => 16,
        _ => 32,
    }
}

fn lp_norms<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    p: f64,
    ts: &[f64],
    res: usize,
) -> Result<Option<(Vec<f64>, f64, f64)>> {
    let grid = quadrature_grid(m, &GridSpec::new(res))?;
    let n = grid.len();
    if n * n > MAX_KERNEL_PAIRS || matches!(m, ManifoldModel::Hyperbolic { dim: 2, .. }) {
        return Ok(None);
    }
    let fv = grid.values(|x| f.eval(m, x));
    let f_norm = lp_norm(&grid, &fv, p)?;
    let spacing = (grid.total_weight() / n as f64).powf(1.0 / m.dim() as f64);
    let points: Vec<Point> = grid.nodes.iter().map(|c| Point { coords: c.clone() }).collect();
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        let rows: Vec<Result<f64>> = crate::mc::par_map(n, &|i| {
            let d = m.dim();
            let mut h = DMatrix::zeros(d, d);
            for j in 0..n {
                if fv[j] == 0.0 {
                    continue;
                }
                let k = heat_kernel(m, &points[i], &points[j], t)?;
                h += k.hess_x * (grid.weights[j] * fv[j]);
            }
            Ok(h.norm())
        });
        let vals: Vec<f64> = rows.into_iter().collect::<Result<_>>()?;
        out.push(t * lp_norm(&grid, &vals, p)?);
    }
    Ok(Some((out, f_norm, spacing)))
}

fn lp_report<F: ScalarField + ?Sized>(m: &ManifoldModel, f: &F, cfg: &BoundCheckConfig, ts: &[f64]) -> Result<BoundReport> {
    let k = m.ricci_lower_bound();
    let res = lp_grid_resolution(m, cfg.grid_resolution);
    let build = |res: usize| -> Result<Option<BoundReport>> {
        let Some((norms, f_norm, spacing)) = lp_norms(m, f, cfg.p, ts, res)? else {
            return Ok(None);
        };
        let samples = ts
            .iter()
            .zip(&norms)
            .map(|(&t, &lhs)| {
                let rhs = (1.0 + t.sqrt()) * ((2.0 * k + cfg.theta) * t).exp() * f_norm;
                let mut s = Sample::new(params(&[("t", t), ("p", cfg.p)]), lhs, rhs, Provenance::Quadrature);
                // the kernel is not resolved by the grid at small times
                if t.sqrt() < 2.0 * spacing {
                    s.verdict = Verdict::Unreliable;
                }
                s
            })
            .collect();
        Ok(Some(BoundReport::new("semigroup-lp", samples)))
    };
    let Some(mut coarse) = build(res)? else {
        let mut r = BoundReport::new("semigroup-lp", Vec::new());
        r.notes.push(format!("kernel quadrature on {} is too costly; not evaluated", m.name()));
        return Ok(r);
    };
    let fine = build(res * 3 / 2)?.expect("finer grid of a supported model");
    coarse.finish_deterministic(&fine);
    if f.support_radius().is_none() && !m.is_compact() {
        coarse.notes.push("f is not compactly supported; norms are over the truncated grid".into());
    }
    if coarse.samples.iter().all(|s| s.verdict == Verdict::Unreliable) {
        coarse.verdict = Verdict::Inconclusive;
        coarse.passed = false;
        coarse.notes.push("no time on the grid is resolved by the quadrature".into());
    }
    Ok(coarse)
}
