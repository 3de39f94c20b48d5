//! Calderón–Zygmund scans: `‖Hess u‖_p` against `‖u‖_p` and `‖Δu‖_p`, and
//! the resolvent `Hess (Δ + σ)^{-1}` in Lᵖ, over families of band-limited
//! functions.

use serde::{Deserialize, Serialize};

use super::{params, stable, BoundReport, Provenance, Sample, Verdict};
use crate::error::{invalid, Error, Result};
use crate::geometry::fields::{hessian_in_frame, ScalarField};
use crate::geometry::ManifoldModel;
use crate::mc::SimConfig;
use crate::oracle::{lp_norm, quadrature_grid, GridSpec, QuadratureGrid, SphericalExpansion, TrigPolynomial};
use crate::rng::PathRng;
use crate::semigroup::{estimate_green_hess, HessianEstimatorConfig, HessianMode};

/// A band-limited function with an exact spectral representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "lowercase")]
pub enum CzFunction {
    Trig(TrigPolynomial),
    Spherical(SphericalExpansion),
}

impl CzFunction {
    fn field(&self) -> &dyn ScalarField {
        match self {
            CzFunction::Trig(u) => u,
            CzFunction::Spherical(u) => u,
        }
    }

    fn resolvent(&self, m: &ManifoldModel, sigma: f64) -> CzFunction {
        match self {
            CzFunction::Trig(u) => CzFunction::Trig(u.map_spectrum(|l| 1.0 / (l + sigma))),
            CzFunction::Spherical(u) => CzFunction::Spherical(u.map_spectrum(radius(m), |l| 1.0 / (l + sigma))),
        }
    }

    /// `‖Δu‖₂²` from the coefficients.
    fn laplacian_norm_sq(&self, m: &ManifoldModel) -> f64 {
        match self {
            CzFunction::Trig(u) => u.map_spectrum(|l| l).l2_norm_sq(),
            CzFunction::Spherical(u) => u.map_spectrum(radius(m), |l| l).l2_norm_sq(radius(m)),
        }
    }

    fn degree(&self) -> usize {
        match self {
            CzFunction::Trig(u) => u.degree(),
            CzFunction::Spherical(u) => u.max_degree(),
        }
    }
}

fn radius(m: &ManifoldModel) -> f64 {
    match *m {
        ManifoldModel::Sphere { radius, .. } => radius,
        _ => 1.0,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CzMode {
    #[default]
    ExactSpectral,
    Mc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CzOptions {
    pub p: f64,
    pub sigma: f64,
    pub mode: CzMode,
    /// Grid resolution; by default large enough for exact L² norms.
    pub grid_resolution: Option<usize>,
    /// Size of the leading subfamily used for the stability comparison;
    /// defaults to a quarter of the family.
    pub subfamily: Option<usize>,
    /// Sampling parameters of the Monte Carlo mode.
    pub sim: SimConfig,
}

impl CzOptions {
    pub fn spectral(p: f64, sigma: f64) -> Self {
        CzOptions { p, sigma, mode: CzMode::ExactSpectral, grid_resolution: None, subfamily: None, sim: SimConfig::new(2000, 0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzReport {
    /// `‖Hess (Δ+σ)^{-1} f‖_p / ‖f‖_p`.
    pub resolvent: BoundReport,
    /// `‖Hess u‖_p / (σ‖u‖_p + ‖Δu‖_p)`.
    pub inequality: BoundReport,
    /// For `p = 2`: `‖Hess u‖₂² ≤ ‖Δu‖₂² + K‖∇u‖₂²` with the Bochner residual.
    pub l2: Option<BoundReport>,
    /// Largest relative gap between the grid and coefficient values of
    /// `‖Δu‖₂²`.
    pub parseval_residual: f64,
}

/// `size` random band-limited functions of the given degree, reproducible
/// from `seed`.
pub fn random_family(m: &ManifoldModel, size: usize, degree: usize, seed: u64) -> Result<Vec<CzFunction>> {
    (0..size)
        .map(|i| {
            let mut rng = PathRng::new(seed, i as u64, false);
            match *m {
                ManifoldModel::Torus { dim } => Ok(CzFunction::Trig(TrigPolynomial::random(dim, degree, &mut rng))),
                ManifoldModel::Sphere { dim: 2, .. } => Ok(CzFunction::Spherical(SphericalExpansion::random(degree, &mut rng))),
                _ => Err(Error::Unsupported(format!("no band-limited family on {}", m.name()))),
            }
        })
        .collect()
}

struct Norms {
    u: f64,
    hess: f64,
    lap: f64,
    grad_l2_sq: f64,
    hess_l2_sq: f64,
    lap_l2_sq: f64,
    bochner: f64,
}

fn grid_for(m: &ManifoldModel, family: &[CzFunction], requested: Option<usize>) -> Result<QuadratureGrid> {
    let deg = family.iter().map(|f| f.degree()).max().unwrap_or(0);
    let res = match m {
        ManifoldModel::Torus { .. } => requested.unwrap_or(64).max(4 * deg + 4),
        _ => requested.unwrap_or(32).max(2 * deg + 2),
    };
    quadrature_grid(m, &GridSpec::new(res))
}

/// Pointwise fields on the grid from which the norms are assembled.
struct NodeFields {
    vals: Vec<f64>,
    hess: Vec<f64>,
    lap: Vec<f64>,
    grad_sq: Vec<f64>,
}

impl NodeFields {
    fn with_capacity(n: usize) -> Self {
        NodeFields {
            vals: Vec::with_capacity(n),
            hess: Vec::with_capacity(n),
            lap: Vec::with_capacity(n),
            grad_sq: Vec::with_capacity(n),
        }
    }

    /// Norms plus the residual of the integrated Bochner identity
    /// `‖Hess u‖² = ‖Δu‖² - ∫ Ric(∇u, ∇u)` on a model with `Ric = ric·g`.
    fn norms(&self, grid: &QuadratureGrid, p: f64, ric: f64) -> Result<Norms> {
        let integral = |v: &mut dyn Iterator<Item = f64>| v.zip(&grid.weights).map(|(a, w)| a * w).sum::<f64>();
        let hess_l2_sq = integral(&mut self.hess.iter().map(|h| h * h));
        let lap_l2_sq = integral(&mut self.lap.iter().map(|l| l * l));
        let grad_l2_sq = integral(&mut self.grad_sq.iter().copied());
        Ok(Norms {
            u: lp_norm(grid, &self.vals, p)?,
            hess: lp_norm(grid, &self.hess, p)?,
            lap: lp_norm(grid, &self.lap, p)?,
            grad_l2_sq,
            hess_l2_sq,
            lap_l2_sq,
            bochner: (hess_l2_sq - lap_l2_sq + ric * grad_l2_sq).abs() / lap_l2_sq.max(1.0),
        })
    }
}

fn field_norms(m: &ManifoldModel, f: &dyn ScalarField, grid: &QuadratureGrid, p: f64) -> Result<Norms> {
    let mut out = NodeFields::with_capacity(grid.len());
    for x in &grid.nodes {
        let frame = m.frame_at(x);
        let h = hessian_in_frame(f, m, x, &frame).ok_or_else(|| Error::Unsupported("field has no Hessian".into()))?;
        let g = crate::geometry::fields::gradient_in_frame(f, m, x, &frame)
            .ok_or_else(|| Error::Unsupported("field has no gradient".into()))?;
        out.vals.push(f.eval(m, x));
        out.hess.push(h.iter().map(|v| v * v).sum::<f64>().sqrt());
        out.lap.push(f.laplacian(m, x).unwrap_or(f64::NAN));
        out.grad_sq.push(g.iter().map(|v| v * v).sum());
    }
    let ric = match *m {
        ManifoldModel::Sphere { dim, radius } => (dim as f64 - 1.0) / (radius * radius),
        _ => 0.0,
    };
    out.norms(grid, p, ric)
}

/// Norms of a trigonometric polynomial together with `‖Hess (Δ+σ)^{-1} u‖_p`,
/// evaluating each mode's phase once per node.
fn trig_norms(u: &TrigPolynomial, sigma: f64, grid: &QuadratureGrid, p: f64) -> Result<(Norms, f64)> {
    let d = grid.model.dim();
    let mut out = NodeFields::with_capacity(grid.len());
    let mut res_hess = Vec::with_capacity(grid.len());
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut rhess = vec![0.0; d * d];
    for x in &grid.nodes {
        grad.iter_mut().for_each(|v| *v = 0.0);
        hess.iter_mut().for_each(|v| *v = 0.0);
        rhess.iter_mut().for_each(|v| *v = 0.0);
        let (mut val, mut lap) = (0.0, 0.0);
        for md in &u.modes {
            let arg: f64 = md.k.iter().zip(x).map(|(k, y)| *k as f64 * y).sum();
            let (s, c) = arg.sin_cos();
            let a = md.cos * c + md.sin * s;
            let b = md.sin * c - md.cos * s;
            let lambda = md.eigenvalue();
            let r = 1.0 / (lambda + sigma);
            val += a;
            lap += lambda * a;
            for i in 0..d {
                let ki = md.k[i] as f64;
                grad[i] += b * ki;
                for j in 0..d {
                    let kk = ki * md.k[j] as f64;
                    hess[i * d + j] -= a * kk;
                    rhess[i * d + j] -= r * a * kk;
                }
            }
        }
        out.vals.push(val);
        out.lap.push(lap);
        out.hess.push(hess.iter().map(|v| v * v).sum::<f64>().sqrt());
        out.grad_sq.push(grad.iter().map(|v| v * v).sum());
        res_hess.push(rhess.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok((out.norms(grid, p, 0.0)?, lp_norm(grid, &res_hess, p)?))
}

/// Monte Carlo `‖Hess (Δ+σ)^{-1} f‖_p` on a coarse torus grid through the
/// Green-operator estimator.
fn mc_resolvent_norm(m: &ManifoldModel, f: &CzFunction, grid: &QuadratureGrid, opts: &CzOptions) -> Result<(f64, f64)> {
    let field = f.field();
    let d = m.dim();
    let cfg = HessianEstimatorConfig::new(opts.sigma);
    let mut vals = Vec::with_capacity(grid.len());
    let mut worst_se = 0.0f64;
    for (idx, x) in grid.nodes.iter().enumerate() {
        let pt = m.point(x.clone())?;
        let mut hs = 0.0;
        for i in 0..d {
            for j in i..d {
                let v = m.tangent_from_frame(&pt, &unit(d, i));
                let w = m.tangent_from_frame(&pt, &unit(d, j));
                let sim = SimConfig { seed: crate::rng::derive_seed(opts.sim.seed, (idx * d * d + i * d + j) as u64), ..opts.sim.clone() };
                let g = estimate_green_hess(m, field, &pt, &v, &w, &cfg, HessianMode::Mixed, &sim)?;
                let mult = if i == j { 1.0 } else { 2.0 };
                hs += mult * g.value * g.value;
                worst_se = worst_se.max(g.stderr + g.quadrature_tol);
            }
        }
        vals.push(hs.sqrt());
    }
    Ok((lp_norm(grid, &vals, opts.p)?, worst_se))
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

fn finish_family(report: &mut BoundReport, sub: usize) {
    let n = report.samples.len();
    let sub = sub.clamp(1, n.max(1));
    let sub_max = super::max_ratio(&report.samples[..sub]);
    report.refined_constant = Some(report.fitted_constant);
    report.set_constant("subfamily_size", sub as f64);
    report.set_constant("subfamily_constant", sub_max);
    let finite = report.all_finite();
    let steady = stable(sub_max, report.fitted_constant);
    if !steady {
        report.notes.push(format!(
            "largest ratio moved from {sub_max:.6e} ({sub} functions) to {:.6e} ({n} functions)",
            report.fitted_constant
        ));
    }
    report.passed = finite && steady;
    report.verdict = if report.passed { Verdict::Pass } else { Verdict::Fail };
}

/// Runs the scan over `family`. In spectral mode the resolvent is applied
/// exactly per eigenvalue; in Monte Carlo mode (flat tori only) it is
/// estimated through the Green operator at grid nodes.
pub fn cz_scan(m: &ManifoldModel, family: &[CzFunction], opts: &CzOptions) -> Result<CzReport> {
    if !(opts.p > 1.0) || !opts.p.is_finite() {
        return invalid(format!("the CZ scan needs 1 < p < ∞, got {}", opts.p));
    }
    if !(opts.sigma > 0.0) {
        return invalid(format!("σ must be positive, got {}", opts.sigma));
    }
    if family.is_empty() {
        return invalid("the CZ scan needs a nonempty family");
    }
    for f in family {
        f.field().supports(m)?;
    }
    if opts.mode == CzMode::Mc && !matches!(m, ManifoldModel::Torus { .. }) {
        return Err(Error::Unsupported("the Monte Carlo CZ scan supports flat tori only".into()));
    }
    let grid = grid_for(m, family, opts.grid_resolution)?;
    let k = m.ricci_lower_bound();
    let sub = opts.subfamily.unwrap_or(family.len() / 4).max(1);

    let mut res_samples = Vec::with_capacity(family.len());
    let mut ineq_samples = Vec::with_capacity(family.len());
    let mut l2_samples = Vec::new();
    let mut parseval = 0.0f64;
    let mut bochner = 0.0f64;
    for (i, f) in family.iter().enumerate() {
        let (own, exact_res) = match f {
            CzFunction::Trig(u) => {
                let (n, r) = trig_norms(u, opts.sigma, &grid, opts.p)?;
                (n, Some(r))
            }
            CzFunction::Spherical(_) => (field_norms(m, f.field(), &grid, opts.p)?, None),
        };
        let rhs = opts.sigma * own.u + own.lap;
        ineq_samples.push(Sample::new(params(&[("index", i as f64), ("p", opts.p)]), own.hess, rhs, Provenance::Quadrature));

        let (lhs, se, prov) = match opts.mode {
            CzMode::ExactSpectral => {
                let hess = match exact_res {
                    Some(h) => h,
                    None => field_norms(m, f.resolvent(m, opts.sigma).field(), &grid, opts.p)?.hess,
                };
                (hess, None, Provenance::Quadrature)
            }
            CzMode::Mc => {
                let (v, se) = mc_resolvent_norm(m, f, &grid, opts)?;
                (v, Some(se), Provenance::MonteCarlo)
            }
        };
        let mut s = Sample::new(params(&[("index", i as f64), ("p", opts.p), ("sigma", opts.sigma)]), lhs, own.u, prov);
        s.stderr = se;
        res_samples.push(s);

        let coeff = f.laplacian_norm_sq(m);
        parseval = parseval.max((own.lap_l2_sq - coeff).abs() / coeff.max(f64::MIN_POSITIVE));
        if opts.p == 2.0 {
            bochner = bochner.max(own.bochner);
            let rhs = own.lap_l2_sq + k * own.grad_l2_sq;
            let mut s = Sample::new(params(&[("index", i as f64)]), own.hess_l2_sq, rhs, Provenance::Quadrature);
            s.verdict = if own.hess_l2_sq <= rhs * (1.0 + 1e-10) + 1e-12 { Verdict::Pass } else { Verdict::Fail };
            l2_samples.push(s);
        }
    }

    let mut resolvent = BoundReport::new("cz-resolvent", res_samples);
    resolvent.set_constant("sigma", opts.sigma);
    finish_family(&mut resolvent, sub);
    let mut inequality = BoundReport::new("cz-inequality", ineq_samples);
    finish_family(&mut inequality, sub);
    let l2 = (opts.p == 2.0).then(|| {
        let mut r = BoundReport::new("cz-l2", l2_samples);
        r.set_constant("K", k);
        r.set_constant("bochner_residual", bochner);
        let ok = r.count(Verdict::Fail) == 0 && bochner <= 1e-8;
        if bochner > 1e-8 {
            r.notes.push(format!("Bochner residual {bochner:.3e} exceeds 1e-8"));
        }
        r.passed = ok;
        r.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        r
    });
    Ok(CzReport { resolvent, inequality, l2, parseval_residual: parseval })
}
