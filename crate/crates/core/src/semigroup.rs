//! Monte Carlo estimators for `P_t f`, `dP_t f`, `Hess P_t f` and the Green
//! operator `Hess (Δ + σ)^{-1}`.
//!
//! Two Hessian representations are available. `Mixed` evaluates
//! `E[Hess f(Q_t v, Q_t w)(X_t) + df(W_t(v, w))(X_t)]` and needs the
//! derivatives of `f`. `Bismut` only evaluates `f`:
//!
//! `Hess P_t f(v, w) = -½ E[f(X_t) Σ ⟨W_k(k̇ v, w), ΔB_k⟩]
//!                    + ¼ E[f(X_t) Σ_{k ≥ s} ⟨Q_k(ℓ̇ w), ΔB_k⟩ · Σ_{k < s} ⟨Q_k(k̇ v), ΔB_k⟩]`
//!
//! where the factors `½` and `¼` account for increments of variance `2h`.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::fields::ScalarField;
use crate::geometry::{Frame, ManifoldModel, Point, TangentVector};
use crate::mc::{run_batch, SimConfig};
use crate::rng::PathRng;
use crate::transport::{draw_increment, NodeCurvature, TransportRule, TransportState, Walker};

/// Which representation produced an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    Value,
    Derivative,
    Bismut,
    Mixed,
    Moments,
}

/// Hessian representation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianMode {
    Bismut,
    #[default]
    Mixed,
}

impl From<HessianMode> for EstimatorMode {
    fn from(m: HessianMode) -> Self {
        match m {
            HessianMode::Bismut => EstimatorMode::Bismut,
            HessianMode::Mixed => EstimatorMode::Mixed,
        }
    }
}

/// A Monte Carlo estimate of a scalar or a row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub n_paths: usize,
    pub t: f64,
    pub seed: u64,
    pub mode: EstimatorMode,
}

impl McEstimate {
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }

    pub fn scalar_stderr(&self) -> f64 {
        self.stderr[0]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.value)
    }

    pub fn stderr_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.stderr)
    }
}

/// Deterministic weight profiles: `k` falls linearly from 1 to 0 on
/// `[0, split·t]`, `ℓ` falls linearly from 1 to 0 on `[split·t, t]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightProfiles {
    pub split: f64,
}

impl Default for WeightProfiles {
    fn default() -> Self {
        WeightProfiles { split: 0.5 }
    }
}

impl WeightProfiles {
    pub fn k(&self, s: f64, t: f64) -> f64 {
        (1.0 - s / (self.split * t)).max(0.0)
    }

    pub fn l(&self, s: f64, t: f64) -> f64 {
        ((t - s) / ((1.0 - self.split) * t)).min(1.0)
    }
}

/// Time quadrature for `∫_0^∞ e^{-σt} Hess P_t f dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeQuadrature {
    pub nodes: usize,
    pub t_min: f64,
    /// Explicit truncation; by default chosen so that
    /// `e^{(2K + θ - σ) T_max} < 1e-6`.
    pub t_max: Option<f64>,
}

impl Default for TimeQuadrature {
    fn default() -> Self {
        TimeQuadrature { nodes: 40, t_min: 1e-3, t_max: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianEstimatorConfig {
    #[serde(default)]
    pub profiles: WeightProfiles,
    pub sigma: f64,
    /// Exponential-moment rate θ (from the Kato fit) used for σ validity
    /// and the default truncation.
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub time_quadrature: TimeQuadrature,
    #[serde(default)]
    pub rule: TransportRule,
}

impl HessianEstimatorConfig {
    pub fn new(sigma: f64) -> Self {
        HessianEstimatorConfig {
            profiles: WeightProfiles::default(),
            sigma,
            theta: 0.0,
            time_quadrature: TimeQuadrature::default(),
            rule: TransportRule::Analytic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.profiles.split;
        if !(s > 0.0 && s < 1.0) {
            return invalid(format!("profile split must lie in (0, 1), got {s}"));
        }
        if !(self.sigma > 0.0) {
            return invalid(format!("σ must be positive, got {}", self.sigma));
        }
        let q = &self.time_quadrature;
        if q.nodes < 4 || !(q.t_min > 0.0) {
            return invalid("time quadrature needs at least 4 nodes and t_min > 0");
        }
        Ok(())
    }
}

impl Default for HessianEstimatorConfig {
    fn default() -> Self {
        Self::new(1.0)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return invalid(format!("t must be positive, got {t}"));
    }
    Ok(())
}

fn check_point(m: &ManifoldModel, x: &Point) -> Result<()> {
    if x.coords.len() != m.ambient_dim() || m.constraint_residual(&x.coords) > 1e-8 {
        return invalid("start point is not on the model");
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs one path over the given step sizes. `before(k, state, db)` sees
/// the transport state at node `k` and the increment of step `k`;
/// `after(k + 1, walker, state)` sees node `k + 1`.
#[allow(clippy::too_many_arguments)]
fn drive<'a>(
    m: &'a ManifoldModel,
    x0: &[f64],
    frame0: Option<&Frame>,
    steps: &[f64],
    rng: &mut PathRng,
    rule: TransportRule,
    mut state: Option<&mut TransportState>,
    mut before: impl FnMut(usize, Option<&TransportState>, &[f64]),
    mut after: impl FnMut(usize, &Walker<'a>, Option<&TransportState>) -> Result<()>,
) -> Result<Walker<'a>> {
    let mut walker = Walker::new(m, x0);
    if let Some(f) = frame0 {
        walker.frame = f.vectors.clone();
    }
    let mut db = vec![0.0; m.dim()];
    for (k, &h) in steps.iter().enumerate() {
        draw_increment(rng, h, &mut db);
        before(k, state.as_deref(), &db);
        if let Some(st) = state.as_deref_mut() {
            let node = NodeCurvature::at(m, rule, &walker.x, &walker.frame, h);
            st.advance(&node, &db, h);
        }
        walker.step(&db)?;
        after(k + 1, &walker, state.as_deref())?;
    }
    Ok(walker)
}

fn uniform_steps(t: f64, sim: &SimConfig) -> Result<Vec<f64>> {
    let (n, h) = sim.steps_for(t)?;
    Ok(vec![h; n])
}

fn no_after(_: usize, _: &Walker<'_>, _: Option<&TransportState>) -> Result<()> {
    Ok(())
}

/// `P_t f(x) = E^x[f(X_t)]`.
pub fn estimate_pt<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    x: &Point,
    t: f64,
    sim: &SimConfig,
) -> Result<McEstimate> {
    estimate_pt_with_frame(m, f, x, None, t, sim)
}

/// [`estimate_pt`] with an explicit initial frame (for common random
/// numbers across nearby starting points).
pub fn estimate_pt_with_frame<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    x: &Point,
    frame: Option<&Frame>,
    t: f64,
    sim: &SimConfig,
) -> Result<McEstimate> {
    check_time(t)?;
    check_point(m, x)?;
    f.supports(m)?;
    let steps = uniform_steps(t, sim)?;
    let stats = run_batch(sim, 1, |mut rng, _, out| {
        let w = drive(m, &x.coords, frame, &steps, &mut rng, TransportRule::Analytic, None, |_, _, _| {}, no_after)?;
        out[0] = finite(f.eval(m, &w.x), "f at path endpoint")?;
        Ok(())
    })?;
    Ok(McEstimate {
        value: stats.mean,
        stderr: stats.stderr,
        rows: 1,
        cols: 1,
        n_paths: stats.n_paths,
        t,
        seed: sim.seed,
        mode: EstimatorMode::Value,
    })
}

/// Several path functionals of `X_t` in one batch: row `i` of the result is
/// `E[g_i(X_t)]`.
pub fn estimate_endpoint_moments(
    m: &ManifoldModel,
    x: &Point,
    t: f64,
    sim: &SimConfig,
    width: usize,
    g: impl Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
) -> Result<McEstimate> {
    check_time(t)?;
    check_point(m, x)?;
    let steps = uniform_steps(t, sim)?;
    let stats = run_batch(sim, width, |mut rng, _, out| {
        let w = drive(m, &x.coords, None, &steps, &mut rng, TransportRule::Analytic, None, |_, _, _| {}, no_after)?;
        g(&w.x, out)
    })?;
    Ok(McEstimate {
        value: stats.mean,
        stderr: stats.stderr,
        rows: width,
        cols: 1,
        n_paths: stats.n_paths,
        t,
        seed: sim.seed,
        mode: EstimatorMode::Moments,
    })
}

/// `dP_t f(v) = E[⟨∇f(X_t), Q_t v⟩]`.
pub fn estimate_grad<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    x: &Point,
    v: &TangentVector,
    t: f64,
    sim: &SimConfig,
) -> Result<McEstimate> {
    check_time(t)?;
    check_point(m, x)?;
    f.supports(m)?;
    let d = m.dim();
    let frame0 = m.frame_at(&x.coords);
    let vc = frame0.coords(m, &v.comps);
    let steps = uniform_steps(t, sim)?;
    let stats = run_batch(sim, 1, |mut rng, _, out| {
        let mut st = TransportState::new(d, vec![]);
        let w = drive(m, &x.coords, None, &steps, &mut rng, TransportRule::Analytic, Some(&mut st), |_, _, _| {}, no_after)?;
        let qv = Frame { vectors: w.frame.clone() }.combine(&st.apply_q(&vc));
        let df = f
            .differential(m, &w.x)
            .ok_or_else(|| Error::Unsupported(format!("{} has no differential", f.name())))?;
        out[0] = finite(dot(&df, &qv), "df at path endpoint")?;
        Ok(())
    })?;
    Ok(McEstimate {
        value: stats.mean,
        stderr: stats.stderr,
        rows: 1,
        cols: 1,
        n_paths: stats.n_paths,
        t,
        seed: sim.seed,
        mode: EstimatorMode::Derivative,
    })
}

/// Per-path Hessian sample matrix `H_ij ≈ Hess P_t f(e_i, e_j)` in the
/// frame at the start point.
struct HessSampler<'a, F: ?Sized> {
    m: &'a ManifoldModel,
    f: &'a F,
    x: &'a Point,
    t: f64,
    steps: Vec<f64>,
    mode: HessianMode,
    cfg: &'a HessianEstimatorConfig,
}

impl<F: ScalarField + ?Sized> HessSampler<'_, F> {
    fn sample(&self, rng: &mut PathRng, out: &mut [f64]) -> Result<()> {
        let m = self.m;
        let d = m.dim();
        let basis: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                e
            })
            .collect();
        let mut pairs = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                pairs.push((basis[i].clone(), basis[j].clone()));
            }
        }
        let mut st = TransportState::new(d, pairs);
        match self.mode {
            HessianMode::Mixed => {
                let w = drive(m, &self.x.coords, None, &self.steps, rng, self.cfg.rule, Some(&mut st), |_, _, _| {}, no_after)?;
                mixed_sample(m, self.f, &w, &st, out)
            }
            HessianMode::Bismut => {
                let n = self.steps.len();
                let split = ((self.cfg.profiles.split * n as f64).round() as usize).clamp(1, n - 1);
                let t_split: f64 = self.steps[..split].iter().sum();
                let kdot = -1.0 / t_split;
                let ldot = -1.0 / (self.t - t_split);
                let mut s1 = vec![0.0; d * d];
                let mut s2 = vec![0.0; d];
                let mut s3 = vec![0.0; d];
                let before = |k: usize, st: Option<&TransportState>, db: &[f64]| {
                    let st = st.expect("transport state");
                    if k < split {
                        for (p, wp) in st.w.iter().enumerate() {
                            s1[p] += kdot * dot(wp, db);
                        }
                        for (i, e) in basis.iter().enumerate() {
                            s3[i] += kdot * dot(&st.apply_q(e), db);
                        }
                    } else {
                        for (j, e) in basis.iter().enumerate() {
                            s2[j] += ldot * dot(&st.apply_q(e), db);
                        }
                    }
                };
                let w = drive(m, &self.x.coords, None, &self.steps, rng, self.cfg.rule, Some(&mut st), before, no_after)?;
                let fx = finite(self.f.eval(m, &w.x), "f at path endpoint")?;
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = fx * (-0.5 * s1[i * d + j] + 0.25 * s2[j] * s3[i]);
                    }
                }
                Ok(())
            }
        }
    }
}

/// `Hess f(Q e_i, Q e_j) + df(W(e_i, e_j))` at the walker's position.
fn mixed_sample<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    w: &Walker<'_>,
    st: &TransportState,
    out: &mut [f64],
) -> Result<()> {
    let d = m.dim();
    let n = m.ambient_dim();
    let frame = Frame { vectors: w.frame.clone() };
    let b = f.hessian(m, &w.x).ok_or_else(|| Error::Unsupported(format!("{} has no Hessian", f.name())))?;
    let c = f.differential(m, &w.x).ok_or_else(|| Error::Unsupported(format!("{} has no differential", f.name())))?;
    // columns Q e_i in ambient coordinates
    let qcols: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let col: Vec<f64> = (0..d).map(|r| st.q[r * d + i]).collect();
            frame.combine(&col)
        })
        .collect();
    for i in 0..d {
        let bq: Vec<f64> = (0..n).map(|r| (0..n).map(|s| b[r * n + s] * qcols[i][s]).sum()).collect();
        for j in 0..d {
            let hess = dot(&bq, &qcols[j]);
            let wamb = frame.combine(&st.w[i * d + j]);
            out[i * d + j] = finite(hess + dot(&c, &wamb), "Hessian sample")?;
        }
    }
    Ok(())
}

/// `Hess P_t f(v, w)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_hess<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    x: &Point,
    v: &TangentVector,
    w: &TangentVector,
    t: f64,
    cfg: &HessianEstimatorConfig,
    mode: HessianMode,
    sim: &SimConfig,
) -> Result<McEstimate> {
    let frame0 = m.frame_at(&x.coords);
    let vc = frame0.coords(m, &v.comps);
    let wc = frame0.coords(m, &w.comps);
    let d = m.dim();
    let est = hessian_batch(m, f, x, t, cfg, mode, sim, 1, |h, out| {
        out[0] = (0..d).map(|i| (0..d).map(|j| vc[i] * h[i * d + j] * wc[j]).sum::<f64>()).sum();
    })?;
    if mode == HessianMode::Bismut && est.stderr[0] > est.value[0].abs() {
        warn!("bismut Hessian estimate at t = {t} is dominated by noise (stderr {:.3e})", est.stderr[0]);
    }
    Ok(est)
}

/// Full `Hess P_t f` matrix in the canonical frame at `x`.
pub fn estimate_hess_matrix<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    x: &Point,
    t: f64,
    cfg: &HessianEstimatorConfig,
    mode: HessianMode,
    sim: &SimConfig,
) -> Result<McEstimate> {
    let d = m.dim();
    let mut est = hessian_batch(m, f, x, t, cfg, mode, sim, d * d, |h, out| out.copy_from_slice(h))?;
    est.rows = d;
    est.cols = d;
    Ok(est)
}

#[allow(clippy::too_many_arguments)]
fn hessian_batch<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    x: &Point,
    t: f64,
    cfg: &HessianEstimatorConfig,
    mode: HessianMode,
    sim: &SimConfig,
    width: usize,
    project: impl Fn(&[f64], &mut [f64]) + Sync,
) -> Result<McEstimate> {
    check_time(t)?;
    check_point(m, x)?;
    cfg.validate()?;
    f.supports(m)?;
    let steps = uniform_steps(t, sim)?;
    if mode == HessianMode::Bismut && steps.len() < 2 {
        return invalid("bismut mode needs at least two time steps");
    }
    let d = m.dim();
    let sampler = HessSampler { m, f, x, t, steps, mode, cfg };
    let stats = run_batch(sim, width, |mut rng, _, out| {
        let mut h = vec![0.0; d * d];
        sampler.sample(&mut rng, &mut h)?;
        project(&h, out);
        Ok(())
    })?;
    Ok(McEstimate {
        value: stats.mean,
        stderr: stats.stderr,
        rows: width,
        cols: 1,
        n_paths: stats.n_paths,
        t,
        seed: sim.seed,
        mode: mode.into(),
    })
}

/// Moments along paths used by the domination and semigroup checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianMoments {
    /// Mixed-mode `Hess P_t f` in the canonical frame at `x`.
    pub hess: McEstimate,
    /// `P_t |Hess f|²` (operator norm).
    pub hess_f_sq: (f64, f64),
    /// `P_t |df|²`.
    pub df_sq: (f64, f64),
    /// `P_t f²`.
    pub f_sq: (f64, f64),
    /// `E Σ_{ij} |W_t(e_i, e_j)|²`, which dominates `sup_{|v|=|w|=1} E|W_t(v, w)|²`.
    pub w_sq: (f64, f64),
}

pub fn estimate_hessian_moments<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    x: &Point,
    t: f64,
    cfg: &HessianEstimatorConfig,
    sim: &SimConfig,
) -> Result<HessianMoments> {
    check_time(t)?;
    check_point(m, x)?;
    f.supports(m)?;
    let d = m.dim();
    let steps = uniform_steps(t, sim)?;
    let width = d * d + 4;
    let stats = run_batch(sim, width, |mut rng, _, out| {
        let basis: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let pairs = (0..d * d).map(|p| (basis[p / d].clone(), basis[p % d].clone())).collect();
        let mut st = TransportState::new(d, pairs);
        let w = drive(m, &x.coords, None, &steps, &mut rng, cfg.rule, Some(&mut st), |_, _, _| {}, no_after)?;
        mixed_sample(m, f, &w, &st, &mut out[..d * d])?;
        let frame = Frame { vectors: w.frame.clone() };
        let hf = crate::geometry::fields::hessian_in_frame(f, m, &w.x, &frame)
            .ok_or_else(|| Error::Unsupported("field has no Hessian".into()))?;
        let op = hf.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let g = crate::geometry::fields::gradient_in_frame(f, m, &w.x, &frame)
            .ok_or_else(|| Error::Unsupported("field has no differential".into()))?;
        out[d * d] = op * op;
        out[d * d + 1] = dot(&g, &g);
        out[d * d + 2] = f.eval(m, &w.x).powi(2);
        out[d * d + 3] = st.w.iter().map(|v| dot(v, v)).sum();
        Ok(())
    })?;
    let pick = |i: usize| (stats.mean[i], stats.stderr[i]);
    Ok(HessianMoments {
        hess: McEstimate {
            value: stats.mean[..d * d].to_vec(),
            stderr: stats.stderr[..d * d].to_vec(),
            rows: d,
            cols: d,
            n_paths: stats.n_paths,
            t,
            seed: sim.seed,
            mode: EstimatorMode::Mixed,
        },
        hess_f_sq: pick(d * d),
        df_sq: pick(d * d + 1),
        f_sq: pick(d * d + 2),
        w_sq: pick(d * d + 3),
    })
}

/// Estimate of `Hess (Δ + σ)^{-1} f (v, w)` with its time-quadrature error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Truncation tail bound plus the fine/coarse quadrature discrepancy.
    pub quadrature_tol: f64,
    pub t_max: f64,
    pub nodes: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub mode: EstimatorMode,
}

/// `∫_a^b (linear interpolant of g) e^{-σt} dt`, exactly.
fn product_weights(nodes: &[f64], sigma: f64) -> Vec<f64> {
    let mut w = vec![0.0; nodes.len()];
    for k in 0..nodes.len() - 1 {
        let (a, b) = (nodes[k], nodes[k + 1]);
        let len = b - a;
        let (ea, eb) = ((-sigma * a).exp(), (-sigma * b).exp());
        // ∫_a^b e^{-σt} dt and ∫_a^b (t - a) e^{-σt} dt
        let i0 = (ea - eb) / sigma;
        let i1 = (ea - eb) / (sigma * sigma) - len * eb / sigma;
        w[k] += i0 - i1 / len;
        w[k + 1] += i1 / len;
    }
    w
}

fn green_nodes(cfg: &HessianEstimatorConfig, k: f64) -> Result<Vec<f64>> {
    let q = &cfg.time_quadrature;
    let rate = cfg.sigma - 2.0 * k - cfg.theta;
    if rate <= 0.0 {
        warn!("σ = {} does not exceed 2K + θ = {}; the Green integral may diverge", cfg.sigma, 2.0 * k + cfg.theta);
    }
    let t_max = match q.t_max {
        Some(t) => t,
        None if rate > 0.0 => (1e-6f64).ln() / -rate,
        None => return invalid("cannot choose a truncation time when σ <= 2K + θ; set t_max"),
    };
    if t_max <= q.t_min {
        return invalid("time quadrature needs t_max > t_min");
    }
    let mut nodes = vec![0.0];
    let ratio = (t_max / q.t_min).powf(1.0 / (q.nodes - 1) as f64);
    for i in 0..q.nodes {
        nodes.push(if i + 1 == q.nodes { t_max } else { q.t_min * ratio.powi(i as i32) });
    }
    Ok(nodes)
}

/// Green operator `T = Hess (Δ + σ)^{-1} = ∫_0^∞ e^{-σt} Hess P_t dt`
/// applied to `f`, by product integration over log-spaced time nodes. In
/// mixed mode all nodes share the same paths.
#[allow(clippy::too_many_arguments)]
pub fn estimate_green_hess<F: ScalarField + ?Sized>(
    m: &ManifoldModel,
    f: &F,
    x: &Point,
    v: &TangentVector,
    w: &TangentVector,
    cfg: &HessianEstimatorConfig,
    mode: HessianMode,
    sim: &SimConfig,
) -> Result<GreenEstimate> {
    cfg.validate()?;
    check_point(m, x)?;
    f.supports(m)?;
    let nodes = green_nodes(cfg, m.ricci_lower_bound())?;
    let t_max = *nodes.last().unwrap();
    let d = m.dim();
    let frame0 = m.frame_at(&x.coords);
    let vc = frame0.coords(m, &v.comps);
    let wc = frame0.coords(m, &w.comps);
    let contract = |h: &[f64]| -> f64 { (0..d).map(|i| (0..d).map(|j| vc[i] * h[i * d + j] * wc[j]).sum::<f64>()).sum() };

    let h0 = crate::geometry::fields::hessian_in_frame(f, m, &x.coords, &frame0)
        .map(|h| (0..d * d).map(|k| h[(k / d, k % d)]).collect::<Vec<f64>>());
    let n_nodes = nodes.len();
    // per-node samples: value at t = 0 from the oracle (or the bismut limit
    // being unavailable, extrapolated from the first node)
    let (means, errs, n_paths) = match mode {
        HessianMode::Mixed => {
            let h0 = h0.ok_or_else(|| Error::Unsupported(format!("{} has no Hessian", f.name())))?;
            // steps no longer than min(node / 200, h)
            let mut steps = Vec::new();
            let mut ends = Vec::new();
            for k in 1..n_nodes {
                let span = nodes[k] - nodes[k - 1];
                let cap = sim.h.unwrap_or(f64::INFINITY).min(nodes[k] / 200.0);
                let n = (span / cap).ceil().max(1.0) as usize;
                steps.extend(std::iter::repeat_n(span / n as f64, n));
                ends.push(steps.len());
            }
            let width = n_nodes - 1;
            let stats = run_batch(sim, width, |mut rng, _, out| {
                let basis: Vec<Vec<f64>> =
                    (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
                let pairs = (0..d * d).map(|p| (basis[p / d].clone(), basis[p % d].clone())).collect();
                let mut st = TransportState::new(d, pairs);
                let mut h = vec![0.0; d * d];
                let mut slot = 0;
                let after = |k: usize, wk: &Walker<'_>, st: Option<&TransportState>| -> Result<()> {
                    if slot < ends.len() && k == ends[slot] {
                        mixed_sample(m, f, wk, st.expect("transport state"), &mut h)?;
                        out[slot] = contract(&h);
                        slot += 1;
                    }
                    Ok(())
                };
                drive(m, &x.coords, None, &steps, &mut rng, cfg.rule, Some(&mut st), |_, _, _| {}, after)?;
                Ok(())
            })?;
            let mut means = vec![contract(&h0)];
            means.extend(stats.mean);
            let mut errs = vec![0.0];
            errs.extend(stats.stderr);
            (means, errs, stats.n_paths)
        }
        HessianMode::Bismut => {
            let mut means = vec![0.0];
            let mut errs = vec![0.0];
            let mut n_paths = 0;
            for &t in &nodes[1..] {
                let n = 200usize;
                let node_sim = SimConfig { h: Some(t / n as f64), ..sim.clone() };
                let e = estimate_hess(m, f, x, v, w, t, cfg, HessianMode::Bismut, &node_sim)?;
                means.push(e.value[0]);
                errs.push(e.stderr[0]);
                n_paths = e.n_paths;
            }
            means[0] = match h0 {
                Some(h) => contract(&h),
                None => means[1],
            };
            (means, errs, n_paths)
        }
    };

    let weights = product_weights(&nodes, cfg.sigma);
    let value: f64 = weights.iter().zip(&means).map(|(a, b)| a * b).sum();
    // Bismut nodes are independent; mixed nodes share paths, so bound by
    // the sum of weighted standard errors.
    let stderr = match mode {
        HessianMode::Bismut => weights.iter().zip(&errs).map(|(a, e)| (a * e).powi(2)).sum::<f64>().sqrt(),
        HessianMode::Mixed => weights.iter().zip(&errs).map(|(a, e)| a * e).sum(),
    };
    // coarse rule on every other node (keeping both ends)
    let mut coarse_idx: Vec<usize> = (0..n_nodes).step_by(2).collect();
    if *coarse_idx.last().unwrap() != n_nodes - 1 {
        coarse_idx.push(n_nodes - 1);
    }
    let coarse_nodes: Vec<f64> = coarse_idx.iter().map(|&i| nodes[i]).collect();
    let coarse_w = product_weights(&coarse_nodes, cfg.sigma);
    let coarse: f64 = coarse_w.iter().zip(&coarse_idx).map(|(a, &i)| a * means[i]).sum();
    let rate = cfg.sigma - 2.0 * m.ricci_lower_bound() - cfg.theta;
    let tail = if rate > 0.0 {
        means[n_nodes - 1].abs().max(errs[n_nodes - 1]) * (-cfg.sigma * t_max).exp() / rate
    } else {
        f64::INFINITY
    };
    Ok(GreenEstimate {
        value,
        stderr,
        quadrature_tol: tail + (value - coarse).abs(),
        t_max,
        nodes,
        n_paths,
        seed: sim.seed,
        mode: mode.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn product_weights_integrate_linear_functions_exactly() {
        let nodes = [0.0, 0.1, 0.5, 2.0, 7.0];
        let sigma = 1.3;
        let w = product_weights(&nodes, sigma);
        let c: f64 = w.iter().sum();
        assert_relative_eq!(c, (1.0 - (-sigma * 7.0f64).exp()) / sigma, epsilon = 1e-14);
        let lin: f64 = w.iter().zip(&nodes).map(|(a, t)| a * t).sum();
        let exact = (1.0 - (1.0 + sigma * 7.0) * (-sigma * 7.0f64).exp()) / (sigma * sigma);
        assert_relative_eq!(lin, exact, epsilon = 1e-13);
    }

    #[test]
    fn profiles_follow_the_definition() {
        let p = WeightProfiles::default();
        let t = 2.0;
        assert_eq!(p.k(0.0, t), 1.0);
        assert_eq!(p.k(1.0, t), 0.0);
        assert_eq!(p.k(1.5, t), 0.0);
        assert_eq!(p.l(0.5, t), 1.0);
        assert_eq!(p.l(1.0, t), 1.0);
        assert_eq!(p.l(2.0, t), 0.0);
    }

    #[test]
    fn default_truncation_meets_the_decay_target() {
        let cfg = HessianEstimatorConfig::new(4.0);
        let nodes = green_nodes(&cfg, 0.0).unwrap();
        let t_max = *nodes.last().unwrap();
        assert!((4.0 * -t_max).exp() <= 1e-6 * (1.0 + 1e-12));
        assert_eq!(nodes.len(), 41);
    }

    fn square_field(d: usize) -> crate::geometry::fields::Ridge {
        let mut dir = vec![0.0; d];
        dir[0] = 1.0;
        crate::geometry::fields::Ridge::new("x1^2", dir, crate::geometry::fields::Profile::Square)
    }

    #[test]
    fn flat_square_hessian_in_both_modes() {
        let m = ManifoldModel::euclidean(2).unwrap();
        let x = m.origin();
        let f = square_field(2);
        let cfg = HessianEstimatorConfig::default();
        let sim = SimConfig::new(20_000, 11).with_h(0.01);
        let mixed = estimate_hess_matrix(&m, &f, &x, 0.5, &cfg, HessianMode::Mixed, &sim).unwrap();
        assert_relative_eq!(mixed.value[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(mixed.value[3], 0.0, epsilon = 1e-12);
        let bis = estimate_hess_matrix(&m, &f, &x, 0.5, &cfg, HessianMode::Bismut, &sim).unwrap();
        assert!((bis.value[0] - 2.0).abs() < 5.0 * bis.stderr[0] + 0.02, "{:?}", bis);
        assert!(bis.value[3].abs() < 5.0 * bis.stderr[3] + 0.02, "{:?}", bis);
    }

    #[test]
    fn sphere_linear_eigenfunction_decays() {
        let m = ManifoldModel::sphere(2, 1.0).unwrap();
        let x = m.origin();
        let f = crate::geometry::fields::Ridge::new("z", vec![0.0, 0.0, 1.0], crate::geometry::fields::Profile::Linear);
        let t = 0.3;
        let target = -(-2.0 * t as f64).exp();
        let cfg = HessianEstimatorConfig::default();
        let sim = SimConfig::new(20_000, 5).with_h(0.003);
        let mixed = estimate_hess_matrix(&m, &f, &x, t, &cfg, HessianMode::Mixed, &sim).unwrap();
        for k in [0, 3] {
            assert!((mixed.value[k] - target).abs() < 5.0 * mixed.stderr[k] + 0.01, "{:?}", mixed);
        }
        let bis = estimate_hess_matrix(&m, &f, &x, t, &cfg, HessianMode::Bismut, &sim).unwrap();
        for k in [0, 3] {
            assert!((bis.value[k] - target).abs() < 5.0 * bis.stderr[k] + 0.01, "{:?}", bis);
        }
        let g = crate::geometry::fields::Ridge::new("x", vec![1.0, 0.0, 0.0], crate::geometry::fields::Profile::Linear);
        let v = m.tangent(&x, vec![1.0, 0.0, 0.0]).unwrap();
        let grad = estimate_grad(&m, &g, &x, &v, t, &sim).unwrap();
        assert!((grad.scalar() - (-2.0 * t as f64).exp()).abs() < 5.0 * grad.scalar_stderr() + 0.01, "{:?}", grad);
    }

    #[test]
    fn green_operator_on_a_flat_mode() {
        // f = cos x on T¹: (Δ + σ)^{-1} f = f / (1 + σ), Hess = -cos x / (1 + σ)
        let m = ManifoldModel::torus(1).unwrap();
        let x = m.origin();
        let f = crate::geometry::fields::Ridge::new("cos", vec![1.0], crate::geometry::fields::Profile::Cos);
        let v = m.tangent(&x, vec![1.0]).unwrap();
        let cfg = HessianEstimatorConfig::new(2.0);
        let sim = SimConfig::new(4_000, 3).with_h(0.01);
        let g = estimate_green_hess(&m, &f, &x, &v, &v, &cfg, HessianMode::Mixed, &sim).unwrap();
        let exact = -1.0 / 3.0;
        assert!((g.value - exact).abs() < 5.0 * g.stderr + g.quadrature_tol, "{:?}", g);
    }
}
