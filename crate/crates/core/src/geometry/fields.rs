//! Scalar test functions and potentials with closed-form derivatives.
//!
//! Derivatives are reported in ambient coordinates: the differential as a
//! covector `c` with `df(v) = c·v`, the Hessian as a bilinear form `B` with
//! `Hess f(v, w) = vᵀ B w` for tangent `v, w`. The Laplacian is the
//! nonnegative operator, `Δf = -tr Hess f`.

use std::f64::consts::TAU;
use std::fmt::Debug;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Frame, ManifoldModel, TangentVector};
use crate::error::{invalid, Result};
use crate::oracle::spectral::{SphericalExpansion, TrigPolynomial};

pub trait ScalarField: Send + Sync + Debug {
    fn name(&self) -> String;

    fn eval(&self, m: &ManifoldModel, x: &[f64]) -> f64;

    /// Ambient covector representing `df`, if known in closed form.
    fn differential(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>>;

    /// Row-major ambient bilinear form representing `Hess f`.
    fn hessian(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>>;

    /// Nonnegative Laplacian `Δf = -tr Hess f`.
    fn laplacian(&self, m: &ManifoldModel, x: &[f64]) -> Option<f64> {
        let frame = m.frame_at(x);
        hessian_in_frame(self, m, x, &frame).map(|h| -h.trace())
    }

    /// Radius of a geodesic ball containing the support, for compactly
    /// supported fields.
    fn support_radius(&self) -> Option<f64> {
        None
    }

    /// Upper bound on `|f|`.
    fn sup_bound(&self) -> Option<f64> {
        None
    }

    /// Checks that the field is defined on `m`.
    fn supports(&self, m: &ManifoldModel) -> Result<()>;
}

/// `df(e_i)` in the given frame.
pub fn gradient_in_frame<F: ScalarField + ?Sized>(
    f: &F,
    m: &ManifoldModel,
    x: &[f64],
    frame: &Frame,
) -> Option<Vec<f64>> {
    let c = f.differential(m, x)?;
    Some(frame.vectors.iter().map(|e| dot(&c, e)).collect())
}

/// `Hess f(e_i, e_j)` in the given frame.
pub fn hessian_in_frame<F: ScalarField + ?Sized>(
    f: &F,
    m: &ManifoldModel,
    x: &[f64],
    frame: &Frame,
) -> Option<DMatrix<f64>> {
    let b = f.hessian(m, x)?;
    Some(bilinear_in_frame(&b, frame))
}

pub(crate) fn bilinear_in_frame(b: &[f64], frame: &Frame) -> DMatrix<f64> {
    let d = frame.dim();
    let n = frame.vectors.first().map_or(0, Vec::len);
    let bv: Vec<Vec<f64>> = frame
        .vectors
        .iter()
        .map(|e| (0..n).map(|i| (0..n).map(|j| b[i * n + j] * e[j]).sum()).collect())
        .collect();
    DMatrix::from_fn(d, d, |i, j| dot(&frame.vectors[i], &bv[j]))
}

/// Riemannian gradient as a tangent vector.
pub fn gradient<F: ScalarField + ?Sized>(f: &F, m: &ManifoldModel, x: &super::Point) -> Option<TangentVector> {
    let c = f.differential(m, &x.coords)?;
    Some(TangentVector { base: x.clone(), comps: m.raise(&x.coords, &c) })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-variable profile `φ` of a ridge function `φ(a·x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "lowercase")]
pub enum Profile {
    Linear,
    Square,
    Sin,
    Cos,
    /// `exp(rate (s - offset))`
    Exp { rate: f64, offset: f64 },
}

impl Profile {
    /// `(φ, φ', φ'')` at `s`.
    pub fn jet(&self, s: f64) -> (f64, f64, f64) {
        match *self {
            Profile::Linear => (s, 1.0, 0.0),
            Profile::Square => (s * s, 2.0 * s, 2.0),
            Profile::Sin => (s.sin(), s.cos(), -s.sin()),
            Profile::Cos => (s.cos(), -s.sin(), -s.cos()),
            Profile::Exp { rate, offset } => {
                let e = (rate * (s - offset)).exp();
                (e, rate * e, rate * rate * e)
            }
        }
    }
}

/// `f(x) = φ(a·x)` with `a·x` the plain ambient dot product (angle
/// coordinates on the torus).
#[derive(Clone, Debug, PartialEq)]
pub struct Ridge {
    pub direction: Vec<f64>,
    pub profile: Profile,
    pub label: String,
}

impl Ridge {
    pub fn new(label: impl Into<String>, direction: Vec<f64>, profile: Profile) -> Self {
        Ridge { direction, profile, label: label.into() }
    }
}

impl ScalarField for Ridge {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn eval(&self, _: &ManifoldModel, x: &[f64]) -> f64 {
        self.profile.jet(dot(&self.direction, x)).0
    }

    fn differential(&self, _: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        let (_, d1, _) = self.profile.jet(dot(&self.direction, x));
        Some(self.direction.iter().map(|a| d1 * a).collect())
    }

    fn hessian(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        let ell = dot(&self.direction, x);
        let (_, d1, d2) = self.profile.jet(ell);
        let mut b = m.linear_hessian_form(ell);
        b.iter_mut().for_each(|v| *v *= d1);
        let n = self.direction.len();
        for i in 0..n {
            for j in 0..n {
                b[i * n + j] += d2 * self.direction[i] * self.direction[j];
            }
        }
        Some(b)
    }

    fn sup_bound(&self) -> Option<f64> {
        match self.profile {
            Profile::Sin | Profile::Cos => Some(1.0),
            _ => None,
        }
    }

    fn supports(&self, m: &ManifoldModel) -> Result<()> {
        if self.direction.len() != m.ambient_dim() {
            return invalid(format!("field '{}' has the wrong ambient dimension for {}", self.label, m.name()));
        }
        if let ManifoldModel::Torus { .. } = m {
            let periodic = match self.profile {
                Profile::Sin | Profile::Cos => self.direction.iter().all(|a| (a - a.round()).abs() < 1e-12),
                Profile::Linear | Profile::Square | Profile::Exp { .. } => self.direction.iter().all(|a| *a == 0.0),
            };
            if !periodic {
                return invalid(format!("field '{}' is not periodic on the torus", self.label));
            }
        }
        Ok(())
    }
}

/// Gaussian bump `exp(-(R²/w²)(cosh(ρ/R) - 1))` around `center` on the
/// hyperbolic plane of scale `R`, or `exp(-(a²/w²)(1 - cos(ρ/a)))` on the
/// sphere of radius `a`; both behave like `exp(-ρ²/2w²)` near the center.
pub fn gaussian_bump(m: &ManifoldModel, center: &[f64], width: f64) -> Result<Ridge> {
    if !(width > 0.0) || !width.is_finite() {
        return invalid(format!("bump width must be positive, got {width}"));
    }
    let c = m.point(center.to_vec())?.coords;
    let label = format!("gaussian_bump(w={width})");
    match *m {
        ManifoldModel::Hyperbolic { scale, .. } => {
            let r2 = scale * scale;
            // plain dot with (c₀, -c')/R² gives cosh(ρ/R)
            let dir = c.iter().enumerate().map(|(i, v)| if i == 0 { v / r2 } else { -v / r2 }).collect();
            Ok(Ridge::new(label, dir, Profile::Exp { rate: -r2 / (width * width), offset: 1.0 }))
        }
        ManifoldModel::Sphere { radius, .. } => {
            let r2 = radius * radius;
            let dir = c.iter().map(|v| v / r2).collect();
            Ok(Ridge::new(label, dir, Profile::Exp { rate: r2 / (width * width), offset: 1.0 }))
        }
        _ => Err(crate::error::Error::Unsupported(format!("no Gaussian bump on {}", m.name()))),
    }
}

/// Constant function (used as a potential).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }
    fn eval(&self, _: &ManifoldModel, _: &[f64]) -> f64 {
        self.0
    }
    fn differential(&self, m: &ManifoldModel, _: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; m.ambient_dim()])
    }
    fn hessian(&self, m: &ManifoldModel, _: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; m.ambient_dim().pow(2)])
    }
    fn sup_bound(&self) -> Option<f64> {
        Some(self.0.abs())
    }
    fn supports(&self, _: &ManifoldModel) -> Result<()> {
        Ok(())
    }
}

/// `|x - c|^2` on Euclidean space.
#[derive(Clone, Debug, PartialEq)]
pub struct NormSquared {
    pub center: Vec<f64>,
}

impl ScalarField for NormSquared {
    fn name(&self) -> String {
        "norm_squared".into()
    }
    fn eval(&self, _: &ManifoldModel, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum()
    }
    fn differential(&self, _: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().zip(&self.center).map(|(a, c)| 2.0 * (a - c)).collect())
    }
    fn hessian(&self, m: &ManifoldModel, _: &[f64]) -> Option<Vec<f64>> {
        let n = m.ambient_dim();
        let mut b = vec![0.0; n * n];
        (0..n).for_each(|i| b[i * n + i] = 2.0);
        Some(b)
    }
    fn supports(&self, m: &ManifoldModel) -> Result<()> {
        match m {
            ManifoldModel::Euclidean { dim } if *dim == self.center.len() => Ok(()),
            _ => invalid("norm_squared needs Euclidean space of matching dimension"),
        }
    }
}

/// Smooth bump `exp(1 - 1/(1 - |x - c|^2/r^2))` supported in the ball of
/// radius `r`, on flat models (minimum-image displacement on the torus).
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Bump {
    fn displacement(&self, m: &ManifoldModel, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.center)
            .map(|(a, c)| match m {
                ManifoldModel::Torus { .. } => (a - c + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI,
                _ => a - c,
            })
            .collect()
    }

    /// `(ψ, ψ', ψ'')` of `ψ(s) = exp(1 - 1/(1 - s/r^2))` in `s = |y|^2`.
    fn jet(&self, s: f64) -> (f64, f64, f64) {
        let r2 = self.radius * self.radius;
        let u = s / r2;
        if u >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let w = 1.0 - u;
        let psi = (1.0 - 1.0 / w).exp();
        // dψ/du = -ψ / w², d²ψ/du² = ψ (1 - 2w) / w⁴
        let d1 = -psi / (w * w);
        let d2 = psi * (1.0 - 2.0 * w) / w.powi(4);
        (psi, d1 / r2, d2 / (r2 * r2))
    }
}

impl ScalarField for Bump {
    fn name(&self) -> String {
        format!("bump(r={})", self.radius)
    }
    fn eval(&self, m: &ManifoldModel, x: &[f64]) -> f64 {
        let y = self.displacement(m, x);
        self.jet(dot(&y, &y)).0
    }
    fn differential(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        let y = self.displacement(m, x);
        let (_, d1, _) = self.jet(dot(&y, &y));
        Some(y.iter().map(|v| 2.0 * d1 * v).collect())
    }
    fn hessian(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        let y = self.displacement(m, x);
        let (_, d1, d2) = self.jet(dot(&y, &y));
        let n = y.len();
        let mut b = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                b[i * n + j] = 4.0 * d2 * y[i] * y[j] + if i == j { 2.0 * d1 } else { 0.0 };
            }
        }
        Some(b)
    }
    fn support_radius(&self) -> Option<f64> {
        Some(self.radius)
    }
    fn sup_bound(&self) -> Option<f64> {
        Some(1.0)
    }
    fn supports(&self, m: &ManifoldModel) -> Result<()> {
        if !m.is_flat() || self.center.len() != m.ambient_dim() {
            return invalid("bump needs a flat model of matching dimension");
        }
        if !(self.radius > 0.0) {
            return invalid("bump radius must be positive");
        }
        if matches!(m, ManifoldModel::Torus { .. }) && self.radius >= std::f64::consts::PI {
            return invalid("bump radius on the torus must be below π");
        }
        Ok(())
    }
}

/// A potential equal to the squared curvature norm `|R|^2`, which is
/// constant on every homogeneous model and computed once.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureNormSquared {
    value: f64,
}

impl CurvatureNormSquared {
    pub fn new(m: &ManifoldModel) -> Result<Self> {
        let o = m.origin();
        let pkg = super::curvature_package(m, &o, &m.frame_at(&o.coords))?;
        Ok(CurvatureNormSquared { value: pkg.r_opnorm * pkg.r_opnorm })
    }
}

impl ScalarField for CurvatureNormSquared {
    fn name(&self) -> String {
        "curvature_norm_squared".into()
    }
    fn eval(&self, _: &ManifoldModel, _: &[f64]) -> f64 {
        self.value
    }
    fn differential(&self, m: &ManifoldModel, _: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; m.ambient_dim()])
    }
    fn hessian(&self, m: &ManifoldModel, _: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; m.ambient_dim().pow(2)])
    }
    fn sup_bound(&self) -> Option<f64> {
        Some(self.value)
    }
    fn supports(&self, _: &ManifoldModel) -> Result<()> {
        Ok(())
    }
}

impl ScalarField for TrigPolynomial {
    fn name(&self) -> String {
        format!("trig_polynomial({} modes)", self.modes.len())
    }
    fn eval(&self, _: &ManifoldModel, x: &[f64]) -> f64 {
        self.value(x)
    }
    fn differential(&self, _: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.gradient(x))
    }
    fn hessian(&self, _: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.hessian(x))
    }
    fn laplacian(&self, _: &ManifoldModel, x: &[f64]) -> Option<f64> {
        Some(self.laplacian(x))
    }
    fn sup_bound(&self) -> Option<f64> {
        Some(self.modes.iter().map(|m| m.cos.abs() + m.sin.abs()).sum())
    }
    fn supports(&self, m: &ManifoldModel) -> Result<()> {
        match m {
            ManifoldModel::Torus { dim } if self.modes.iter().all(|k| k.k.len() == *dim) => Ok(()),
            _ => invalid("trig polynomial needs a torus of matching dimension"),
        }
    }
}

impl ScalarField for SphericalExpansion {
    fn name(&self) -> String {
        format!("spherical_expansion(lmax={})", self.max_degree())
    }
    fn eval(&self, m: &ManifoldModel, x: &[f64]) -> f64 {
        self.value(x, sphere_radius(m))
    }
    fn differential(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.differential(x, sphere_radius(m)))
    }
    fn hessian(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.hessian(x, sphere_radius(m)))
    }
    fn laplacian(&self, m: &ManifoldModel, x: &[f64]) -> Option<f64> {
        Some(self.laplacian(x, sphere_radius(m)))
    }
    fn supports(&self, m: &ManifoldModel) -> Result<()> {
        match m {
            ManifoldModel::Sphere { dim: 2, .. } => Ok(()),
            _ => invalid("spherical expansion needs the 2-sphere"),
        }
    }
}

fn sphere_radius(m: &ManifoldModel) -> f64 {
    match *m {
        ManifoldModel::Sphere { radius, .. } => radius,
        _ => 1.0,
    }
}

/// Finite-difference reconstruction of the frame gradient, Hessian and
/// Laplacian along geodesics through `x`, using step `eps`.
#[derive(Clone, Debug)]
pub struct FiniteDifferenceJet {
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub laplacian: f64,
}

pub fn finite_difference_jet<F: ScalarField + ?Sized>(
    f: &F,
    m: &ManifoldModel,
    x: &[f64],
    frame: &Frame,
    eps: f64,
) -> FiniteDifferenceJet {
    let d = frame.dim();
    let along = |dir: &[f64], s: f64| {
        let mut y = x.to_vec();
        let xi: Vec<f64> = dir.iter().map(|c| c * s).collect();
        m.exp_transport(&mut y, &xi, &mut []);
        f.eval(m, &y)
    };
    let f0 = f.eval(m, x);
    let second = |dir: &[f64]| (along(dir, eps) - 2.0 * f0 + along(dir, -eps)) / (eps * eps);
    let gradient: Vec<f64> =
        frame.vectors.iter().map(|e| (along(e, eps) - along(e, -eps)) / (2.0 * eps)).collect();
    let mut hessian = DMatrix::zeros(d, d);
    for i in 0..d {
        hessian[(i, i)] = second(&frame.vectors[i]);
    }
    for i in 0..d {
        for j in 0..i {
            let u: Vec<f64> = frame.vectors[i]
                .iter()
                .zip(&frame.vectors[j])
                .map(|(a, b)| (a + b) / std::f64::consts::SQRT_2)
                .collect();
            let v = second(&u) - 0.5 * (hessian[(i, i)] + hessian[(j, j)]);
            hessian[(i, j)] = v;
            hessian[(j, i)] = v;
        }
    }
    let laplacian = -hessian.trace();
    FiniteDifferenceJet { gradient, hessian, laplacian }
}
