//! Model Riemannian manifolds with closed-form geometry.
//!
//! Spheres live in `R^{d+1}`, hyperbolic spaces on the upper sheet of the
//! hyperboloid in Minkowski space `R^{d,1}` (time coordinate first), and
//! flat tori are periodic charts with side length `2π`. Tangent vectors
//! are stored in ambient coordinates.

mod curvature;
pub mod fields;

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad;

pub(crate) use curvature::curvature_tensors;
pub use curvature::{commutation_residual, curvature_package, CurvaturePackage};

/// A model space with exactly known geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ManifoldModel {
    Euclidean { dim: usize },
    Torus { dim: usize },
    Sphere { dim: usize, radius: f64 },
    /// Constant curvature `-1 / scale^2`.
    Hyperbolic { dim: usize, scale: f64 },
}

/// A point, in ambient coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: Vec<f64>,
}

impl Point {
    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }
}

/// A tangent vector at `base`, in ambient coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: Point,
    pub comps: Vec<f64>,
}

/// An orthonormal frame: `dim` tangent vectors in ambient coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub vectors: Vec<Vec<f64>>,
}

/// Result of [`distance_volume`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceVolume {
    pub rho: f64,
    pub vol: f64,
    pub doubling_ratio: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn wrap_angle(u: f64) -> f64 {
    // into [-π, π)
    (u + PI).rem_euclid(TAU) - PI
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        2 => PI,
        _ => TAU / d as f64 * unit_ball_volume(d - 2),
    }
}

impl ManifoldModel {
    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::Euclidean { dim }.validated()
    }

    pub fn torus(dim: usize) -> Result<Self> {
        Self::Torus { dim }.validated()
    }

    pub fn sphere(dim: usize, radius: f64) -> Result<Self> {
        Self::Sphere { dim, radius }.validated()
    }

    pub fn hyperbolic(dim: usize, scale: f64) -> Result<Self> {
        Self::Hyperbolic { dim, scale }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return invalid("dimension must be at least 1");
        }
        match *self {
            Self::Sphere { radius, .. } if !(radius > 0.0 && radius.is_finite()) => {
                invalid(format!("sphere radius must be positive, got {radius}"))
            }
            Self::Hyperbolic { dim, .. } if dim < 2 => invalid("hyperbolic space needs dim >= 2"),
            Self::Hyperbolic { scale, .. } if !(scale > 0.0 && scale.is_finite()) => {
                invalid(format!("hyperbolic curvature scale must be positive, got {scale}"))
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Self::Euclidean { dim } | Self::Torus { dim } => dim,
            Self::Sphere { dim, .. } | Self::Hyperbolic { dim, .. } => dim,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Self::Euclidean { .. } | Self::Torus { .. } => self.dim(),
            _ => self.dim() + 1,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Self::Euclidean { dim } => format!("euclidean(R^{dim})"),
            Self::Torus { dim } => format!("torus(T^{dim})"),
            Self::Sphere { dim, radius } => format!("sphere(S^{dim}, radius {radius})"),
            Self::Hyperbolic { dim, scale } => format!("hyperbolic(H^{dim}, scale {scale})"),
        }
    }

    pub fn is_compact(&self) -> bool {
        matches!(self, Self::Torus { .. } | Self::Sphere { .. })
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Self::Euclidean { .. } | Self::Torus { .. })
    }

    /// Constant sectional curvature κ (zero for `dim == 1` spheres too, where
    /// the curvature tensor vanishes identically).
    pub fn sectional_curvature(&self) -> f64 {
        match *self {
            Self::Euclidean { .. } | Self::Torus { .. } => 0.0,
            Self::Sphere { radius, .. } => 1.0 / (radius * radius),
            Self::Hyperbolic { scale, .. } => -1.0 / (scale * scale),
        }
    }

    /// `c` with `Ric = c g`.
    pub fn ricci_constant(&self) -> f64 {
        (self.dim() as f64 - 1.0) * self.sectional_curvature()
    }

    /// `K >= 0` with `Ric >= -K`.
    pub fn ricci_lower_bound(&self) -> f64 {
        (-self.ricci_constant()).max(0.0)
    }

    fn minkowski(&self) -> bool {
        matches!(self, Self::Hyperbolic { .. })
    }

    /// Ambient metric: Euclidean, or Minkowski with signature `(-, +, ..., +)`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.minkowski() {
            -a[0] * b[0] + dot(&a[1..], &b[1..])
        } else {
            dot(a, b)
        }
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Deviation from the embedding constraint.
    pub fn constraint_residual(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Euclidean { .. } => 0.0,
            Self::Torus { .. } => {
                if x.iter().all(|u| (0.0..TAU).contains(u)) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Sphere { radius, .. } => (dot(x, x).sqrt() - radius).abs(),
            Self::Hyperbolic { scale, .. } => {
                let r = (-self.inner(x, x)).max(0.0).sqrt();
                (r - scale).abs() + if x[0] > 0.0 { 0.0 } else { f64::INFINITY }
            }
        }
    }

    /// Projects `x` back onto the model.
    pub fn retract(&self, x: &mut [f64]) {
        match *self {
            Self::Euclidean { .. } => {}
            Self::Torus { .. } => {
                for u in x.iter_mut() {
                    *u = u.rem_euclid(TAU);
                    if *u >= TAU {
                        *u = 0.0;
                    }
                }
            }
            Self::Sphere { radius, .. } => {
                let n = dot(x, x).sqrt();
                x.iter_mut().for_each(|u| *u *= radius / n);
            }
            Self::Hyperbolic { scale, .. } => {
                let s = dot(&x[1..], &x[1..]);
                x[0] = (scale * scale + s).sqrt();
            }
        }
    }

    /// Orthogonal projection of an ambient vector onto `T_x M`.
    pub fn project_tangent(&self, x: &[f64], v: &mut [f64]) {
        match *self {
            Self::Euclidean { .. } | Self::Torus { .. } => {}
            Self::Sphere { radius, .. } => {
                let c = dot(x, v) / (radius * radius);
                v.iter_mut().zip(x).for_each(|(vi, xi)| *vi -= c * xi);
            }
            Self::Hyperbolic { scale, .. } => {
                let c = self.inner(x, v) / (scale * scale);
                v.iter_mut().zip(x).for_each(|(vi, xi)| *vi += c * xi);
            }
        }
    }

    /// Component of `v` along the constraint normal at `x` (zero for a
    /// tangent vector).
    pub fn tangent_residual(&self, x: &[f64], v: &[f64]) -> f64 {
        match *self {
            Self::Euclidean { .. } | Self::Torus { .. } => 0.0,
            Self::Sphere { radius, .. } => dot(x, v).abs() / radius,
            Self::Hyperbolic { scale, .. } => self.inner(x, v).abs() / scale,
        }
    }

    /// Follows the geodesic with initial velocity `xi` for unit time,
    /// updating `x` in place and parallel-transporting each of `vecs`.
    pub fn exp_transport(&self, x: &mut [f64], xi: &[f64], vecs: &mut [Vec<f64>]) {
        match *self {
            Self::Euclidean { .. } => x.iter_mut().zip(xi).for_each(|(a, b)| *a += b),
            Self::Torus { .. } => {
                x.iter_mut().zip(xi).for_each(|(a, b)| *a += b);
                self.retract(x);
            }
            Self::Sphere { radius, .. } | Self::Hyperbolic { scale: radius, .. } => {
                let len = self.norm(xi);
                if len == 0.0 {
                    return;
                }
                let theta = len / radius;
                let (c, s) = if self.minkowski() {
                    (theta.cosh(), theta.sinh())
                } else {
                    let (s, c) = theta.sin_cos();
                    (c, s)
                };
                // unit direction
                let n = x.len();
                let mut dir = [0.0f64; 8];
                let mut dir_vec;
                let dir: &mut [f64] = if n <= 8 {
                    &mut dir[..n]
                } else {
                    dir_vec = vec![0.0; n];
                    &mut dir_vec
                };
                dir.iter_mut().zip(xi).for_each(|(d, v)| *d = v / len);
                // new velocity direction: sphere -s x/R + c dir, hyperboloid s x/R + c dir
                let sign = if self.minkowski() { 1.0 } else { -1.0 };
                for v in vecs.iter_mut() {
                    let a = self.inner(v, dir);
                    for i in 0..n {
                        v[i] += a * (sign * s * x[i] / radius + (c - 1.0) * dir[i]);
                    }
                }
                for i in 0..n {
                    x[i] = c * x[i] + radius * s * dir[i];
                }
                self.retract(x);
            }
        }
    }

    /// Riemannian logarithm: the tangent vector at `x` of length `ρ(x, y)`
    /// pointing along the minimizing geodesic to `y`. At the sphere's
    /// antipode an arbitrary frame direction is returned.
    pub fn log_map(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match *self {
            Self::Euclidean { .. } => y.iter().zip(x).map(|(a, b)| a - b).collect(),
            Self::Torus { .. } => y.iter().zip(x).map(|(a, b)| wrap_angle(a - b)).collect(),
            Self::Sphere { .. } | Self::Hyperbolic { .. } => {
                let rho = self.dist(x, y);
                let mut w: Vec<f64> = y.to_vec();
                self.project_tangent(x, &mut w);
                let nw = self.norm(&w);
                if rho == 0.0 {
                    return vec![0.0; x.len()];
                }
                if nw < 1e-300 {
                    let mut e = self.frame_at(x).vectors.swap_remove(0);
                    e.iter_mut().for_each(|u| *u *= rho);
                    return e;
                }
                w.iter_mut().for_each(|u| *u *= rho / nw);
                w
            }
        }
    }

    /// Geodesic distance (closed form).
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Self::Euclidean { .. } => {
                x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            Self::Torus { .. } => x
                .iter()
                .zip(y)
                .map(|(a, b)| wrap_angle(a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
            Self::Sphere { radius, .. } => {
                let chord = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                2.0 * radius * (chord / (2.0 * radius)).min(1.0).asin()
            }
            Self::Hyperbolic { scale, .. } => {
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                let chord = self.inner(&diff, &diff).max(0.0).sqrt();
                2.0 * scale * (chord / (2.0 * scale)).asinh()
            }
        }
    }

    /// Volume `V(x, r)` of a geodesic ball (homogeneous, so independent of
    /// the center).
    pub fn ball_volume(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return invalid(format!("ball radius must be positive, got {r}"));
        }
        let d = self.dim();
        let sphere_area = d as f64 * unit_ball_volume(d); // |S^{d-1}|
        match *self {
            Self::Euclidean { .. } => Ok(unit_ball_volume(d) * r.powi(d as i32)),
            Self::Torus { .. } => torus_ball_volume(d, r),
            Self::Sphere { radius, .. } => {
                if d == 1 {
                    return Ok(2.0 * r.min(PI * radius));
                }
                let upper = (r / radius).min(PI);
                let (v, _) = quad::integrate(|s| s.sin().powi(d as i32 - 1), 0.0, upper, 1e-15, 1e-13)?;
                Ok(sphere_area * radius.powi(d as i32) * v)
            }
            Self::Hyperbolic { scale, .. } => {
                let upper = r / scale;
                let (v, _) = quad::integrate(|s| s.sinh().powi(d as i32 - 1), 0.0, upper, 1e-15, 1e-13)?;
                Ok(sphere_area * scale.powi(d as i32) * v)
            }
        }
    }

    /// Total volume, when finite.
    pub fn total_volume(&self) -> Option<f64> {
        let d = self.dim();
        match *self {
            Self::Torus { .. } => Some(TAU.powi(d as i32)),
            Self::Sphere { radius, .. } => {
                // |S^d| = (d+1) ω_{d+1}
                Some((d + 1) as f64 * unit_ball_volume(d + 1) * radius.powi(d as i32))
            }
            _ => None,
        }
    }

    /// Canonical base point: the origin, the north pole, or the hyperboloid
    /// vertex.
    pub fn origin(&self) -> Point {
        let n = self.ambient_dim();
        let mut c = vec![0.0; n];
        match *self {
            Self::Sphere { radius, .. } => c[n - 1] = radius,
            Self::Hyperbolic { scale, .. } => c[0] = scale,
            _ => {}
        }
        Point { coords: c }
    }

    /// Validates ambient coordinates (within `1e-8`) and retracts them onto
    /// the model.
    pub fn point(&self, coords: Vec<f64>) -> Result<Point> {
        if coords.len() != self.ambient_dim() {
            return invalid(format!(
                "point needs {} ambient coordinates, got {}",
                self.ambient_dim(),
                coords.len()
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        let mut c = coords;
        if let Self::Torus { .. } = self {
            self.retract(&mut c);
            return Ok(Point { coords: c });
        }
        if self.constraint_residual(&c) > 1e-8 {
            return invalid(format!("point {:?} does not lie on {}", c, self.name()));
        }
        self.retract(&mut c);
        Ok(Point { coords: c })
    }

    /// `exp_o(Σ c_i e_i)` for the canonical frame at the origin.
    pub fn exp_origin(&self, frame_coords: &[f64]) -> Point {
        let o = self.origin();
        let frame = self.frame_at(&o.coords);
        let xi = frame.combine(frame_coords);
        let mut x = o.coords;
        self.exp_transport(&mut x, &xi, &mut []);
        Point { coords: x }
    }

    /// Canonical orthonormal frame at `x`.
    pub fn frame_at(&self, x: &[f64]) -> Frame {
        let n = self.ambient_dim();
        let d = self.dim();
        let order: Vec<usize> = if self.minkowski() { (1..n).chain([0]).collect() } else { (0..n).collect() };
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(d);
        for i in order {
            if vectors.len() == d {
                break;
            }
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            self.project_tangent(x, &mut e);
            for _ in 0..2 {
                for u in &vectors {
                    let c = self.inner(&e, u);
                    e.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
                }
            }
            let len = self.norm(&e);
            if len > 1e-6 {
                e.iter_mut().for_each(|a| *a /= len);
                vectors.push(e);
            }
        }
        debug_assert_eq!(vectors.len(), d);
        Frame { vectors }
    }

    /// Re-projects frame vectors onto `T_x M` and re-orthonormalizes them
    /// (modified Gram–Schmidt).
    pub fn orthonormalize(&self, x: &[f64], vecs: &mut [Vec<f64>]) {
        for i in 0..vecs.len() {
            let (done, rest) = vecs.split_at_mut(i);
            let e = &mut rest[0];
            self.project_tangent(x, e);
            for u in done.iter() {
                let c = self.inner(e, u);
                e.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
            }
            let len = self.norm(e);
            e.iter_mut().for_each(|a| *a /= len);
        }
    }

    /// Builds a tangent vector, checking tangency to `1e-10` (relative).
    pub fn tangent(&self, x: &Point, comps: Vec<f64>) -> Result<TangentVector> {
        if comps.len() != self.ambient_dim() {
            return invalid("tangent vector has the wrong number of components");
        }
        if comps.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("tangent vector components".into()));
        }
        let scale = 1.0 + comps.iter().map(|c| c.abs()).fold(0.0, f64::max);
        if self.tangent_residual(&x.coords, &comps) > 1e-10 * scale {
            return invalid("vector is not tangent at its base point");
        }
        Ok(TangentVector { base: x.clone(), comps })
    }

    /// Tangent vector `Σ c_i e_i` for the canonical frame at `x`.
    pub fn tangent_from_frame(&self, x: &Point, frame_coords: &[f64]) -> TangentVector {
        let frame = self.frame_at(&x.coords);
        TangentVector { base: x.clone(), comps: frame.combine(frame_coords) }
    }

    /// Raises an ambient covector to the Riemannian gradient at `x`.
    pub fn raise(&self, x: &[f64], covector: &[f64]) -> Vec<f64> {
        let mut v = covector.to_vec();
        if self.minkowski() {
            v[0] = -v[0];
        }
        self.project_tangent(x, &mut v);
        v
    }

    /// Factor `s` such that the Riemannian Hessian of the restriction of a
    /// linear function `ℓ(x) = a·x` is `ℓ(x) s ⟨·,·⟩` (as an ambient
    /// bilinear form `ℓ(x) S`, see [`Self::linear_hessian_form`]).
    pub(crate) fn linear_hessian_form(&self, ell: f64) -> Vec<f64> {
        let n = self.ambient_dim();
        let mut b = vec![0.0; n * n];
        match *self {
            Self::Sphere { radius, .. } => {
                for i in 0..n {
                    b[i * n + i] = -ell / (radius * radius);
                }
            }
            Self::Hyperbolic { scale, .. } => {
                for i in 0..n {
                    b[i * n + i] = ell / (scale * scale) * if i == 0 { -1.0 } else { 1.0 };
                }
            }
            _ => {}
        }
        b
    }
}

impl Frame {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// `Σ c_i e_i`.
    pub fn combine(&self, coords: &[f64]) -> Vec<f64> {
        let n = self.vectors.first().map_or(0, |v| v.len());
        let mut out = vec![0.0; n];
        for (c, e) in coords.iter().zip(&self.vectors) {
            out.iter_mut().zip(e).for_each(|(o, ei)| *o += c * ei);
        }
        out
    }

    /// Frame coordinates `⟨v, e_i⟩` of a tangent vector.
    pub fn coords(&self, m: &ManifoldModel, v: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|e| m.inner(v, e)).collect()
    }

    /// Largest `|⟨e_i, e_j⟩ - δ_ij|`.
    pub fn orthonormality_defect(&self, m: &ManifoldModel) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.vectors.iter().enumerate() {
            for (j, b) in self.vectors.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((m.inner(a, b) - target).abs());
            }
        }
        worst
    }
}

fn torus_ball_volume(d: usize, r: f64) -> Result<f64> {
    // |B(0, r) ∩ [-π, π]^d|, the ball of the flat torus.
    if d == 1 {
        return Ok(2.0 * r.min(PI));
    }
    if r <= PI {
        return Ok(unit_ball_volume(d) * r.powi(d as i32));
    }
    if r >= PI * (d as f64).sqrt() {
        return Ok(TAU.powi(d as i32));
    }
    let lim = r.min(PI);
    let err = std::cell::RefCell::new(None);
    let (v, _) = quad::integrate(
        |u| {
            let rr = (r * r - u * u).max(0.0).sqrt();
            if rr == 0.0 {
                return 0.0;
            }
            match torus_ball_volume(d - 1, rr) {
                Ok(v) => v,
                Err(e) => {
                    *err.borrow_mut() = Some(e);
                    0.0
                }
            }
        },
        -lim,
        lim,
        1e-12,
        1e-11,
    )?;
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Moves from `x` along the geodesic with initial velocity `v` for time
/// `h` (exact exponential map on every model).
pub fn geodesic_step(m: &ManifoldModel, x: &Point, v: &TangentVector, h: f64) -> Result<Point> {
    if !(h > 0.0) || !h.is_finite() {
        return invalid(format!("step h must be positive, got {h}"));
    }
    if v.comps.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("tangent vector norm".into()));
    }
    let xi: Vec<f64> = v.comps.iter().map(|c| c * h).collect();
    let mut y = x.coords.clone();
    m.exp_transport(&mut y, &xi, &mut []);
    Ok(Point { coords: y })
}

/// Geodesic distance, ball volume `V(x, r)` and doubling ratio
/// `V(x, 2r) / V(x, r)`.
pub fn distance_volume(m: &ManifoldModel, x: &Point, y: &Point, r: f64) -> Result<DistanceVolume> {
    let rho = m.dist(&x.coords, &y.coords);
    let vol = m.ball_volume(r)?;
    let doubling_ratio = m.ball_volume(2.0 * r)? / vol;
    Ok(DistanceVolume { rho, vol, doubling_ratio })
}
