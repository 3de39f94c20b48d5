//! Construction of built-in fields and potentials, and the closed forms
//! used as references for their heat-semigroup quantities.

use mheat_core::geometry::fields::{
    gaussian_bump, gradient_in_frame, hessian_in_frame, Bump, Constant, CurvatureNormSquared, Profile, Ridge,
    ScalarField,
};
use mheat_core::geometry::{ManifoldModel, Point};
use mheat_core::oracle::{SphericalExpansion, TrigPolynomial};
use mheat_core::rng::PathRng;
use mheat_core::{Error, Result};

use crate::config::{FieldSpec, PotentialSpec};

/// Tolerance for snapping user-supplied ambient points onto curved models.
const SNAP_TOLERANCE: f64 = 1e-6;

/// Validates ambient coordinates, snapping nearly-on-model points of the
/// sphere and hyperboloid exactly onto the model.
pub fn point_on(m: &ManifoldModel, coords: &[f64]) -> Result<Point> {
    let mut c = coords.to_vec();
    match *m {
        ManifoldModel::Sphere { radius, .. } => {
            let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - radius).abs() > SNAP_TOLERANCE * radius {
                return Err(Error::InvalidArgument(format!("{coords:?} is not on the sphere of radius {radius}")));
            }
            c.iter_mut().for_each(|v| *v *= radius / n);
        }
        ManifoldModel::Hyperbolic { scale, .. } => {
            let spatial: f64 = c[1..].iter().map(|v| v * v).sum();
            let x0 = (scale * scale + spatial).sqrt();
            if c[0] <= 0.0 || (c[0] - x0).abs() > SNAP_TOLERANCE * x0 {
                return Err(Error::InvalidArgument(format!("{coords:?} is not on the upper hyperboloid of scale {scale}")));
            }
            c[0] = x0;
        }
        _ => {}
    }
    m.point(c)
}

/// Start points, defaulting to the base point.
pub fn points_or_origin(m: &ManifoldModel, pts: &[Vec<f64>]) -> Result<Vec<Point>> {
    if pts.is_empty() {
        return Ok(vec![m.origin()]);
    }
    pts.iter().map(|p| point_on(m, p)).collect()
}

/// How `P_t` and `(Δ + σ)^{-1}` act on a field in closed form.
#[derive(Clone, Debug)]
enum Exact {
    /// `Δf = λf`
    Eigen(f64),
    /// `(a·x)²` on Euclidean space, with `|a|²`.
    Square(f64),
    Trig(TrigPolynomial),
    Spherical(SphericalExpansion, f64),
    None,
}

pub struct BuiltField {
    pub field: Box<dyn ScalarField>,
    exact: Exact,
}

fn direction(m: &ManifoldModel, dir: &[f64]) -> Result<Vec<f64>> {
    if dir.len() != m.ambient_dim() {
        return Err(Error::InvalidArgument(format!(
            "direction has {} components, {} needs {}",
            dir.len(),
            m.name(),
            m.ambient_dim()
        )));
    }
    Ok(dir.to_vec())
}

fn center(m: &ManifoldModel, c: &Option<Vec<f64>>) -> Result<Vec<f64>> {
    match c {
        Some(c) => Ok(point_on(m, c)?.coords),
        None => Ok(m.origin().coords),
    }
}

pub fn build_field(m: &ManifoldModel, spec: &FieldSpec) -> Result<BuiltField> {
    let norm_sq = |a: &[f64]| a.iter().map(|v| v * v).sum::<f64>();
    let (field, exact): (Box<dyn ScalarField>, Exact) = match spec {
        FieldSpec::Sin { direction: d } | FieldSpec::Cos { direction: d } => {
            let a = direction(m, d)?;
            let (label, profile) =
                if matches!(spec, FieldSpec::Sin { .. }) { ("sin", Profile::Sin) } else { ("cos", Profile::Cos) };
            let exact = match m {
                ManifoldModel::Euclidean { .. } | ManifoldModel::Torus { .. } => Exact::Eigen(norm_sq(&a)),
                _ => Exact::None,
            };
            (Box::new(Ridge::new(label, a, profile)), exact)
        }
        FieldSpec::Linear { direction: d } => {
            let a = direction(m, d)?;
            let exact = match *m {
                ManifoldModel::Euclidean { .. } => Exact::Eigen(0.0),
                ManifoldModel::Sphere { dim, radius } => Exact::Eigen(dim as f64 / (radius * radius)),
                ManifoldModel::Hyperbolic { dim, scale } => Exact::Eigen(-(dim as f64) / (scale * scale)),
                ManifoldModel::Torus { .. } => Exact::None,
            };
            (Box::new(Ridge::new("linear", a, Profile::Linear)), exact)
        }
        FieldSpec::Square { direction: d } => {
            let a = direction(m, d)?;
            let exact = match m {
                ManifoldModel::Euclidean { .. } => Exact::Square(norm_sq(&a)),
                _ => Exact::None,
            };
            (Box::new(Ridge::new("square", a, Profile::Square)), exact)
        }
        FieldSpec::Bump { center: c, radius } => {
            (Box::new(Bump { center: c.clone(), radius: *radius }), Exact::None)
        }
        FieldSpec::GaussianBump { center: c, width } => {
            (Box::new(gaussian_bump(m, &center(m, c)?, *width)?), Exact::None)
        }
        FieldSpec::Trig { degree, seed } => {
            let ManifoldModel::Torus { dim } = *m else {
                return Err(Error::Unsupported("trig polynomials live on tori".into()));
            };
            let u = TrigPolynomial::random(dim, *degree, &mut PathRng::new(*seed, 0, false));
            (Box::new(u.clone()), Exact::Trig(u))
        }
        FieldSpec::Spherical { degree, seed } => {
            let ManifoldModel::Sphere { dim: 2, radius } = *m else {
                return Err(Error::Unsupported("spherical expansions live on the 2-sphere".into()));
            };
            let u = SphericalExpansion::random(*degree, &mut PathRng::new(*seed, 0, false));
            (Box::new(u.clone()), Exact::Spherical(u, radius))
        }
    };
    field.supports(m)?;
    Ok(BuiltField { field, exact })
}

/// A field multiplied by a constant.
#[derive(Debug)]
struct Scaled {
    inner: Box<dyn ScalarField>,
    factor: f64,
}

impl ScalarField for Scaled {
    fn name(&self) -> String {
        format!("{} x {}", self.factor, self.inner.name())
    }
    fn eval(&self, m: &ManifoldModel, x: &[f64]) -> f64 {
        self.factor * self.inner.eval(m, x)
    }
    fn differential(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.inner.differential(m, x)?.into_iter().map(|v| self.factor * v).collect())
    }
    fn hessian(&self, m: &ManifoldModel, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.inner.hessian(m, x)?.into_iter().map(|v| self.factor * v).collect())
    }
    fn sup_bound(&self) -> Option<f64> {
        self.inner.sup_bound().map(|b| b * self.factor.abs())
    }
    fn supports(&self, m: &ManifoldModel) -> Result<()> {
        self.inner.supports(m)
    }
}

pub fn build_potential(m: &ManifoldModel, spec: &PotentialSpec) -> Result<Box<dyn ScalarField>> {
    let v: Box<dyn ScalarField> = match spec {
        PotentialSpec::Constant { value } => Box::new(Constant(*value)),
        PotentialSpec::CurvatureNormSquared {} => Box::new(CurvatureNormSquared::new(m)?),
        PotentialSpec::Bump { center: c, radius, amplitude } => {
            Box::new(Scaled { inner: Box::new(Bump { center: c.clone(), radius: *radius }), factor: *amplitude })
        }
        PotentialSpec::GaussianBump { center: c, width, amplitude } => Box::new(Scaled {
            inner: Box::new(gaussian_bump(m, &center(m, c)?, *width)?),
            factor: *amplitude,
        }),
    };
    v.supports(m)?;
    Ok(v)
}

fn contract(h: &[f64], d: usize, v: &[f64], w: &[f64]) -> f64 {
    (0..d).map(|i| (0..d).map(|j| v[i] * h[i * d + j] * w[j]).sum::<f64>()).sum()
}

fn frame_hessian(f: &dyn ScalarField, m: &ManifoldModel, x: &Point) -> Option<Vec<f64>> {
    let frame = m.frame_at(&x.coords);
    let d = m.dim();
    let h = hessian_in_frame(f, m, &x.coords, &frame)?;
    Some((0..d * d).map(|k| h[(k / d, k % d)]).collect())
}

fn frame_gradient(f: &dyn ScalarField, m: &ManifoldModel, x: &Point) -> Option<Vec<f64>> {
    let frame = m.frame_at(&x.coords);
    gradient_in_frame(f, m, &x.coords, &frame)
}

impl BuiltField {
    /// Whether closed-form references are available.
    pub fn has_reference(&self) -> bool {
        !matches!(self.exact, Exact::None)
    }

    /// `P_t f(x)`.
    pub fn pt(&self, m: &ManifoldModel, x: &Point, t: f64) -> Option<f64> {
        let f0 = self.field.eval(m, &x.coords);
        match &self.exact {
            Exact::Eigen(l) => Some((-l * t).exp() * f0),
            Exact::Square(a2) => Some(f0 + 2.0 * t * a2),
            Exact::Trig(u) => Some(u.map_spectrum(|l| (-l * t).exp()).value(&x.coords)),
            Exact::Spherical(u, r) => Some(u.map_spectrum(*r, |l| (-l * t).exp()).value(&x.coords, *r)),
            Exact::None => None,
        }
    }

    /// `dP_t f(v)` with `v` in frame coordinates at `x`.
    pub fn grad(&self, m: &ManifoldModel, x: &Point, v: &[f64], t: f64) -> Option<f64> {
        let dot = |g: Vec<f64>| g.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        match &self.exact {
            Exact::Eigen(l) => Some((-l * t).exp() * dot(frame_gradient(self.field.as_ref(), m, x)?)),
            Exact::Square(_) => Some(dot(frame_gradient(self.field.as_ref(), m, x)?)),
            Exact::Trig(u) => Some(dot(frame_gradient(&u.map_spectrum(|l| (-l * t).exp()), m, x)?)),
            Exact::Spherical(u, r) => Some(dot(frame_gradient(&u.map_spectrum(*r, |l| (-l * t).exp()), m, x)?)),
            Exact::None => None,
        }
    }

    /// `Hess P_t f(v, w)`.
    pub fn hess(&self, m: &ManifoldModel, x: &Point, v: &[f64], w: &[f64], t: f64) -> Option<f64> {
        self.hess_with(m, x, v, w, |l| (-l * t).exp(), 1.0)
    }

    /// `Hess (Δ + σ)^{-1} f (v, w)`.
    pub fn green_hess(&self, m: &ManifoldModel, x: &Point, v: &[f64], w: &[f64], sigma: f64) -> Option<f64> {
        self.hess_with(m, x, v, w, |l| 1.0 / (l + sigma), 1.0 / sigma)
    }

    /// Hessian of `g(Δ) f`; `square_factor` is the multiplier of the
    /// Hessian of `(a·x)²`, whose image is `c·(a·x)² + const`.
    fn hess_with(
        &self,
        m: &ManifoldModel,
        x: &Point,
        v: &[f64],
        w: &[f64],
        g: impl Fn(f64) -> f64,
        square_factor: f64,
    ) -> Option<f64> {
        let d = m.dim();
        let h = match &self.exact {
            Exact::Eigen(l) => frame_hessian(self.field.as_ref(), m, x)?.into_iter().map(|v| g(*l) * v).collect(),
            Exact::Square(_) => {
                frame_hessian(self.field.as_ref(), m, x)?.into_iter().map(|v| square_factor * v).collect()
            }
            Exact::Trig(u) => frame_hessian(&u.map_spectrum(g), m, x)?,
            Exact::Spherical(u, r) => frame_hessian(&u.map_spectrum(*r, g), m, x)?,
            Exact::None => return None,
        };
        Some(contract(&h, d, v, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_green_reference_matches_the_resolvent() {
        let m = ManifoldModel::euclidean(2).unwrap();
        let f = build_field(&m, &FieldSpec::Square { direction: vec![1.0, 0.0] }).unwrap();
        let x = m.origin();
        assert!((f.green_hess(&m, &x, &[1.0, 0.0], &[1.0, 0.0], 4.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((f.pt(&m, &x, 0.25).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sphere_points_are_snapped() {
        let m = ManifoldModel::sphere(2, 1.0).unwrap();
        assert!(point_on(&m, &[0.0, 0.6, 0.8 + 1e-9]).is_ok());
        assert!(point_on(&m, &[0.0, 0.6, 0.9]).is_err());
    }

    #[test]
    fn torus_sine_is_an_eigenfunction() {
        let m = ManifoldModel::torus(2).unwrap();
        let f = build_field(&m, &FieldSpec::Sin { direction: vec![1.0, 0.0] }).unwrap();
        let x = m.point(vec![0.3, 0.1]).unwrap();
        let g = f.grad(&m, &x, &[1.0, 0.0], 0.5).unwrap();
        assert!((g - (-0.5f64).exp() * 0.3f64.cos()).abs() < 1e-14);
    }
}
