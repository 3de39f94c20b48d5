use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::ManifoldModel;
use crate::quad::gauss_legendre_interval;

/// Grid resolution. `extent` is the box half-width on Euclidean space and
/// the geodesic radius cutoff on the hyperbolic plane (ignored elsewhere).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub extent: Option<f64>,
}

impl GridSpec {
    pub fn new(resolution: usize) -> Self {
        GridSpec { resolution, extent: None }
    }

    pub fn with_extent(mut self, extent: f64) -> Self {
        self.extent = Some(extent);
        self
    }
}

/// Nodes (ambient coordinates) and positive weights for the volume measure.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub model: ManifoldModel,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Trigonometric / spherical-harmonic degree integrated exactly.
    pub degree: usize,
    /// Radius of the truncated region on noncompact models.
    pub truncation_radius: Option<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ wᵢ f(xᵢ)`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    pub fn values(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|x| f(x)).collect()
    }
}

fn product_indices(n: usize, d: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n.pow(d as u32)).map(move |mut idx| {
        (0..d)
            .map(|_| {
                let i = idx % n;
                idx /= n;
                i
            })
            .collect()
    })
}

/// Builds a quadrature grid for the volume measure of `m`.
///
/// * torus: uniform `n^d` grid, exact for trigonometric degree `< n`;
/// * 2-sphere: Gauss–Legendre in `z` times uniform longitude, exact for
///   harmonics of degree `<= n`;
/// * circle: uniform;
/// * Euclidean: midpoint rule on `[-L, L]^d`, `L = extent` (default 10);
/// * hyperbolic plane: geodesic polar grid around the base point, radius
///   `extent` (default 12), Gauss–Legendre panels in the radius.
pub fn quadrature_grid(m: &ManifoldModel, spec: &GridSpec) -> Result<QuadratureGrid> {
    let n = spec.resolution;
    if n < 2 {
        return invalid("grid resolution must be at least 2");
    }
    let d = m.dim();
    match *m {
        ManifoldModel::Torus { .. } => {
            if d > 3 {
                return Err(Error::Unsupported("torus grids are limited to d <= 3".into()));
            }
            let h = TAU / n as f64;
            let nodes = product_indices(n, d).map(|ix| ix.iter().map(|i| *i as f64 * h).collect()).collect();
            Ok(QuadratureGrid {
                model: *m,
                nodes,
                weights: vec![h.powi(d as i32); n.pow(d as u32)],
                degree: n - 1,
                truncation_radius: None,
            })
        }
        ManifoldModel::Sphere { dim: 1, radius } => {
            let h = TAU / n as f64;
            let nodes = (0..n)
                .map(|i| {
                    let a = i as f64 * h;
                    vec![radius * a.cos(), radius * a.sin()]
                })
                .collect();
            Ok(QuadratureGrid {
                model: *m,
                nodes,
                weights: vec![radius * h; n],
                degree: n - 1,
                truncation_radius: None,
            })
        }
        ManifoldModel::Sphere { dim: 2, radius } => {
            // products of two degree-n harmonics have degree 2n
            let nz = n + 1;
            let nphi = 2 * n + 2;
            let (zs, wz) = gauss_legendre_interval(nz, -1.0, 1.0);
            let hphi = TAU / nphi as f64;
            let mut nodes = Vec::with_capacity(nz * nphi);
            let mut weights = Vec::with_capacity(nz * nphi);
            for (z, w) in zs.iter().zip(&wz) {
                let s = (1.0 - z * z).sqrt();
                for j in 0..nphi {
                    let phi = (j as f64 + 0.5) * hphi;
                    nodes.push(vec![radius * s * phi.cos(), radius * s * phi.sin(), radius * z]);
                    weights.push(w * hphi * radius * radius);
                }
            }
            Ok(QuadratureGrid { model: *m, nodes, weights, degree: n, truncation_radius: None })
        }
        ManifoldModel::Euclidean { .. } => {
            if d > 3 {
                return Err(Error::Unsupported("Euclidean grids are limited to d <= 3".into()));
            }
            let half = spec.extent.unwrap_or(10.0);
            let h = 2.0 * half / n as f64;
            let nodes =
                product_indices(n, d).map(|ix| ix.iter().map(|i| -half + (*i as f64 + 0.5) * h).collect()).collect();
            Ok(QuadratureGrid {
                model: *m,
                nodes,
                weights: vec![h.powi(d as i32); n.pow(d as u32)],
                degree: 0,
                truncation_radius: Some(half),
            })
        }
        ManifoldModel::Hyperbolic { dim: 2, scale } => {
            let cutoff = spec.extent.unwrap_or(12.0);
            let panels = (cutoff.ceil() as usize).max(1) * 2;
            let per = 8;
            let nr = panels;
            // sinh r growth is resolved by panels of width at most 1/2
            let nphi = 2 * n;
            let hphi = TAU / nphi as f64;
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            let width = cutoff / nr as f64;
            for p in 0..nr {
                let (rs, wr) = gauss_legendre_interval(per.max(n / nr + 1), p as f64 * width, (p + 1) as f64 * width);
                for (r, w) in rs.iter().zip(&wr) {
                    let (sh, ch) = ((r / scale).sinh(), (r / scale).cosh());
                    for j in 0..nphi {
                        let phi = (j as f64 + 0.5) * hphi;
                        nodes.push(vec![scale * ch, scale * sh * phi.cos(), scale * sh * phi.sin()]);
                        weights.push(w * hphi * scale * sh);
                    }
                }
            }
            Ok(QuadratureGrid { model: *m, nodes, weights, degree: 0, truncation_radius: Some(cutoff) })
        }
        _ => Err(Error::Unsupported(format!("no quadrature grid for {}", m.name()))),
    }
}

/// `(Σ wᵢ |fᵢ|^p)^{1/p}`, or `max |fᵢ|` for `p = ∞`. Values are rescaled by
/// their maximum so that tiny fields do not underflow.
pub fn lp_norm(grid: &QuadratureGrid, field: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return invalid(format!("Lp exponent must be >= 1, got {p}"));
    }
    if field.len() != grid.len() {
        return invalid("field length does not match the grid");
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field values on grid".into()));
    }
    let peak = field.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if p.is_infinite() || peak == 0.0 {
        return Ok(peak);
    }
    let sum: f64 = field.iter().zip(&grid.weights).map(|(v, w)| w * (v.abs() / peak).powf(p)).sum();
    Ok(peak * sum.powf(1.0 / p))
}
