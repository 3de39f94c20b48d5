use nalgebra::DMatrix;
use serde::Serialize;

use super::fields::{gradient_in_frame, ScalarField};
use super::{Frame, ManifoldModel, Point};
use crate::error::{invalid, Error, Result};
use crate::rng::PathRng;

const FD_STEP: f64 = 1e-4;
/// Step for curvature derivatives; the tensors are smooth and O(1), so a
/// wider step keeps round-off in the difference quotient near 1e-11.
const TENSOR_FD_STEP: f64 = 1e-3;

/// Curvature quantities at a point, in the canonical orthonormal frame.
#[derive(Clone, Debug, Serialize)]
pub struct CurvaturePackage {
    pub dim: usize,
    /// `⟨R(e_i, e_j) e_k, e_l⟩`, flattened as `[i][j][k][l]`.
    pub riemann: Vec<f64>,
    /// `Ric(e_j, e_k)`, which is also the matrix of `Ric♯`.
    pub ricci: Vec<f64>,
    /// `⟨(∇_{e_a} Ric♯) e_b, e_c⟩`, flattened as `[a][b][c]`.
    pub ricci_gradient: Vec<f64>,
    /// `⟨(d*R)(e_a, e_b), e_c⟩ = -Σ_i ⟨(∇_{e_i} R)(e_i, e_a) e_b, e_c⟩`.
    pub codifferential: Vec<f64>,
    /// `sup |R(·, v₁, v₂, ·)|_HS` over unit `v₁, v₂`.
    pub r_opnorm: f64,
}

impl CurvaturePackage {
    pub fn riemann(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = self.dim;
        self.riemann[((i * d + j) * d + k) * d + l]
    }

    pub fn ricci(&self, j: usize, k: usize) -> f64 {
        self.ricci[j * self.dim + k]
    }

    pub fn ricci_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.ricci)
    }

    /// Frame components of `R(a, b) c`.
    pub fn apply(&self, a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                let ab = a[i] * b[j];
                if ab == 0.0 {
                    continue;
                }
                for k in 0..d {
                    let abc = ab * c[k];
                    for (l, o) in out.iter_mut().enumerate() {
                        *o += abc * self.riemann(i, j, k, l);
                    }
                }
            }
        }
        out
    }

    /// Hilbert–Schmidt norm of `R(·, v₁, v₂, ·)`.
    pub fn hs_slice(&self, v1: &[f64], v2: &[f64]) -> f64 {
        let d = self.dim;
        let mut sum = 0.0;
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    for k in 0..d {
                        s += v1[j] * v2[k] * self.riemann(a, j, k, b);
                    }
                }
                sum += s * s;
            }
        }
        sum.sqrt()
    }
}

/// Riemann tensor in `frame` from the Gauss equation of the embedding.
fn riemann_in_frame(m: &ManifoldModel, frame: &Frame) -> Vec<f64> {
    let d = frame.dim();
    let (radius, eps) = match *m {
        ManifoldModel::Sphere { radius, .. } => (radius, 1.0),
        ManifoldModel::Hyperbolic { scale, .. } => (scale, -1.0),
        _ => return vec![0.0; d.pow(4)],
    };
    // scalar second fundamental form with respect to the unit normal x/radius
    let h = DMatrix::from_fn(d, d, |i, j| m.inner(&frame.vectors[i], &frame.vectors[j]) / radius);
    let mut r = vec![0.0; d.pow(4)];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    r[((i * d + j) * d + k) * d + l] = eps * (h[(j, k)] * h[(i, l)] - h[(i, k)] * h[(j, l)]);
                }
            }
        }
    }
    r
}

fn ricci_from_riemann(r: &[f64], d: usize) -> Vec<f64> {
    let mut ric = vec![0.0; d * d];
    for j in 0..d {
        for k in 0..d {
            ric[j * d + k] = (0..d).map(|i| r[((i * d + j) * d + k) * d + i]).sum();
        }
    }
    ric
}

/// Moves `x` and its frame along `exp(s e_a)` with parallel transport.
fn shifted(m: &ManifoldModel, x: &[f64], frame: &Frame, a: usize, s: f64) -> (Vec<f64>, Frame) {
    let mut y = x.to_vec();
    let mut vecs = frame.vectors.clone();
    let xi: Vec<f64> = frame.vectors[a].iter().map(|c| c * s).collect();
    m.exp_transport(&mut y, &xi, &mut vecs);
    (y, Frame { vectors: vecs })
}

fn unit_directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let mut rng = PathRng::new(0x5eed_cafe, d as u64, false);
            (0..count)
                .map(|i| {
                    let mut v = vec![0.0; d];
                    if i < d {
                        v[i] = 1.0;
                    } else {
                        rng.fill_normals(&mut v);
                    }
                    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                    v.iter_mut().for_each(|c| *c /= n);
                    v
                })
                .collect()
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.iter_mut().for_each(|c| *c /= n);
}

/// Maximizes `|R(·, v₁, v₂, ·)|_HS` over a direction grid, then refines the
/// best pair by a shrinking pattern search.
fn curvature_opnorm(pkg: &CurvaturePackage) -> f64 {
    let d = pkg.dim;
    if d == 1 {
        return 0.0;
    }
    let dirs = unit_directions(d, 64);
    let mut best = (0.0, dirs[0].clone(), dirs[0].clone());
    for v1 in &dirs {
        for v2 in &dirs {
            let s = pkg.hs_slice(v1, v2);
            if s > best.0 {
                best = (s, v1.clone(), v2.clone());
            }
        }
    }
    let (mut val, mut v1, mut v2) = best;
    let mut step = 0.05;
    while step > 1e-9 {
        let mut improved = false;
        for which in 0..2 {
            for i in 0..d {
                for sign in [-1.0, 1.0] {
                    let (mut c1, mut c2) = (v1.clone(), v2.clone());
                    let target = if which == 0 { &mut c1 } else { &mut c2 };
                    target[i] += sign * step;
                    normalize(target);
                    let s = pkg.hs_slice(&c1, &c2);
                    if s > val {
                        (val, v1, v2) = (s, c1, c2);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    val
}

/// Riemann, Ricci, `∇Ric♯`, `d*R` and `|R|` at `x` in `frame`. Derivatives
/// are central differences along geodesics with parallel-transported frames.
pub fn curvature_package(m: &ManifoldModel, x: &Point, frame: &Frame) -> Result<CurvaturePackage> {
    m.validate()?;
    if x.coords.len() != m.ambient_dim() || m.constraint_residual(&x.coords) > 1e-8 {
        return invalid("curvature_package: point is not on the model");
    }
    if frame.dim() != m.dim() || frame.orthonormality_defect(m) > 1e-8 {
        return invalid("curvature_package: frame is not orthonormal");
    }
    let mut pkg = curvature_tensors(m, &x.coords, frame);
    pkg.r_opnorm = curvature_opnorm(&pkg);
    if pkg.riemann.iter().chain(&pkg.ricci_gradient).chain(&pkg.codifferential).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("curvature tensor".into()));
    }
    Ok(pkg)
}

/// Everything in [`curvature_package`] except `|R|`.
pub(crate) fn curvature_tensors(m: &ManifoldModel, x: &[f64], frame: &Frame) -> CurvaturePackage {
    let d = m.dim();
    let riemann = riemann_in_frame(m, frame);
    let ricci = ricci_from_riemann(&riemann, d);
    let mut ricci_gradient = vec![0.0; d * d * d];
    let mut codifferential = vec![0.0; d * d * d];
    for a in 0..d {
        let (_, fp) = shifted(m, x, frame, a, TENSOR_FD_STEP);
        let (_, fm) = shifted(m, x, frame, a, -TENSOR_FD_STEP);
        let rp = riemann_in_frame(m, &fp);
        let rm = riemann_in_frame(m, &fm);
        let ricp = ricci_from_riemann(&rp, d);
        let ricm = ricci_from_riemann(&rm, d);
        for bc in 0..d * d {
            ricci_gradient[a * d * d + bc] = (ricp[bc] - ricm[bc]) / (2.0 * TENSOR_FD_STEP);
        }
        // (∇_a R)(e_a, e_b) e_c, accumulated into -Σ_a
        for b in 0..d {
            for c in 0..d {
                for l in 0..d {
                    let idx = ((a * d + b) * d + c) * d + l;
                    codifferential[(b * d + c) * d + l] -= (rp[idx] - rm[idx]) / (2.0 * TENSOR_FD_STEP);
                }
            }
        }
    }
    CurvaturePackage { dim: d, riemann, ricci, ricci_gradient, codifferential, r_opnorm: 0.0 }
}

/// Norm of `-dΔf - tr ∇²(df) + df(Ric♯)` at `x`, in the canonical frame.
/// This vanishes by the Weitzenböck identity for the nonnegative `Δ`.
pub fn commutation_residual<F: ScalarField + ?Sized>(m: &ManifoldModel, f: &F, x: &Point) -> Result<f64> {
    f.supports(m)?;
    let d = m.dim();
    let frame = m.frame_at(&x.coords);
    let eps = FD_STEP;
    let df_at = |y: &[f64], fr: &Frame| -> Result<Vec<f64>> {
        gradient_in_frame(f, m, y, fr).ok_or_else(|| Error::Unsupported(format!("{} has no differential", f.name())))
    };
    let lap_at = |y: &[f64]| -> Result<f64> {
        f.laplacian(m, y).ok_or_else(|| Error::Unsupported(format!("{} has no Laplacian", f.name())))
    };
    let df0 = df_at(&x.coords, &frame)?;
    let pkg = curvature_package(m, x, &frame)?;

    let mut residual = vec![0.0; d];
    for i in 0..d {
        let (xp, fp) = shifted(m, &x.coords, &frame, i, eps);
        let (xm, fm) = shifted(m, &x.coords, &frame, i, -eps);
        // -d(Δf)(e_i)
        residual[i] -= (lap_at(&xp)? - lap_at(&xm)?) / (2.0 * eps);
        // -Σ_i ∇²_{e_i e_i} df: second derivative of frame components along
        // the geodesic in direction e_i
        let gp = df_at(&xp, &fp)?;
        let gm = df_at(&xm, &fm)?;
        for a in 0..d {
            residual[a] -= (gp[a] - 2.0 * df0[a] + gm[a]) / (eps * eps);
        }
        residual[i] += (0..d).map(|b| pkg.ricci(i, b) * df0[b]).sum::<f64>();
    }
    Ok(residual.iter().map(|r| r * r).sum::<f64>().sqrt())
}
