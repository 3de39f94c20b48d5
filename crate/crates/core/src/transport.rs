//! Geodesic random walk with parallel-transported frames, damped transport
//! `Q` and the curvature process `W`.
//!
//! `Q` and `W` are stored in coordinates of the transported frame, in which
//! the covariant derivative along the path becomes the ordinary one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{curvature_tensors, Frame, ManifoldModel, Point, TangentVector};
use crate::mc::steps_for;
use crate::rng::PathRng;

/// How curvature enters the `Q` and `W` recursions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportRule {
    /// Closed-form constant-curvature tensors, exact exponential damping.
    #[default]
    Analytic,
    /// Contractions of the numerically assembled curvature tensors at every
    /// node, with a matrix-exponential damping step.
    Tensor,
}

/// One discretized Brownian trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub frames: Vec<Frame>,
    /// Anti-development increments in frame coordinates, variance `2h`.
    pub increments: Vec<Vec<f64>>,
    pub seed: u64,
    pub path_index: u64,
    pub h: f64,
}

/// Streaming state of one path: position and transported frame.
#[derive(Clone, Debug)]
pub struct Walker<'a> {
    model: &'a ManifoldModel,
    pub x: Vec<f64>,
    pub frame: Vec<Vec<f64>>,
    xi: Vec<f64>,
}

impl<'a> Walker<'a> {
    pub fn new(model: &'a ManifoldModel, x0: &[f64]) -> Self {
        let frame = model.frame_at(x0).vectors;
        Walker { model, x: x0.to_vec(), frame, xi: vec![0.0; x0.len()] }
    }

    /// Moves along `Σ frame_i · db_i` and transports the frame.
    pub fn step(&mut self, db: &[f64]) -> Result<()> {
        let m = self.model;
        self.xi.iter_mut().for_each(|v| *v = 0.0);
        for (c, e) in db.iter().zip(&self.frame) {
            self.xi.iter_mut().zip(e).for_each(|(v, ei)| *v += c * ei);
        }
        if m.is_flat() {
            m.exp_transport(&mut self.x, &self.xi, &mut []);
        } else {
            m.exp_transport(&mut self.x, &self.xi, &mut self.frame);
            m.orthonormalize(&self.x, &mut self.frame);
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("path position {:?}", self.x)));
        }
        Ok(())
    }

    pub fn frame(&self) -> Frame {
        Frame { vectors: self.frame.clone() }
    }
}

/// Draws the increments of one step (variance `2h` per coordinate).
pub(crate) fn draw_increment(rng: &mut PathRng, h: f64, out: &mut [f64]) {
    rng.fill_normals(out);
    let s = (2.0 * h).sqrt();
    out.iter_mut().for_each(|v| *v *= s);
}

/// Simulates one path of the geodesic random walk. Deterministic in
/// `(seed, path_index, h)`.
pub fn sample_path(m: &ManifoldModel, x0: &Point, t: f64, h: f64, seed: u64, path_index: u64) -> Result<PathRecord> {
    m.validate()?;
    let (n, h) = steps_for(t, h)?;
    if m.constraint_residual(&x0.coords) > 1e-8 {
        return invalid("path start is not on the model");
    }
    let d = m.dim();
    let mut rng = PathRng::for_path(seed, path_index, false);
    let mut walker = Walker::new(m, &x0.coords);
    let mut rec = PathRecord {
        times: (0..=n).map(|k| k as f64 * h).collect(),
        points: vec![x0.clone()],
        frames: vec![walker.frame()],
        increments: Vec::with_capacity(n),
        seed,
        path_index,
        h,
    };
    let mut db = vec![0.0; d];
    for _ in 0..n {
        draw_increment(&mut rng, h, &mut db);
        walker.step(&db)?;
        rec.increments.push(db.clone());
        rec.points.push(Point { coords: walker.x.clone() });
        rec.frames.push(walker.frame());
    }
    Ok(rec)
}

/// Row-major `d × d` matrix helpers.
fn matvec(a: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        out[i] = (0..d).map(|j| a[i * d + j] * v[j]).sum();
    }
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                c[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    c
}

/// Curvature data at one node, in the transported frame.
pub(crate) enum NodeCurvature {
    Constant { kappa: f64, damping: f64 },
    Tensor { pkg: crate::geometry::CurvaturePackage, damping: Vec<f64> },
}

impl NodeCurvature {
    pub(crate) fn at(m: &ManifoldModel, rule: TransportRule, x: &[f64], frame: &[Vec<f64>], h: f64) -> Self {
        match rule {
            TransportRule::Analytic => {
                NodeCurvature::Constant { kappa: m.sectional_curvature(), damping: (-m.ricci_constant() * h).exp() }
            }
            TransportRule::Tensor => {
                let fr = Frame { vectors: frame.to_vec() };
                let pkg = curvature_tensors(m, x, &fr);
                let ric = DMatrix::from_row_slice(pkg.dim, pkg.dim, &pkg.ricci);
                let eig = ric.symmetric_eigen();
                let exp_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (-l * h).exp()));
                let e = &eig.eigenvectors * exp_diag * eig.eigenvectors.transpose();
                let damping = (0..pkg.dim * pkg.dim).map(|k| e[(k / pkg.dim, k % pkg.dim)]).collect();
                NodeCurvature::Tensor { pkg, damping }
            }
        }
    }

    /// `Q ← exp(-h Ric♯) Q`.
    pub(crate) fn damp_matrix(&self, q: &mut [f64]) {
        match self {
            NodeCurvature::Constant { damping, .. } => q.iter_mut().for_each(|v| *v *= damping),
            NodeCurvature::Tensor { damping, pkg } => {
                let out = matmul(damping, q, pkg.dim);
                q.copy_from_slice(&out);
            }
        }
    }

    /// `w ← exp(-h Ric♯) w`.
    pub(crate) fn damp_vector(&self, w: &mut [f64]) {
        match self {
            NodeCurvature::Constant { damping, .. } => w.iter_mut().for_each(|v| *v *= damping),
            NodeCurvature::Tensor { damping, .. } => {
                let old = w.to_vec();
                matvec(damping, &old, w);
            }
        }
    }

    /// Adds `R(a, b) c - h (d*R + ∇Ric♯)(b, c)` to `out`.
    pub(crate) fn add_w_increment(&self, a: &[f64], b: &[f64], c: &[f64], h: f64, out: &mut [f64]) {
        match self {
            NodeCurvature::Constant { kappa, .. } => {
                // R(a, b)c = κ(⟨b, c⟩a - ⟨a, c⟩b); the drift vanishes
                let bc: f64 = b.iter().zip(c).map(|(x, y)| x * y).sum();
                let ac: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
                for i in 0..out.len() {
                    out[i] += kappa * (bc * a[i] - ac * b[i]);
                }
            }
            NodeCurvature::Tensor { pkg, .. } => {
                let r = pkg.apply(a, b, c);
                let d = pkg.dim;
                for l in 0..d {
                    let mut drift = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            let bc = b[i] * c[j];
                            drift += bc * (pkg.codifferential[(i * d + j) * d + l] + pkg.ricci_gradient[(i * d + j) * d + l]);
                        }
                    }
                    out[l] += r[l] - h * drift;
                }
            }
        }
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut q = vec![0.0; d * d];
    (0..d).for_each(|i| q[i * d + i] = 1.0);
    q
}

/// `Q` at every node of a recorded path (row-major, transported-frame
/// coordinates).
pub fn damped_transport(m: &ManifoldModel, path: &PathRecord, rule: TransportRule) -> Vec<DMatrix<f64>> {
    let d = m.dim();
    let mut q = identity(d);
    let mut out = vec![DMatrix::from_row_slice(d, d, &q)];
    for k in 0..path.increments.len() {
        let node = NodeCurvature::at(m, rule, &path.points[k].coords, &path.frames[k].vectors, path.h);
        node.damp_matrix(&mut q);
        out.push(DMatrix::from_row_slice(d, d, &q));
    }
    out
}

/// `W(v, w)` at every node, in transported-frame coordinates. `v` and `w`
/// are based at the path start.
pub fn w_process(
    m: &ManifoldModel,
    path: &PathRecord,
    q: &[DMatrix<f64>],
    v: &TangentVector,
    w: &TangentVector,
    rule: TransportRule,
) -> Result<Vec<Vec<f64>>> {
    let d = m.dim();
    if q.len() != path.points.len() {
        return invalid("damped transport does not match the path");
    }
    let f0 = &path.frames[0];
    let vc = f0.coords(m, &v.comps);
    let wc = f0.coords(m, &w.comps);
    let mut cur = vec![0.0; d];
    let mut out = vec![cur.clone()];
    for k in 0..path.increments.len() {
        let node = NodeCurvature::at(m, rule, &path.points[k].coords, &path.frames[k].vectors, path.h);
        let qv: Vec<f64> = (0..d).map(|i| (0..d).map(|j| q[k][(i, j)] * vc[j]).sum()).collect();
        let qw: Vec<f64> = (0..d).map(|i| (0..d).map(|j| q[k][(i, j)] * wc[j]).sum()).collect();
        node.add_w_increment(&path.increments[k], &qv, &qw, path.h, &mut cur);
        node.damp_vector(&mut cur);
        out.push(cur.clone());
    }
    Ok(out)
}

/// Per-path transport state for estimators: `Q` and a set of `W(e_i, e_j)`
/// components tracked along a [`Walker`].
#[derive(Clone, Debug)]
pub(crate) struct TransportState {
    pub d: usize,
    pub q: Vec<f64>,
    /// `W(a_p, b_p)` for each requested pair, frame coordinates.
    pub w: Vec<Vec<f64>>,
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    qa: Vec<f64>,
    qb: Vec<f64>,
}

impl TransportState {
    pub fn new(d: usize, pairs: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        TransportState { d, q: identity(d), w: vec![vec![0.0; d]; pairs.len()], pairs, qa: vec![0.0; d], qb: vec![0.0; d] }
    }

    /// Advances `Q` and `W` across one step with increment `db` taken at
    /// the node described by `node`.
    pub fn advance(&mut self, node: &NodeCurvature, db: &[f64], h: f64) {
        for (p, (a, b)) in self.pairs.iter().enumerate() {
            matvec(&self.q, a, &mut self.qa);
            matvec(&self.q, b, &mut self.qb);
            node.add_w_increment(db, &self.qa, &self.qb, h, &mut self.w[p]);
            node.damp_vector(&mut self.w[p]);
        }
        node.damp_matrix(&mut self.q);
    }

    /// `Q v` for frame coordinates `v`.
    pub fn apply_q(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        matvec(&self.q, v, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_reproduce_paths_bitwise() {
        let m = ManifoldModel::sphere(2, 1.0).unwrap();
        let a = sample_path(&m, &m.origin(), 0.5, 0.01, 7, 3).unwrap();
        let b = sample_path(&m, &m.origin(), 0.5, 0.01, 7, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&m, &m.origin(), 0.5, 0.01, 7, 4).unwrap();
        assert_ne!(a.points.last(), c.points.last());
    }

    #[test]
    fn non_integer_step_count_rejected() {
        let m = ManifoldModel::euclidean(1).unwrap();
        assert!(sample_path(&m, &m.origin(), 1.0, 0.3, 1, 0).is_err());
    }

    #[test]
    fn flat_transport_is_trivial() {
        let m = ManifoldModel::torus(2).unwrap();
        let path = sample_path(&m, &m.origin(), 1.0, 0.05, 2, 0).unwrap();
        let q = damped_transport(&m, &path, TransportRule::Analytic);
        assert!(q.iter().all(|qk| *qk == DMatrix::identity(2, 2)));
        let v = m.tangent_from_frame(&m.origin(), &[1.0, 0.0]);
        let w = m.tangent_from_frame(&m.origin(), &[0.0, 1.0]);
        let ws = w_process(&m, &path, &q, &v, &w, TransportRule::Analytic).unwrap();
        assert!(ws.iter().all(|x| x.iter().all(|c| *c == 0.0)));
    }
}
