//! Band-limited eigenfunction expansions: trigonometric polynomials on flat
//! tori and real spherical-harmonic expansions on the 2-sphere.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::rng::PathRng;

/// `cos·cos(k·x) + sin·sin(k·x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigMode {
    pub k: Vec<i64>,
    pub cos: f64,
    pub sin: f64,
}

impl TrigMode {
    fn phase(&self, x: &[f64]) -> (f64, f64) {
        let arg: f64 = self.k.iter().zip(x).map(|(k, u)| *k as f64 * u).sum();
        arg.sin_cos()
    }

    /// Eigenvalue `|k|^2` of the nonnegative Laplacian.
    pub fn eigenvalue(&self) -> f64 {
        self.k.iter().map(|k| (k * k) as f64).sum()
    }
}

/// A trigonometric polynomial on `T^d = (R / 2πZ)^d`. Modes are expected to
/// be distinct and taken from a half-space (no `k` together with `-k`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    pub modes: Vec<TrigMode>,
}

/// Whether `k` is the canonical representative of `{k, -k}`.
fn in_half_space(k: &[i64]) -> bool {
    match k.iter().find(|c| **c != 0) {
        None => true,
        Some(c) => *c > 0,
    }
}

impl TrigPolynomial {
    /// All modes with `max |k_i| <= degree` in a half-space, with standard
    /// normal coefficients (the constant mode carries no sine part).
    pub fn random(dim: usize, degree: usize, rng: &mut PathRng) -> Self {
        let deg = degree as i64;
        let side = 2 * deg + 1;
        let total = (side as usize).pow(dim as u32);
        let mut modes = Vec::new();
        for idx in 0..total {
            let mut rest = idx;
            let k: Vec<i64> = (0..dim)
                .map(|_| {
                    let c = (rest % side as usize) as i64 - deg;
                    rest /= side as usize;
                    c
                })
                .collect();
            if !in_half_space(&k) {
                continue;
            }
            let zero = k.iter().all(|c| *c == 0);
            let cos = rng.normal();
            let sin = if zero { 0.0 } else { rng.normal() };
            modes.push(TrigMode { k, cos, sin });
        }
        TrigPolynomial { modes }
    }

    pub fn single(k: Vec<i64>, cos: f64, sin: f64) -> Self {
        TrigPolynomial { modes: vec![TrigMode { k, cos, sin }] }
    }

    pub fn degree(&self) -> usize {
        self.modes.iter().flat_map(|m| m.k.iter()).map(|k| k.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let (s, c) = m.phase(x);
                m.cos * c + m.sin * s
            })
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for m in &self.modes {
            let (s, c) = m.phase(x);
            let a = -m.cos * s + m.sin * c;
            g.iter_mut().zip(&m.k).for_each(|(gi, k)| *gi += a * *k as f64);
        }
        g
    }

    /// Row-major Hessian.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut h = vec![0.0; n * n];
        for m in &self.modes {
            let (s, c) = m.phase(x);
            let a = -(m.cos * c + m.sin * s);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += a * (m.k[i] * m.k[j]) as f64;
                }
            }
        }
        h
    }

    /// Nonnegative Laplacian.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let (s, c) = m.phase(x);
                m.eigenvalue() * (m.cos * c + m.sin * s)
            })
            .sum()
    }

    /// Applies `g(λ)` eigenvalue-wise (e.g. a resolvent or heat multiplier).
    pub fn map_spectrum(&self, g: impl Fn(f64) -> f64) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let s = g(m.eigenvalue());
                TrigMode { k: m.k.clone(), cos: s * m.cos, sin: s * m.sin }
            })
            .collect();
        TrigPolynomial { modes }
    }

    /// `‖u‖₂²` from the coefficients.
    pub fn l2_norm_sq(&self) -> f64 {
        let d = self.modes.first().map_or(0, |m| m.k.len());
        let vol = (2.0 * PI).powi(d as i32);
        self.modes
            .iter()
            .map(|m| {
                if m.k.iter().all(|c| *c == 0) {
                    vol * m.cos * m.cos
                } else {
                    vol * 0.5 * (m.cos * m.cos + m.sin * m.sin)
                }
            })
            .sum()
    }
}

/// One real spherical harmonic term `c · Y_l^m`, with `m > 0` the cosine and
/// `m < 0` the sine family; orthonormal on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalMode {
    pub l: usize,
    pub m: i64,
    pub c: f64,
}

/// Finite real spherical-harmonic expansion on the 2-sphere of radius `a`,
/// evaluated through its polynomial extension in ambient coordinates
/// `(x, y, z)` with the pole on the `z` axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalExpansion {
    pub modes: Vec<SphericalMode>,
}

/// Jets (value, first, second z-derivative) of `Q_l^m(z)` with
/// `P_l^m = (1 - z²)^{m/2} Q_l^m` (no Condon–Shortley sign), for all
/// `m <= l <= lmax`, indexed `[m][l - m]`.
fn legendre_q_table(z: f64, lmax: usize) -> Vec<Vec<[f64; 3]>> {
    let mut table = Vec::with_capacity(lmax + 1);
    let mut qmm = 1.0;
    for m in 0..=lmax {
        if m > 0 {
            qmm *= (2 * m - 1) as f64;
        }
        let mut col: Vec<[f64; 3]> = Vec::with_capacity(lmax + 1 - m);
        col.push([qmm, 0.0, 0.0]);
        if m < lmax {
            let f = (2 * m + 1) as f64;
            col.push([f * z * qmm, f * qmm, 0.0]);
        }
        for l in (m + 2)..=lmax {
            let a = (2 * l - 1) as f64;
            let b = (l + m - 1) as f64;
            let den = (l - m) as f64;
            let p1 = col[l - m - 1];
            let p2 = col[l - m - 2];
            col.push([
                (a * z * p1[0] - b * p2[0]) / den,
                (a * (p1[0] + z * p1[1]) - b * p2[1]) / den,
                (a * (2.0 * p1[1] + z * p1[2]) - b * p2[2]) / den,
            ]);
        }
        table.push(col);
    }
    table
}

fn normalization(l: usize, m: usize) -> f64 {
    let ratio: f64 = ((l - m + 1)..=(l + m)).map(|j| 1.0 / j as f64).product();
    let n = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
    if m == 0 {
        n
    } else {
        n * std::f64::consts::SQRT_2
    }
}

#[derive(Clone, Copy)]
struct Complex(f64, f64);

impl Complex {
    fn mul(self, o: Complex) -> Complex {
        Complex(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn powi(self, n: usize) -> Complex {
        (0..n).fold(Complex(1.0, 0.0), |acc, _| acc.mul(self))
    }
    fn scale(self, s: f64) -> Complex {
        Complex(self.0 * s, self.1 * s)
    }
}

/// Value, gradient `[∂x, ∂y]` and Hessian `[xx, xy, yy]` of `Re (x+iy)^m`
/// (`sine == false`) or `Im (x+iy)^m`.
fn azimuthal_jet(x: f64, y: f64, m: usize, sine: bool) -> (f64, [f64; 2], [f64; 3]) {
    let w = Complex(x, y);
    let p0 = w.powi(m);
    let p1 = if m >= 1 { w.powi(m - 1).scale(m as f64) } else { Complex(0.0, 0.0) };
    let p2 = if m >= 2 { w.powi(m - 2).scale((m * (m - 1)) as f64) } else { Complex(0.0, 0.0) };
    if sine {
        (p0.1, [p1.1, p1.0], [p2.1, p2.0, -p2.1])
    } else {
        (p0.0, [p1.0, -p1.1], [p2.0, -p2.1, -p2.0])
    }
}

impl SphericalExpansion {
    pub fn single(l: usize, m: i64) -> Self {
        SphericalExpansion { modes: vec![SphericalMode { l, m, c: 1.0 }] }
    }

    /// Every `(l, m)` with `l <= lmax`, standard normal coefficients.
    pub fn random(lmax: usize, rng: &mut PathRng) -> Self {
        let mut modes = Vec::new();
        for l in 0..=lmax {
            for m in -(l as i64)..=(l as i64) {
                modes.push(SphericalMode { l, m, c: rng.normal() });
            }
        }
        SphericalExpansion { modes }
    }

    pub fn max_degree(&self) -> usize {
        self.modes.iter().map(|m| m.l).max().unwrap_or(0)
    }

    pub fn map_spectrum(&self, radius: f64, g: impl Fn(f64) -> f64) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|m| SphericalMode { c: m.c * g(eigenvalue(m.l, radius)), ..*m })
            .collect();
        SphericalExpansion { modes }
    }

    /// `‖u‖₂²` on the sphere of the given radius.
    pub fn l2_norm_sq(&self, radius: f64) -> f64 {
        radius * radius * self.modes.iter().map(|m| m.c * m.c).sum::<f64>()
    }

    /// Value, ambient gradient and ambient Hessian of the polynomial
    /// extension `F` at unit-sphere coordinates `u`.
    fn ambient_jet(&self, u: &[f64]) -> (f64, [f64; 3], [f64; 9]) {
        let lmax = self.max_degree();
        let q = legendre_q_table(u[2], lmax);
        let mut val = 0.0;
        let mut g = [0.0; 3];
        let mut h = [0.0; 9];
        for mode in &self.modes {
            let ma = mode.m.unsigned_abs() as usize;
            if ma > mode.l {
                continue;
            }
            let [q0, q1, q2] = q[ma][mode.l - ma];
            let (t0, t1, t2) = azimuthal_jet(u[0], u[1], ma, mode.m < 0);
            let c = mode.c * normalization(mode.l, ma);
            val += c * q0 * t0;
            g[0] += c * q0 * t1[0];
            g[1] += c * q0 * t1[1];
            g[2] += c * q1 * t0;
            h[0] += c * q0 * t2[0];
            h[1] += c * q0 * t2[1];
            h[3] += c * q0 * t2[1];
            h[4] += c * q0 * t2[2];
            h[2] += c * q1 * t1[0];
            h[6] += c * q1 * t1[0];
            h[5] += c * q1 * t1[1];
            h[7] += c * q1 * t1[1];
            h[8] += c * q2 * t0;
        }
        (val, g, h)
    }

    pub fn value(&self, x: &[f64], radius: f64) -> f64 {
        let u: Vec<f64> = x.iter().map(|c| c / radius).collect();
        self.ambient_jet(&u).0
    }

    /// Ambient covector of the differential on the sphere of radius `a`.
    pub fn differential(&self, x: &[f64], radius: f64) -> Vec<f64> {
        let u: Vec<f64> = x.iter().map(|c| c / radius).collect();
        let (_, g, _) = self.ambient_jet(&u);
        g.iter().map(|c| c / radius).collect()
    }

    /// Ambient bilinear form of the Riemannian Hessian:
    /// `(∇²F - (u·∇F) I) / a²` restricted to tangent vectors.
    pub fn hessian(&self, x: &[f64], radius: f64) -> Vec<f64> {
        let u: Vec<f64> = x.iter().map(|c| c / radius).collect();
        let (_, g, h) = self.ambient_jet(&u);
        let radial: f64 = u.iter().zip(&g).map(|(a, b)| a * b).sum();
        let a2 = radius * radius;
        let mut b = h.to_vec();
        for i in 0..3 {
            b[i * 3 + i] -= radial;
        }
        b.iter_mut().for_each(|v| *v /= a2);
        b
    }

    /// Nonnegative Laplacian, from the eigenvalues `l(l+1)/a²`.
    pub fn laplacian(&self, x: &[f64], radius: f64) -> f64 {
        self.map_spectrum(radius, |lam| lam).value(x, radius)
    }
}

/// Eigenvalue `l(l+1)/a²` of the nonnegative Laplacian on the 2-sphere.
pub fn eigenvalue(l: usize, radius: f64) -> f64 {
    (l * (l + 1)) as f64 / (radius * radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn on_sphere(theta: f64, phi: f64) -> [f64; 3] {
        [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
    }

    #[test]
    fn low_degree_harmonics_match_closed_forms() {
        let x = on_sphere(0.7, 1.3);
        let y10 = SphericalExpansion::single(1, 0).value(&x, 1.0);
        assert_relative_eq!(y10, (3.0 / (4.0 * PI)).sqrt() * x[2], epsilon = 1e-14);
        let y11 = SphericalExpansion::single(1, 1).value(&x, 1.0);
        assert_relative_eq!(y11, (3.0 / (4.0 * PI)).sqrt() * x[0], epsilon = 1e-14);
        let y2m2 = SphericalExpansion::single(2, -2).value(&x, 1.0);
        // sqrt(15/16π) · 2xy
        assert_relative_eq!(y2m2, (15.0 / (16.0 * PI)).sqrt() * 2.0 * x[0] * x[1], epsilon = 1e-14);
        let y20 = SphericalExpansion::single(2, 0).value(&x, 1.0);
        assert_relative_eq!(y20, (5.0 / (16.0 * PI)).sqrt() * (3.0 * x[2] * x[2] - 1.0), epsilon = 1e-14);
    }

    #[test]
    fn trig_parseval_matches_definition() {
        let p = TrigPolynomial::single(vec![1, 0], 0.0, 1.0);
        assert_relative_eq!(p.l2_norm_sq(), 2.0 * PI * PI, epsilon = 1e-12);
        let lap = p.map_spectrum(|l| l);
        assert_eq!(lap.value(&[0.3, 0.1]), p.laplacian(&[0.3, 0.1]));
    }

    #[test]
    fn random_trig_modes_are_canonical() {
        let mut rng = PathRng::new(1, 0, false);
        let p = TrigPolynomial::random(2, 3, &mut rng);
        assert_eq!(p.modes.len(), (7 * 7 + 1) / 2);
        assert_eq!(p.degree(), 3);
    }
}
