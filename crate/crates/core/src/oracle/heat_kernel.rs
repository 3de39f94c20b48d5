//! Heat kernels `p_t(x, y)` of `e^{-tΔ}` on the model spaces, with
//! derivatives in `x` expressed in the canonical frame at `x`.

use std::f64::consts::{PI, SQRT_2, TAU};

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::geometry::{ManifoldModel, Point};
use crate::quad;

/// Smallest `t / a²` for which the spherical spectral sum is trusted.
pub const MIN_SPECTRAL_TIME: f64 = 1e-4;
const MAX_TERMS: usize = 20_000;

#[derive(Clone, Debug)]
pub struct KernelEval {
    pub p: f64,
    pub dp_dt: f64,
    /// `∇_x p` in the canonical frame at `x`.
    pub grad_x: Vec<f64>,
    /// Nonnegative Laplacian in `x`, so `dp_dt = -laplacian_x`.
    pub laplacian_x: f64,
    /// `Hess_x p` in the canonical frame at `x`.
    pub hess_x: DMatrix<f64>,
}

/// Euclidean norm rescaled by the largest entry, so that kernels far in
/// the Gaussian tail do not square to zero.
fn scaled_norm<'a>(v: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let peak = v.clone().fold(0.0f64, |a, x| a.max(x.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return peak;
    }
    peak * v.map(|x| (x / peak).powi(2)).sum::<f64>().sqrt()
}

impl KernelEval {
    pub fn grad_norm(&self) -> f64 {
        scaled_norm(self.grad_x.iter())
    }

    pub fn hess_hs_norm(&self) -> f64 {
        scaled_norm(self.hess_x.iter())
    }

    pub fn hess_op_norm(&self) -> f64 {
        self.hess_x.clone().symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Derivatives of a radial profile `F(ρ, t)`; `d1_m` is `F'(ρ) m(ρ)` where
/// `m(ρ)` is the eigenvalue of `Hess ρ` orthogonal to `∇ρ` (finite as
/// `ρ → 0`, where it tends to `F''(0)`).
#[derive(Clone, Copy, Debug)]
struct RadialJet {
    f: f64,
    d1: f64,
    d2: f64,
    d1_m: f64,
    dt: f64,
}

fn euclidean_jet(d: usize, rho: f64, t: f64) -> RadialJet {
    let f = (4.0 * PI * t).powf(-(d as f64) / 2.0) * (-rho * rho / (4.0 * t)).exp();
    RadialJet {
        f,
        d1: -rho / (2.0 * t) * f,
        d2: (rho * rho / (4.0 * t * t) - 1.0 / (2.0 * t)) * f,
        d1_m: -f / (2.0 * t),
        dt: (-(d as f64) / (2.0 * t) + rho * rho / (4.0 * t * t)) * f,
    }
}

/// Unit-curvature hyperbolic 3-space.
fn h3_jet(rho: f64, t: f64) -> RadialJet {
    // ln F = const - 3/2 ln t + ln(ρ / sinh ρ) - t - ρ²/4t
    let small = rho < 1e-3;
    let ratio = if small { 1.0 - rho * rho / 6.0 + 7.0 * rho.powi(4) / 360.0 } else { rho / rho.sinh() };
    let f = (4.0 * PI * t).powf(-1.5) * ratio * (-t - rho * rho / (4.0 * t)).exp();
    // a = 1/ρ - coth ρ, a' = -1/ρ² + 1/sinh²ρ
    let (a_over_rho, a_prime) = if small {
        (-1.0 / 3.0 + rho * rho / 45.0, -1.0 / 3.0 + rho * rho / 15.0)
    } else {
        let s = rho.sinh();
        ((1.0 / rho - 1.0 / rho.tanh()) / rho, -1.0 / (rho * rho) + 1.0 / (s * s))
    };
    let l1 = rho * a_over_rho - rho / (2.0 * t);
    let l1_prime = a_prime - 1.0 / (2.0 * t);
    let rho_coth = if small { 1.0 + rho * rho / 3.0 } else { rho / rho.tanh() };
    RadialJet {
        f,
        d1: f * l1,
        d2: f * (l1 * l1 + l1_prime),
        d1_m: f * (a_over_rho - 1.0 / (2.0 * t)) * rho_coth,
        dt: f * (-1.5 / t - 1.0 + rho * rho / (4.0 * t * t)),
    }
}

/// `q(s) = s / sinh s` and its first two derivatives.
fn q_jet(s: f64) -> (f64, f64, f64) {
    if s < 1e-2 {
        let s2 = s * s;
        (1.0 - s2 / 6.0 + 7.0 * s2 * s2 / 360.0, -s / 3.0 + 7.0 * s * s2 / 90.0, -1.0 / 3.0 + 7.0 * s2 / 30.0)
    } else {
        let (sh, ch) = (s.sinh(), s.cosh());
        let q = s / sh;
        let q1 = 1.0 / sh - s * ch / (sh * sh);
        let q2 = -2.0 * ch / (sh * sh) - s / sh + 2.0 * s * ch * ch / (sh * sh * sh);
        (q, q1, q2)
    }
}

/// Unit-curvature hyperbolic plane, from the integral representation
/// `F = √2 e^{-t/4} (4πt)^{-3/2} ∫_ρ^∞ s e^{-s²/4t} (cosh s - cosh ρ)^{-1/2} ds`
/// after the substitutions `cosh s = cosh ρ + v²`, `v = sinh w`, which make
/// every ρ- and t-derivative a regular integral.
fn h2_jet(rho: f64, t: f64) -> Result<RadialJet> {
    let pref = SQRT_2 * (-t / 4.0).exp() * (4.0 * PI * t).powf(-1.5);
    let (sr, cr) = (rho.sinh(), rho.cosh());
    let half = (rho / 2.0).sinh();
    // cosh s - 1 = (cosh ρ - 1) + v², inverted without cancellation
    let s_at = |w: f64| {
        let v = w.sinh();
        let y = 2.0 * half * half + v * v;
        (y + (y * (2.0 + y)).sqrt()).ln_1p()
    };
    // upper limit where e^{-s²/4t} underflows relative to the peak
    let s_max = (4.0 * t * 40.0).sqrt() + rho + 1.0;
    let w_max = {
        let mut w = 1.0;
        while s_at(w) < s_max {
            w *= 1.5;
        }
        w
    };
    let gauss = |s: f64| (-s * s / (4.0 * t)).exp();
    // g(s) = 2 e^{-s²/4t} q(s) with q = s/sinh s; F = pref ∫ g(s(ρ,v)) dv
    let g_jet = |s: f64| {
        let e = 2.0 * gauss(s);
        let (q, q1, q2) = q_jet(s);
        let g0 = e * q;
        let g1 = e * (q1 - s * q / (2.0 * t));
        let g2 = e * (q2 - s * q1 / t - q / (2.0 * t) + s * s * q / (4.0 * t * t));
        let gt = e * q * s * s / (4.0 * t * t);
        (g0, g1, g2, gt)
    };
    let integrand = |w: f64, which: usize| -> f64 {
        let dv = w.cosh();
        let s = s_at(w);
        let (g0, g1, g2, gt) = g_jet(s);
        let sh = s.sinh();
        match which {
            0 => g0 * dv,
            1 => {
                // ∂ρ s = sinh ρ / sinh s
                if sh == 0.0 {
                    return 0.0;
                }
                g1 * sr / sh * dv
            }
            2 => {
                if sh == 0.0 {
                    // ρ = 0, w = 0: g1/sinh s -> g''(0) since g'(0) = 0
                    return g2 * dv;
                }
                let ds = sr / sh;
                // ∂²ρ s = cosh ρ / sinh s - sinh²ρ cosh s / sinh³ s
                let d2s = cr / sh - sr * sr * s.cosh() / (sh * sh * sh);
                (g2 * ds * ds + g1 * d2s) * dv
            }
            _ => gt * dv,
        }
    };
    let mut vals = [0.0; 4];
    for (k, v) in vals.iter_mut().enumerate() {
        let (val, _) = quad::integrate(|w| integrand(w, k), 0.0, w_max, 1e-300, 1e-11)?;
        *v = val;
    }
    let [i0, i1, i2, it] = vals;
    let f = pref * i0;
    let d1 = pref * i1;
    let d2 = pref * i2;
    let d1_m = if rho < 1e-6 { d2 } else { d1 / rho.tanh() };
    let dt = pref * (it - (0.25 + 1.5 / t) * i0);
    Ok(RadialJet { f, d1, d2, d1_m, dt })
}

/// 1-d wrapped Gaussian `Σ_n (4πt)^{-1/2} e^{-(u+2πn)²/4t}` and its first
/// two `u`-derivatives (the `t`-derivative equals the second).
pub(crate) fn wrapped_gaussian(u: f64, t: f64) -> (f64, f64, f64) {
    let u = (u + PI).rem_euclid(TAU) - PI;
    if t < 1.0 {
        let reach = ((4.0 * t * 34.0).sqrt() / TAU).ceil() as i64 + 1;
        let c = (4.0 * PI * t).powf(-0.5);
        let (mut g0, mut g1, mut g2) = (0.0, 0.0, 0.0);
        for n in -reach..=reach {
            let v = u + TAU * n as f64;
            let e = c * (-v * v / (4.0 * t)).exp();
            g0 += e;
            g1 += -v / (2.0 * t) * e;
            g2 += (v * v / (4.0 * t * t) - 1.0 / (2.0 * t)) * e;
        }
        (g0, g1, g2)
    } else {
        let kmax = (40.0 / t).sqrt().ceil() as i64 + 1;
        let (mut g0, mut g1, mut g2) = (1.0 / TAU, 0.0, 0.0);
        for k in 1..=kmax {
            let kf = k as f64;
            let e = (-kf * kf * t).exp() / PI;
            let (s, c) = (kf * u).sin_cos();
            g0 += e * c;
            g1 -= e * kf * s;
            g2 -= e * kf * kf * c;
        }
        (g0, g1, g2)
    }
}

fn torus_kernel(x: &[f64], y: &[f64], t: f64) -> KernelEval {
    let d = x.len();
    let jets: Vec<(f64, f64, f64)> = x.iter().zip(y).map(|(a, b)| wrapped_gaussian(a - b, t)).collect();
    let prod_except = |skip: &[usize]| -> f64 {
        jets.iter().enumerate().filter(|(i, _)| !skip.contains(i)).map(|(_, j)| j.0).product()
    };
    let p = prod_except(&[]);
    let grad_x: Vec<f64> = (0..d).map(|i| jets[i].1 * prod_except(&[i])).collect();
    let hess_x = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            jets[i].2 * prod_except(&[i])
        } else {
            jets[i].1 * jets[j].1 * prod_except(&[i, j])
        }
    });
    let laplacian_x = -hess_x.trace();
    // ∂t g = g'' in each factor
    let dp_dt = hess_x.trace();
    KernelEval { p, dp_dt, grad_x, laplacian_x, hess_x }
}

/// `G(c) = Σ (2l+1)/(4π a²) e^{-l(l+1)t/a²} P_l(c)` with `G'` and `G''`,
/// and the matching `t`-derivative of `G`.
fn legendre_sum(c: f64, t: f64, radius: f64) -> Result<(f64, f64, f64, f64)> {
    let tau = t / (radius * radius);
    if tau < MIN_SPECTRAL_TIME {
        return Err(Error::Truncation(format!(
            "spherical heat kernel at t = {t}: spectral truncation unreliable below t/a² = {MIN_SPECTRAL_TIME}"
        )));
    }
    let norm = 1.0 / (4.0 * PI * radius * radius);
    // P_l, P_l', P_l'' by the standard recurrences
    let (mut p_prev, mut p) = (1.0, c);
    let (mut d_prev, mut d) = (0.0, 1.0);
    let (mut dd_prev, mut dd) = (0.0, 0.0);
    let mut acc = [norm, 0.0, 0.0, 0.0];
    for l in 1..MAX_TERMS {
        let lf = l as f64;
        let lam = lf * (lf + 1.0);
        let w = (2.0 * lf + 1.0) * norm * (-lam * tau).exp();
        acc[0] += w * p;
        acc[1] += w * d;
        acc[2] += w * dd;
        acc[3] -= w * lam / (radius * radius) * p;
        if w * (lf + 1.0).powi(4) < 1e-17 * norm {
            return Ok((acc[0], acc[1], acc[2], acc[3]));
        }
        // P_{l+1} = ((2l+1) c P_l - l P_{l-1}) / (l+1);
        // P'_{l+1} = P'_{l-1} + (2l+1) P_l; P''_{l+1} = P''_{l-1} + (2l+1) P'_l
        let p_next = ((2.0 * lf + 1.0) * c * p - lf * p_prev) / (lf + 1.0);
        let d_next = d_prev + (2.0 * lf + 1.0) * p;
        let dd_next = dd_prev + (2.0 * lf + 1.0) * d;
        (p_prev, p) = (p, p_next);
        (d_prev, d) = (d, d_next);
        (dd_prev, dd) = (dd, dd_next);
    }
    Err(Error::Truncation(format!("spherical heat kernel at t = {t}: term count bound exceeded")))
}

fn sphere2_kernel(m: &ManifoldModel, x: &[f64], y: &[f64], t: f64, radius: f64) -> Result<KernelEval> {
    let a2 = radius * radius;
    let c = (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / a2).clamp(-1.0, 1.0);
    let (g0, g1, g2, gt) = legendre_sum(c, t, radius)?;
    let frame = m.frame_at(x);
    // ∇c = proj_x(y) / a², Hess c = -(c / a²) g
    let grad_c: Vec<f64> = frame.vectors.iter().map(|e| m.inner(e, y) / a2).collect();
    let d = frame.dim();
    let hess_x = DMatrix::from_fn(d, d, |i, j| {
        g2 * grad_c[i] * grad_c[j] - if i == j { g1 * c / a2 } else { 0.0 }
    });
    Ok(KernelEval {
        p: g0,
        dp_dt: gt,
        grad_x: grad_c.iter().map(|v| g1 * v).collect(),
        laplacian_x: -hess_x.trace(),
        hess_x,
    })
}

fn radial_kernel(m: &ManifoldModel, x: &[f64], y: &[f64], jet: RadialJet) -> KernelEval {
    let d = m.dim();
    let frame = m.frame_at(x);
    let rho = m.dist(x, y);
    // unit ∇ρ points away from y
    let u: Vec<f64> = if rho > 0.0 {
        let log = m.log_map(x, y);
        frame.vectors.iter().map(|e| -m.inner(e, &log) / rho).collect()
    } else {
        vec![0.0; d]
    };
    let hess_x = DMatrix::from_fn(d, d, |i, j| {
        let uu = u[i] * u[j];
        let delta = if i == j { 1.0 } else { 0.0 };
        if rho > 0.0 {
            jet.d2 * uu + jet.d1_m * (delta - uu)
        } else {
            jet.d2 * delta
        }
    });
    KernelEval {
        p: jet.f,
        dp_dt: jet.dt,
        grad_x: u.iter().map(|v| jet.d1 * v).collect(),
        laplacian_x: -hess_x.trace(),
        hess_x,
    }
}

/// Radial profile of the kernel on radially symmetric models.
fn radial_jet(m: &ManifoldModel, rho: f64, t: f64) -> Result<RadialJet> {
    match *m {
        ManifoldModel::Euclidean { dim } => Ok(euclidean_jet(dim, rho, t)),
        ManifoldModel::Hyperbolic { dim, scale } => {
            let (r, tau) = (rho / scale, t / (scale * scale));
            let unit = match dim {
                2 => h2_jet(r, tau)?,
                3 => h3_jet(r, tau),
                _ => return Err(Error::Unsupported(format!("no heat kernel oracle for H^{dim}"))),
            };
            let dn = scale.powi(-(dim as i32));
            Ok(RadialJet {
                f: unit.f * dn,
                d1: unit.d1 * dn / scale,
                d2: unit.d2 * dn / (scale * scale),
                d1_m: unit.d1_m * dn / (scale * scale),
                dt: unit.dt * dn / (scale * scale),
            })
        }
        _ => Err(Error::Unsupported(format!("{} is not handled radially", m.name()))),
    }
}

/// Heat kernel with derivatives in the first argument.
pub fn heat_kernel(m: &ManifoldModel, x: &Point, y: &Point, t: f64) -> Result<KernelEval> {
    if !(t > 0.0) || !t.is_finite() {
        return invalid(format!("heat kernel time must be positive, got {t}"));
    }
    let (xs, ys) = (x.as_slice(), y.as_slice());
    if xs.len() != m.ambient_dim() || ys.len() != m.ambient_dim() {
        return invalid("heat kernel points have the wrong dimension");
    }
    match *m {
        ManifoldModel::Torus { .. } => Ok(torus_kernel(xs, ys, t)),
        ManifoldModel::Sphere { dim: 1, radius } => {
            // arclength coordinate on the circle of circumference 2πa
            let angle = |p: &[f64]| p[1].atan2(p[0]);
            let tau = t / (radius * radius);
            let (g0, g1, g2) = wrapped_gaussian(angle(xs) - angle(ys), tau);
            let (f, f1, f2) = (g0 / radius, g1 / (radius * radius), g2 / radius.powi(3));
            let hess_x = DMatrix::from_element(1, 1, f2);
            // the canonical frame on the circle may point either way
            let e = &m.frame_at(xs).vectors[0];
            let orient = (-xs[1] * e[0] + xs[0] * e[1]).signum();
            Ok(KernelEval { p: f, dp_dt: f2, grad_x: vec![orient * f1], laplacian_x: -f2, hess_x })
        }
        ManifoldModel::Sphere { dim: 2, radius } => sphere2_kernel(m, xs, ys, t, radius),
        ManifoldModel::Sphere { dim, .. } => {
            Err(Error::Unsupported(format!("no heat kernel oracle for S^{dim} (d <= 2 only)")))
        }
        _ => {
            let rho = m.dist(xs, ys);
            Ok(radial_kernel(m, xs, ys, radial_jet(m, rho, t)?))
        }
    }
}

/// Radial kernel value `p_t` at distance `ρ`, where the model is isotropic.
pub fn kernel_at_distance(m: &ManifoldModel, rho: f64, t: f64) -> Result<KernelEval> {
    let o = m.origin();
    let frame = m.frame_at(&o.coords);
    let mut y = o.coords.clone();
    let xi: Vec<f64> = frame.vectors[0].iter().map(|c| c * rho).collect();
    m.exp_transport(&mut y, &xi, &mut []);
    heat_kernel(m, &o, &Point { coords: y }, t)
}
