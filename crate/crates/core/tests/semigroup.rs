use mheat_core::geometry::fields::{gaussian_bump, gradient_in_frame, Constant, NormSquared, Profile, Ridge, ScalarField};
use mheat_core::geometry::{ManifoldModel, Point};
use mheat_core::mc::{Exec, SimConfig};
use mheat_core::rng::PathRng;
use mheat_core::semigroup::{
    estimate_endpoint_moments, estimate_grad, estimate_green_hess, estimate_hess, estimate_hess_matrix, estimate_pt,
    HessianEstimatorConfig, HessianMode,
};
use mheat_core::transport::{sample_path, Walker};

const Z: f64 = 3.0;

fn within(a: f64, sa: f64, b: f64, sb: f64) -> bool {
    (a - b).abs() <= Z * (sa * sa + sb * sb).sqrt()
}

/// Five (field, start, t) triples per model, drawn from a fixed stream.
fn triples(m: &ManifoldModel, salt: u64) -> Vec<(Box<dyn ScalarField>, Point, f64)> {
    let mut rng = PathRng::new(2024, salt, false);
    (0..5)
        .map(|i| {
            let raw: Vec<f64> = (0..m.dim()).map(|_| 0.5 * rng.normal()).collect();
            let x = m.exp_origin(&raw);
            let t = 0.04 * (5 + (i * 3) % 11) as f64;
            let f: Box<dyn ScalarField> = match m {
                ManifoldModel::Euclidean { .. } => Box::new(Ridge::new("sin", vec![1.0, 0.5], Profile::Sin)),
                ManifoldModel::Torus { .. } => Box::new(Ridge::new("cos", vec![1.0, 1.0], Profile::Cos)),
                _ => Box::new(gaussian_bump(m, &m.origin().coords, 0.8).unwrap()),
            };
            (f, x, t)
        })
        .collect()
}

#[test]
fn two_stage_estimates_match_the_semigroup() {
    let h = 0.02;
    let n = 4000u64;
    for (salt, m) in [
        ManifoldModel::euclidean(2).unwrap(),
        ManifoldModel::torus(2).unwrap(),
        ManifoldModel::sphere(2, 1.0).unwrap(),
        ManifoldModel::hyperbolic(2, 1.0).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        for (f, x, t) in triples(&m, salt as u64) {
            let direct = estimate_pt(&m, f.as_ref(), &x, 2.0 * t, &SimConfig::new(n as usize, 7).with_h(h)).unwrap();
            let vals: Vec<f64> = (0..n)
                .map(|i| {
                    let first = sample_path(&m, &x, t, h, 31, i).unwrap();
                    let mid = first.points.last().unwrap().clone();
                    let second = sample_path(&m, &mid, t, h, 32, i).unwrap();
                    f.eval(&m, &second.points.last().unwrap().coords)
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
            assert!(
                within(direct.scalar(), direct.scalar_stderr(), mean, se),
                "{} {}: direct {} ± {}, two-stage {mean} ± {se}",
                m.name(),
                f.name(),
                direct.scalar(),
                direct.scalar_stderr()
            );
        }
    }
}

#[test]
fn constant_fields_are_reproduced_exactly() {
    let m = ManifoldModel::hyperbolic(2, 1.0).unwrap();
    let est = estimate_pt(&m, &Constant(1.0), &m.origin(), 0.5, &SimConfig::new(500, 1).with_h(0.05)).unwrap();
    assert_eq!(est.scalar(), 1.0);
    assert_eq!(est.scalar_stderr(), 0.0);
}

#[test]
fn euclidean_norm_squared_grows_by_2dt() {
    let m = ManifoldModel::euclidean(3).unwrap();
    let x = m.point(vec![0.5, -1.0, 2.0]).unwrap();
    let f = NormSquared { center: vec![0.0; 3] };
    let t = 0.7;
    let est = estimate_pt(&m, &f, &x, t, &SimConfig::new(20_000, 4).with_h(0.07)).unwrap();
    let exact = 0.25 + 1.0 + 4.0 + 2.0 * 3.0 * t;
    assert!((est.scalar() - exact).abs() <= Z * est.scalar_stderr(), "{} ± {}", est.scalar(), est.scalar_stderr());
}

#[test]
fn sphere_height_decays_at_the_first_eigenvalue() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let x = m.exp_origin(&[0.6, 0.2]);
    let f = Ridge::new("z", vec![0.0, 0.0, 1.0], Profile::Linear);
    let t = 0.4;
    let est = estimate_pt(&m, &f, &x, t, &SimConfig::new(20_000, 8).with_h(0.002)).unwrap();
    let exact = (-2.0 * t).exp() * x.coords[2];
    assert!((est.scalar() - exact).abs() <= Z * est.scalar_stderr() + 1e-3, "{} ± {} vs {exact}", est.scalar(), est.scalar_stderr());
}

#[test]
fn contraction_and_gradient_bounds_hold() {
    for m in [ManifoldModel::sphere(2, 1.0).unwrap(), ManifoldModel::hyperbolic(2, 1.0).unwrap(), ManifoldModel::torus(2).unwrap()] {
        let f: Box<dyn ScalarField> = match m {
            ManifoldModel::Torus { .. } => Box::new(Ridge::new("sin", vec![1.0, 2.0], Profile::Sin)),
            _ => Box::new(gaussian_bump(&m, &m.origin().coords, 0.6).unwrap()),
        };
        // both fields take values in [-1, 1]
        let sup = 1.0;
        let x = m.exp_origin(&[0.3, 0.4]);
        let t = 0.5;
        let sim = SimConfig::new(8000, 12).with_h(0.01);
        let pt = estimate_pt(&m, f.as_ref(), &x, t, &sim).unwrap();
        assert!(pt.scalar().abs() <= sup + Z * pt.scalar_stderr());
        let grad_sq = estimate_endpoint_moments(&m, &x, t, &sim, 1, |y, out| {
            let g = gradient_in_frame(f.as_ref(), &m, y, &m.frame_at(y)).unwrap();
            out[0] = g.iter().map(|c| c * c).sum();
            Ok(())
        })
        .unwrap();
        let growth = (m.ricci_lower_bound() * t).exp();
        for e in [[1.0, 0.0], [0.0, 1.0]] {
            let v = m.tangent_from_frame(&x, &e);
            let g = estimate_grad(&m, f.as_ref(), &x, &v, t, &sim).unwrap();
            let bound = growth * grad_sq.scalar().sqrt();
            assert!(g.scalar().abs() <= bound + Z * g.scalar_stderr(), "{}: {} > {bound}", m.name(), g.scalar());
        }
    }
}

#[test]
fn linear_gradient_is_exact_in_flat_space() {
    let m = ManifoldModel::euclidean(2).unwrap();
    let x = m.point(vec![0.3, -0.2]).unwrap();
    let f = Ridge::new("x1", vec![1.0, 0.0], Profile::Linear);
    let v = m.tangent_from_frame(&x, &[1.0, 0.0]);
    let g = estimate_grad(&m, &f, &x, &v, 0.8, &SimConfig::new(100, 3).with_h(0.1)).unwrap();
    assert_eq!(g.scalar(), 1.0);
    assert_eq!(g.scalar_stderr(), 0.0);
}

#[test]
fn torus_sine_gradient_decays() {
    let m = ManifoldModel::torus(2).unwrap();
    let x = m.point(vec![0.7, 2.0]).unwrap();
    let f = Ridge::new("sin", vec![1.0, 0.0], Profile::Sin);
    let v = m.tangent_from_frame(&x, &[1.0, 0.0]);
    let t = 0.6;
    let g = estimate_grad(&m, &f, &x, &v, t, &SimConfig::new(20_000, 2).with_h(0.02)).unwrap();
    let exact = (-t).exp() * 0.7f64.cos();
    assert!((g.scalar() - exact).abs() <= Z * g.scalar_stderr(), "{} ± {} vs {exact}", g.scalar(), g.scalar_stderr());
}

#[test]
fn hyperbolic_gradient_matches_common_random_number_differences() {
    let m = ManifoldModel::hyperbolic(2, 1.0).unwrap();
    let f = gaussian_bump(&m, &m.origin().coords, 1.0).unwrap();
    let x = m.exp_origin(&[0.5, 0.2]);
    let (t, h, eps): (f64, f64, f64) = (0.5, 0.01, 0.02);
    let n = 20_000usize;
    let frame = m.frame_at(&x.coords);
    // start points x ± ε e₁ with the frame carried along the geodesic
    let shifted = |s: f64| {
        let mut y = x.coords.clone();
        let mut vecs = frame.vectors.clone();
        let xi: Vec<f64> = frame.vectors[0].iter().map(|c| c * s).collect();
        m.exp_transport(&mut y, &xi, &mut vecs);
        (y, vecs)
    };
    let (plus, minus) = (shifted(eps), shifted(-eps));
    let steps = (t / h).round() as usize;
    let scale = (2.0 * h).sqrt();
    let diffs: Vec<f64> = (0..n as u64)
        .map(|i| {
            let mut rng = PathRng::new(77, i, false);
            let mut a = Walker::new(&m, &plus.0);
            a.frame = plus.1.clone();
            let mut b = Walker::new(&m, &minus.0);
            b.frame = minus.1.clone();
            let mut db = vec![0.0; 2];
            for _ in 0..steps {
                rng.fill_normals(&mut db);
                db.iter_mut().for_each(|v| *v *= scale);
                a.step(&db).unwrap();
                b.step(&db).unwrap();
            }
            (f.eval(&m, &a.x) - f.eval(&m, &b.x)) / (2.0 * eps)
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let se = (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
    let v = m.tangent_from_frame(&x, &[1.0, 0.0]);
    let g = estimate_grad(&m, &f, &x, &v, t, &SimConfig::new(n, 5).with_h(h)).unwrap();
    assert!(within(g.scalar(), g.scalar_stderr(), mean, se), "grad {} ± {}, CRN {mean} ± {se}", g.scalar(), g.scalar_stderr());
}

#[test]
fn bismut_weights_have_zero_mean_on_constants() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let x = m.exp_origin(&[0.2, 0.1]);
    let cfg = HessianEstimatorConfig::default();
    let est = estimate_hess_matrix(&m, &Constant(1.0), &x, 0.4, &cfg, HessianMode::Bismut, &SimConfig::new(8000, 6).with_h(0.01)).unwrap();
    for (v, s) in est.value.iter().zip(&est.stderr) {
        assert!(v.abs() <= Z * s, "{v} ± {s}");
    }
}

#[test]
fn hessian_is_symmetric_and_formulas_agree() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let x = m.exp_origin(&[0.4, -0.3]);
    let f = gaussian_bump(&m, &m.origin().coords, 0.7).unwrap();
    let cfg = HessianEstimatorConfig::default();
    let t = 0.3;
    let v = m.tangent_from_frame(&x, &[1.0, 0.0]);
    let w = m.tangent_from_frame(&x, &[0.6, 0.8]);
    let sim = |seed| SimConfig::new(20_000, seed).with_h(0.005);
    let vw = estimate_hess(&m, &f, &x, &v, &w, t, &cfg, HessianMode::Bismut, &sim(1)).unwrap();
    let wv = estimate_hess(&m, &f, &x, &w, &v, t, &cfg, HessianMode::Bismut, &sim(2)).unwrap();
    assert!(within(vw.scalar(), vw.scalar_stderr(), wv.scalar(), wv.scalar_stderr()), "{vw:?} {wv:?}");
    let mixed = estimate_hess(&m, &f, &x, &v, &w, t, &cfg, HessianMode::Mixed, &sim(3)).unwrap();
    assert!(within(vw.scalar(), vw.scalar_stderr(), mixed.scalar(), mixed.scalar_stderr()), "{vw:?} {mixed:?}");
    let mixed_wv = estimate_hess(&m, &f, &x, &w, &v, t, &cfg, HessianMode::Mixed, &sim(4)).unwrap();
    assert!(within(mixed.scalar(), mixed.scalar_stderr(), mixed_wv.scalar(), mixed_wv.scalar_stderr()));
}

#[test]
fn euclidean_green_operator_on_a_square() {
    let m = ManifoldModel::euclidean(2).unwrap();
    let x = m.origin();
    let f = Ridge::new("x1^2", vec![1.0, 0.0], Profile::Square);
    let v = m.tangent_from_frame(&x, &[1.0, 0.0]);
    let g = estimate_green_hess(&m, &f, &x, &v, &v, &HessianEstimatorConfig::new(4.0), HessianMode::Mixed, &SimConfig::new(200, 1).with_h(0.01)).unwrap();
    assert!((g.value - 0.5).abs() <= Z * g.stderr + g.quadrature_tol, "{g:?}");
}

#[test]
fn sphere_green_operator_follows_the_resolvent() {
    // Hess (Δ + σ)⁻¹ z = -z g / (2 + σ) on the unit sphere
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let x = m.exp_origin(&[0.5, 0.0]);
    let f = Ridge::new("z", vec![0.0, 0.0, 1.0], Profile::Linear);
    let v = m.tangent_from_frame(&x, &[0.0, 1.0]);
    let sim = SimConfig::new(2000, 9).with_h(0.01);
    let g = estimate_green_hess(&m, &f, &x, &v, &v, &HessianEstimatorConfig::new(2.0), HessianMode::Mixed, &sim).unwrap();
    let exact = -x.coords[2] / 4.0;
    assert!((g.value - exact).abs() <= Z * g.stderr + g.quadrature_tol + 5e-3, "{g:?} vs {exact}");
}

#[test]
fn doubling_sigma_shrinks_the_green_operator() {
    let m = ManifoldModel::torus(1).unwrap();
    let x = m.origin();
    let f = Ridge::new("cos", vec![1.0], Profile::Cos);
    let v = m.tangent_from_frame(&x, &[1.0]);
    let sim = SimConfig::new(2000, 3).with_h(0.01);
    let mut last = f64::INFINITY;
    for sigma in [1.0, 2.0, 4.0, 8.0] {
        let g = estimate_green_hess(&m, &f, &x, &v, &v, &HessianEstimatorConfig::new(sigma), HessianMode::Mixed, &sim).unwrap();
        assert!((g.value + 1.0 / (1.0 + sigma)).abs() <= Z * g.stderr + g.quadrature_tol, "σ = {sigma}: {g:?}");
        assert!(g.value.abs() < last, "σ = {sigma}");
        last = g.value.abs();
    }
}

#[test]
fn sequential_and_parallel_execution_agree_bitwise() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let f = gaussian_bump(&m, &m.origin().coords, 0.7).unwrap();
    let x = m.exp_origin(&[0.3, 0.1]);
    let base = SimConfig::new(3000, 17).with_h(0.02);
    let a = estimate_pt(&m, &f, &x, 0.4, &base.clone().with_exec(Exec::Sequential)).unwrap();
    let b = estimate_pt(&m, &f, &x, 0.4, &base.with_exec(Exec::Parallel)).unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.stderr, b.stderr);
}
