use std::f64::consts::{PI, TAU};

use mheat_core::geometry::{ManifoldModel, Point};
use mheat_core::oracle::{heat_kernel, kernel_at_distance, lp_norm, quadrature_grid, GridSpec, SphericalExpansion, TrigPolynomial};
use mheat_core::quad;
use mheat_core::rng::PathRng;
use mheat_core::transport::Walker;
use proptest::prelude::*;

fn kernel_models() -> Vec<ManifoldModel> {
    vec![
        ManifoldModel::euclidean(2).unwrap(),
        ManifoldModel::euclidean(3).unwrap(),
        ManifoldModel::torus(1).unwrap(),
        ManifoldModel::torus(2).unwrap(),
        ManifoldModel::sphere(1, 1.0).unwrap(),
        ManifoldModel::sphere(2, 1.0).unwrap(),
        ManifoldModel::sphere(2, 2.0).unwrap(),
        ManifoldModel::hyperbolic(2, 1.0).unwrap(),
        ManifoldModel::hyperbolic(3, 1.0).unwrap(),
        ManifoldModel::hyperbolic(3, 0.5).unwrap(),
    ]
}

fn point(m: &ManifoldModel, raw: &[f64]) -> Point {
    m.exp_origin(&raw[..m.dim()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kernel_solves_the_heat_equation(a in prop::collection::vec(-2.0f64..2.0, 3), b in prop::collection::vec(-2.0f64..2.0, 3), t in 0.1f64..2.0) {
        for m in kernel_models() {
            let (x, y) = (point(&m, &a), point(&m, &b));
            let k = heat_kernel(&m, &x, &y, t).unwrap();
            prop_assert!(k.p > 0.0, "{} p = {}", m.name(), k.p);
            prop_assert!((k.dp_dt + k.laplacian_x).abs() < 1e-6, "{} {} vs {}", m.name(), k.dp_dt, k.laplacian_x);
            prop_assert!((k.hess_x.trace() + k.laplacian_x).abs() < 1e-6, "{} trace {}", m.name(), k.hess_x.trace());
            let sym = &k.hess_x - k.hess_x.transpose();
            prop_assert!(sym.abs().max() < 1e-10);
        }
    }

    #[test]
    fn kernel_is_symmetric(a in prop::collection::vec(-2.0f64..2.0, 3), b in prop::collection::vec(-2.0f64..2.0, 3), t in 0.05f64..2.0) {
        for m in kernel_models() {
            let (x, y) = (point(&m, &a), point(&m, &b));
            let pxy = heat_kernel(&m, &x, &y, t).unwrap().p;
            let pyx = heat_kernel(&m, &y, &x, t).unwrap().p;
            prop_assert!((pxy - pyx).abs() < 1e-10 * (1.0 + pxy), "{} {pxy} vs {pyx}", m.name());
        }
    }

    #[test]
    fn chapman_kolmogorov_on_the_circle(x in 0.0f64..TAU, y in 0.0f64..TAU, s in 0.05f64..1.0, t in 0.05f64..1.0) {
        let m = ManifoldModel::torus(1).unwrap();
        let grid = quadrature_grid(&m, &GridSpec::new(256)).unwrap();
        let (px, py) = (Point { coords: vec![x] }, Point { coords: vec![y] });
        let conv = grid.integrate(|z| {
            let pz = Point { coords: z.to_vec() };
            heat_kernel(&m, &px, &pz, s).unwrap().p * heat_kernel(&m, &pz, &py, t).unwrap().p
        });
        let direct = heat_kernel(&m, &px, &py, s + t).unwrap().p;
        prop_assert!((conv - direct).abs() < 1e-8, "{conv} vs {direct}");
    }

    #[test]
    fn torus_grid_is_exact_below_its_degree(seed in 0u64..10_000, deg in 1usize..4, dim in 1usize..3) {
        let m = ManifoldModel::torus(dim).unwrap();
        let u = TrigPolynomial::random(dim, deg, &mut PathRng::new(seed, 0, false));
        // u² has degree 2·deg, which the grid integrates exactly
        let grid = quadrature_grid(&m, &GridSpec::new(2 * deg + 1)).unwrap();
        prop_assert!(grid.degree >= 2 * deg);
        let exact = u.l2_norm_sq();
        let got = grid.integrate(|x| u.value(x).powi(2));
        prop_assert!((got - exact).abs() < 1e-10 * (1.0 + exact), "{got} vs {exact}");
    }

    #[test]
    fn sphere_grid_is_exact_on_harmonics(seed in 0u64..10_000, lmax in 1usize..6, radius in 0.5f64..2.0) {
        let m = ManifoldModel::sphere(2, radius).unwrap();
        let u = SphericalExpansion::random(lmax, &mut PathRng::new(seed, 1, false));
        let grid = quadrature_grid(&m, &GridSpec::new(2 * lmax)).unwrap();
        prop_assert!((grid.total_weight() - 4.0 * PI * radius * radius).abs() < 1e-10);
        let exact = u.l2_norm_sq(radius);
        let got = grid.integrate(|x| u.value(x, radius).powi(2));
        prop_assert!((got - exact).abs() < 1e-10 * (1.0 + exact), "{got} vs {exact}");
    }
}

#[test]
fn sphere_kernel_integrates_to_one() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let grid = quadrature_grid(&m, &GridSpec::new(40)).unwrap();
    for t in [0.05, 0.1, 0.5, 2.0] {
        for raw in [[0.0, 0.0], [0.4, -1.1], [2.5, 0.3]] {
            let x = m.exp_origin(&raw);
            let mass = grid.integrate(|y| heat_kernel(&m, &x, &Point { coords: y.to_vec() }, t).unwrap().p);
            assert!((mass - 1.0).abs() < 1e-8, "t = {t}: {mass}");
        }
    }
}

#[test]
fn euclidean_and_torus_kernels_integrate_to_one() {
    let r2 = ManifoldModel::euclidean(2).unwrap();
    let grid = quadrature_grid(&r2, &GridSpec::new(200).with_extent(8.0)).unwrap();
    let o = r2.origin();
    let mass = grid.integrate(|y| heat_kernel(&r2, &o, &Point { coords: y.to_vec() }, 0.5).unwrap().p);
    assert!((mass - 1.0).abs() < 1e-8, "{mass}");
    let t2 = ManifoldModel::torus(2).unwrap();
    let grid = quadrature_grid(&t2, &GridSpec::new(64)).unwrap();
    let x = Point { coords: vec![1.0, 5.0] };
    let mass = grid.integrate(|y| heat_kernel(&t2, &x, &Point { coords: y.to_vec() }, 0.3).unwrap().p);
    assert!((mass - 1.0).abs() < 1e-10, "{mass}");
}

#[test]
fn hyperbolic_plane_kernel_integrates_to_one() {
    let m = ManifoldModel::hyperbolic(2, 1.0).unwrap();
    let grid = quadrature_grid(&m, &GridSpec::new(48)).unwrap();
    let o = m.origin();
    let mass = grid.integrate(|y| heat_kernel(&m, &o, &Point { coords: y.to_vec() }, 0.5).unwrap().p);
    assert!((mass - 1.0).abs() < 1e-6, "{mass}");
}

#[test]
fn euclidean_kernel_matches_the_gaussian() {
    let m = ManifoldModel::euclidean(3).unwrap();
    for (rho, t) in [(0.0, 0.2), (1.0, 0.5), (3.0, 1.5)] {
        let k = kernel_at_distance(&m, rho, t).unwrap();
        let want = (4.0 * PI * t).powf(-1.5) * (-rho * rho / (4.0 * t)).exp();
        assert!((k.p - want).abs() < 1e-14 * (1.0 + want));
    }
}

#[test]
fn h3_kernel_matches_monte_carlo_shell_mass() {
    // probability of landing in the geodesic shell 0.9 < ρ < 1.1 at t = 0.5,
    // from the kernel against the fraction of simulated walks
    let m = ManifoldModel::hyperbolic(3, 1.0).unwrap();
    let (t, h) = (0.5, 0.0025);
    let (lo, hi) = (0.9, 1.1);
    let shell = |r: f64| kernel_at_distance(&m, r, t).unwrap().p * 4.0 * PI * r.sinh().powi(2);
    let (exact, _) = quad::integrate(shell, lo, hi, 1e-12, 1e-12).unwrap();
    let n = 100_000u64;
    let steps = (t / h).round() as usize;
    let o = m.origin();
    let s = (2.0 * h).sqrt();
    let mut db = vec![0.0; 3];
    let mut hits = 0u64;
    for i in 0..n {
        let mut rng = PathRng::new(21, i, false);
        let mut w = Walker::new(&m, &o.coords);
        for _ in 0..steps {
            rng.fill_normals(&mut db);
            db.iter_mut().for_each(|v| *v *= s);
            w.step(&db).unwrap();
        }
        let r = m.dist(&o.coords, &w.x);
        if (lo..hi).contains(&r) {
            hits += 1;
        }
    }
    let frac = hits as f64 / n as f64;
    let se = (frac * (1.0 - frac) / n as f64).sqrt();
    assert!((frac - exact).abs() < 3.0 * se, "MC {frac} ± {se}, kernel {exact}");
}

#[test]
fn lp_norm_examples() {
    let t2 = ManifoldModel::torus(2).unwrap();
    let g = quadrature_grid(&t2, &GridSpec::new(64)).unwrap();
    assert!((lp_norm(&g, &vec![1.0; g.len()], 2.0).unwrap() - TAU).abs() < 1e-12);
    let sin = g.values(|x| x[0].sin());
    let want = (TAU * TAU * 3.0 / 8.0).powf(0.25);
    assert!((lp_norm(&g, &sin, 4.0).unwrap() - want).abs() < 1e-12);
    let bump = g.values(|x| (-(x[0] - 3.0).powi(2) - (x[1] - 2.0).powi(2)).exp());
    let peak = bump.iter().cloned().fold(0.0, f64::max);
    assert_eq!(lp_norm(&g, &bump, f64::INFINITY).unwrap(), peak);
    assert!(lp_norm(&g, &bump, 0.9).is_err());
    let mut bad = bump.clone();
    bad[3] = f64::NAN;
    assert!(lp_norm(&g, &bad, 2.0).is_err());
}

#[test]
fn kernel_rejects_nonpositive_time_and_tiny_spectral_times() {
    let s2 = ManifoldModel::sphere(2, 1.0).unwrap();
    let o = s2.origin();
    assert!(heat_kernel(&s2, &o, &o, 0.0).is_err());
    assert!(heat_kernel(&s2, &o, &o, 1e-5).is_err());
    let s3 = ManifoldModel::sphere(3, 1.0).unwrap();
    assert!(heat_kernel(&s3, &s3.origin(), &s3.origin(), 0.5).is_err());
}
