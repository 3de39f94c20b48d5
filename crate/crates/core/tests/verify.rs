use std::f64::consts::PI;

use mheat_core::geometry::fields::{Constant, CurvatureNormSquared, Profile, Ridge, ScalarField};
use mheat_core::geometry::{curvature_package, ManifoldModel};
use mheat_core::mc::SimConfig;
use mheat_core::oracle::SphericalExpansion;
use mheat_core::transport::TransportRule;
use mheat_core::verify::{
    check_gaffney, check_kernel_bounds, check_semigroup_bounds, check_weighted_l2, cz_scan, kato_functional,
    random_family, Ball, BoundCheckConfig, CzFunction, CzOptions, KatoOptions, ParamGrid, SemigroupCheckOptions, Verdict,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

#[test]
fn euclidean_kernel_samples_match_closed_forms() {
    let m = ManifoldModel::euclidean(2).unwrap();
    let mut cfg = BoundCheckConfig::new(0.2, 0.2, 0.3).unwrap();
    cfg.t_grid = ParamGrid::log(0.01, 4.0, 9);
    cfg.rho_grid = ParamGrid::linear(0.0, 5.0, 11);
    let (gauss, hess) = check_kernel_bounds(&m, &cfg).unwrap();
    assert!(gauss.passed && hess.passed);
    assert!(close(gauss.constant("p_term").unwrap(), 0.25, 1e-6), "{:?}", gauss.constants);
    for (g, h) in gauss.samples.iter().zip(&hess.samples) {
        let (rho, t) = (g.param("rho").unwrap(), g.param("t").unwrap());
        let p = (-rho * rho / (4.0 * t)).exp() / (4.0 * PI * t);
        let dp = p * (rho * rho / (4.0 * t * t) - 1.0 / t);
        assert!(close(g.lhs, p + t * dp.abs(), 1e-6), "ρ = {rho}, t = {t}");
        let hs = p * (rho.powi(4) / (16.0 * t.powi(4)) - rho * rho / (4.0 * t.powi(3)) + 1.0 / (2.0 * t * t)).sqrt();
        assert!(close(h.lhs, hs, 1e-6), "ρ = {rho}, t = {t}: {} vs {hs}", h.lhs);
        assert!(h.ratio.is_finite());
    }
}

#[test]
fn sphere_kernel_bounds_are_refinement_stable() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let mut cfg = BoundCheckConfig::new(0.2, 0.2, 0.3).unwrap();
    cfg.t_grid = ParamGrid::log(0.02, 2.0, 8);
    cfg.rho_grid = ParamGrid::linear(0.0, 3.0, 8);
    let (gauss, hess) = check_kernel_bounds(&m, &cfg).unwrap();
    assert!(gauss.passed, "{:?}", gauss.notes);
    assert!(hess.passed, "{:?}", hess.notes);
    for r in [&gauss, &hess] {
        let fine = r.refined_constant.unwrap();
        assert!((fine - r.fitted_constant).abs() <= 0.1 * r.fitted_constant);
    }
}

#[test]
fn gamma_at_or_above_two_alpha_is_rejected() {
    for gamma in [0.4, 0.5] {
        let err = BoundCheckConfig::new(0.2, 0.1, gamma).unwrap_err().to_string();
        assert!(err.contains("γ ≥ 2α") && err.contains("γ < 2α"), "{err}");
    }
}

/// `∫ (p² + s|∇p|² + s²|Δp|²) e^{γρ²/s}` and `∫ |Hess p|² e^{γρ²/s}` for the
/// Gaussian kernel on the plane, from the moments `∫ρ^{2k} e^{-aρ²}`.
fn planar_weighted_integrals(s: f64, gamma: f64) -> (f64, f64) {
    let c = (4.0 * PI * s).powi(-2);
    let a = (0.5 - gamma) / s;
    let m0 = PI / a;
    let m1 = PI / (a * a);
    let m2 = 2.0 * PI / a.powi(3);
    let i1 = c * (m0 + m1 / (4.0 * s) + m2 / (16.0 * s * s) - m1 / (2.0 * s) + m0);
    let i2 = c * (m2 / (16.0 * s.powi(4)) - m1 / (4.0 * s.powi(3)) + m0 / (2.0 * s * s));
    (i1, i2)
}

#[test]
fn euclidean_weighted_integrals_match_gaussian_moments() {
    let m = ManifoldModel::euclidean(2).unwrap();
    let mut cfg = BoundCheckConfig::new(0.24, 0.2, 0.3).unwrap();
    cfg.s_grid = ParamGrid::linear(0.5, 1.0, 2);
    let [kernel, hess, _] = check_weighted_l2(&m, &cfg).unwrap();
    for (k, h) in kernel.samples.iter().zip(&hess.samples) {
        let s = k.param("s").unwrap();
        let (i1, i2) = planar_weighted_integrals(s, cfg.gamma);
        assert!(close(k.lhs, i1, 1e-6), "s = {s}: {} vs {i1}", k.lhs);
        assert!(close(h.lhs, i2, 1e-6), "s = {s}: {} vs {i2}", h.lhs);
    }
}

#[test]
fn torus_weighted_bounds_are_stable() {
    let m = ManifoldModel::torus(2).unwrap();
    let cfg = BoundCheckConfig::new(0.24, 0.2, 0.3).unwrap();
    for r in check_weighted_l2(&m, &cfg).unwrap() {
        assert!(r.samples.iter().all(|s| s.ratio.is_finite()), "{}", r.inequality_id);
        assert!(r.passed, "{}: {:?}", r.inequality_id, r.notes);
    }
}

#[test]
fn tail_bound_needs_beta_below_alpha() {
    let m = ManifoldModel::euclidean(2).unwrap();
    let cfg = BoundCheckConfig::new(0.2, 0.3, 0.3).unwrap();
    assert!(check_weighted_l2(&m, &cfg).is_err());
}

#[test]
fn gaffney_rejects_overlapping_sets_and_decays() {
    let m = ManifoldModel::torus(2).unwrap();
    let mut cfg = BoundCheckConfig::new(0.2, 0.2, 0.3).unwrap();
    cfg.t_grid = ParamGrid::log(0.01, 1.0, 8);
    cfg.grid_resolution = 48;
    let e = Ball { center: vec![1.0, 1.0], radius: 0.3 };
    assert!(check_gaffney(&m, &cfg, 2.0, &e, &e).is_err());
    let near = Ball { center: vec![1.4, 1.0], radius: 0.3 };
    assert!(check_gaffney(&m, &cfg, 2.0, &e, &near).is_err());
    let far = Ball { center: vec![1.0 + PI, 1.0 + PI], radius: 0.3 };
    for p in [2.0, 4.0] {
        let r = check_gaffney(&m, &cfg, p, &e, &far).unwrap();
        assert!(r.fitted_constant.is_finite(), "p = {p}");
        let first = r.samples.iter().min_by(|a, b| a.param("t").unwrap().total_cmp(&b.param("t").unwrap())).unwrap();
        assert!(first.lhs < 1e-6, "p = {p}: lhs at the smallest time {}", first.lhs);
    }
}

fn kato_opts(m: &ManifoldModel, times: Vec<f64>) -> KatoOptions {
    KatoOptions {
        points: vec![m.origin(), m.exp_origin(&vec![0.7; m.dim()])],
        times,
        sim: SimConfig::new(1000, 4).with_h(0.01),
        confidence: 0.997,
    }
}

#[test]
fn kato_functional_of_constants() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let times = vec![0.1, 0.2, 0.3, 0.5];
    let zero = kato_functional(&m, &Constant(0.0), &kato_opts(&m, times.clone())).unwrap();
    for r in &zero.rows {
        assert_eq!(r.functional, 0.0);
        assert_eq!(r.exp_moment, 1.0);
    }
    assert_eq!(zero.theta, 0.0);
    assert!(zero.nondecreasing && zero.vanishes_at_zero);

    let c = 1.7;
    let rep = kato_functional(&m, &Constant(c), &kato_opts(&m, times.clone())).unwrap();
    for r in &rep.rows {
        assert!((r.functional - c * r.t).abs() < 1e-12);
        assert!((r.exp_moment - (c * r.t).exp()).abs() < 1e-10);
    }
    assert!((rep.theta - c).abs() < 1e-10);
    // additivity in time: F(0.2 + 0.3) = F(0.2) + F(0.3)
    let f = |t: f64| rep.rows.iter().find(|r| (r.t - t).abs() < 1e-12).unwrap().functional;
    assert!((f(0.5) - f(0.2) - f(0.3)).abs() < 1e-12);
}

#[test]
fn kato_functional_of_the_curvature_norm() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let pkg = curvature_package(&m, &m.origin(), &m.frame_at(&m.origin().coords)).unwrap();
    let r_sq = pkg.r_opnorm * pkg.r_opnorm;
    let v = CurvatureNormSquared::new(&m).unwrap();
    assert!((v.eval(&m, &m.origin().coords) - r_sq).abs() < 1e-10);
    let times = vec![0.1, 0.2, 0.4];
    let a = kato_functional(&m, &v, &kato_opts(&m, times.clone())).unwrap();
    let b = kato_functional(&m, &Constant(r_sq), &kato_opts(&m, times)).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert!((x.functional - r_sq * x.t).abs() < 1e-10);
        assert!((x.functional - y.functional).abs() < 1e-10);
    }
}

#[test]
fn kato_rejects_too_few_paths() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let mut opts = kato_opts(&m, vec![0.1, 0.2]);
    opts.sim.n_paths = 999;
    assert!(kato_functional(&m, &Constant(1.0), &opts).is_err());
}

fn semigroup_opts(m: &ManifoldModel) -> SemigroupCheckOptions {
    SemigroupCheckOptions {
        points: vec![m.origin()],
        times: vec![0.25, 0.5, 1.0],
        sim: SimConfig::new(1000, 8).with_h(0.025),
        rule: TransportRule::Analytic,
        lp_check: false,
    }
}

#[test]
fn semigroup_bounds_for_a_constant() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let cfg = BoundCheckConfig::new(0.2, 0.2, 0.3).unwrap();
    let [_, _, dom] = check_semigroup_bounds(&m, &Constant(1.0), &cfg, &semigroup_opts(&m)).unwrap();
    for s in &dom.samples {
        assert_eq!(s.lhs, 0.0);
        assert_ne!(s.verdict, Verdict::Fail);
    }
}

#[test]
fn semigroup_pointwise_bound_for_a_square() {
    let m = ManifoldModel::euclidean(2).unwrap();
    let f = Ridge::new("x1^2", vec![1.0, 0.0], Profile::Square);
    let cfg = BoundCheckConfig::new(0.2, 0.2, 0.3).unwrap();
    let mut opts = semigroup_opts(&m);
    opts.points.push(m.point(vec![1.0, -0.5]).unwrap());
    let [point, _, dom] = check_semigroup_bounds(&m, &f, &cfg, &opts).unwrap();
    for s in &point.samples {
        let t = s.param("t").unwrap();
        assert!((s.lhs - 2.0 * t).abs() < 1e-10, "t = {t}: {}", s.lhs);
        assert!(s.ratio.is_finite());
    }
    assert_ne!(point.verdict, Verdict::Fail);
    assert_eq!(dom.count(Verdict::Fail), 0);
}

#[test]
fn semigroup_checks_reject_too_few_paths() {
    let m = ManifoldModel::euclidean(2).unwrap();
    let cfg = BoundCheckConfig::new(0.2, 0.2, 0.3).unwrap();
    let mut opts = semigroup_opts(&m);
    opts.sim.n_paths = 500;
    assert!(check_semigroup_bounds(&m, &Constant(1.0), &cfg, &opts).is_err());
}

#[test]
fn flat_l2_identity_holds_exactly() {
    let m = ManifoldModel::torus(2).unwrap();
    let family = random_family(&m, 20, 8, 3).unwrap();
    let rep = cz_scan(&m, &family, &CzOptions::spectral(2.0, 1.0)).unwrap();
    let l2 = rep.l2.unwrap();
    assert!(l2.passed);
    for s in &l2.samples {
        assert!((s.lhs / s.rhs - 1.0).abs() < 1e-10, "{} vs {}", s.lhs, s.rhs);
    }
    assert!(rep.parseval_residual < 1e-10);
    assert!(l2.constant("bochner_residual").unwrap() < 1e-8);
}

#[test]
fn sphere_harmonics_satisfy_the_l2_inequality() {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let family: Vec<CzFunction> =
        (1..=6).flat_map(|l| (-(l as i64)..=l as i64).map(move |k| CzFunction::Spherical(SphericalExpansion::single(l, k)))).collect();
    let rep = cz_scan(&m, &family, &CzOptions::spectral(2.0, 1.0)).unwrap();
    let l2 = rep.l2.unwrap();
    assert_eq!(l2.constant("K"), Some(0.0));
    for s in &l2.samples {
        assert!(s.lhs <= s.rhs * (1.0 + 1e-10), "{} > {}", s.lhs, s.rhs);
        assert_eq!(s.verdict, Verdict::Pass);
    }
    assert!(rep.parseval_residual < 1e-10);
}

#[test]
fn resolvent_scan_is_finite_for_p4() {
    let m = ManifoldModel::torus(2).unwrap();
    let family = random_family(&m, 40, 4, 9).unwrap();
    let mut opts = CzOptions::spectral(4.0, 1.0);
    opts.subfamily = Some(10);
    let rep = cz_scan(&m, &family, &opts).unwrap();
    assert!(rep.resolvent.fitted_constant.is_finite() && rep.resolvent.fitted_constant > 0.0);
    assert!(rep.l2.is_none());
    assert!(cz_scan(&m, &family, &CzOptions::spectral(1.0, 1.0)).is_err());
}
