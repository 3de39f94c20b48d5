use mheat_core::geometry::{ManifoldModel, Point};
use mheat_core::transport::{damped_transport, sample_path, w_process, TransportRule};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn curved() -> Vec<ManifoldModel> {
    vec![
        ManifoldModel::sphere(2, 1.0).unwrap(),
        ManifoldModel::sphere(3, 2.0).unwrap(),
        ManifoldModel::hyperbolic(2, 1.0).unwrap(),
        ManifoldModel::hyperbolic(3, 0.5).unwrap(),
    ]
}

fn start(m: &ManifoldModel, raw: &[f64]) -> Point {
    m.exp_origin(&raw[..m.dim()])
}

/// Round-off in the hyperboloid embedding grows with the Euclidean size of
/// the coordinates, so tolerances are relative to it.
fn ambient_size(p: &Point) -> f64 {
    1.0 + p.coords.iter().map(|c| c * c).sum::<f64>()
}

fn opnorm(q: &DMatrix<f64>) -> f64 {
    q.singular_values().max()
}

#[test]
fn increments_have_variance_two_h() {
    let m = ManifoldModel::euclidean(2).unwrap();
    let h = 0.01;
    let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
    for i in 0..200 {
        let path = sample_path(&m, &m.origin(), 1.0, h, 11, i).unwrap();
        for db in &path.increments {
            for v in db {
                sum += v;
                sq += v * v;
                n += 1.0;
            }
        }
    }
    let mean = sum / n;
    let var = sq / n - mean * mean;
    assert!((var / (2.0 * h) - 1.0).abs() < 0.05, "variance {var}");
    assert!(mean.abs() < 4.0 * (2.0 * h / n).sqrt(), "mean {mean}");
}

#[test]
fn euclidean_mean_square_displacement_is_2dt() {
    let m = ManifoldModel::euclidean(3).unwrap();
    let t = 0.5;
    let n = 4000;
    let sq: Vec<f64> = (0..n)
        .map(|i| {
            let p = sample_path(&m, &m.origin(), t, 0.05, 3, i).unwrap();
            p.points.last().unwrap().coords.iter().map(|c| c * c).sum()
        })
        .collect();
    let mean = sq.iter().sum::<f64>() / n as f64;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - 2.0 * 3.0 * t).abs() < 4.0 * se, "mean {mean} ± {se}");
}

#[test]
fn sphere_nodes_stay_on_the_sphere() {
    let m = ManifoldModel::sphere(2, 1.5).unwrap();
    let path = sample_path(&m, &m.origin(), 5.0, 0.01, 9, 0).unwrap();
    for p in &path.points {
        let r: f64 = p.coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!((r - 1.5).abs() < 1e-12, "radius {r}");
    }
}

#[test]
fn analytic_damping_matches_the_constant_ricci_exponential() {
    let t = 1.0;
    for (m, rate) in [(ManifoldModel::sphere(2, 1.0).unwrap(), -1.0), (ManifoldModel::hyperbolic(2, 1.0).unwrap(), 1.0)] {
        let path = sample_path(&m, &m.origin(), t, 0.01, 4, 0).unwrap();
        let q = damped_transport(&m, &path, TransportRule::Analytic);
        let last = q.last().unwrap();
        let want = (rate * t).exp();
        assert!((opnorm(last) - want).abs() < 1e-12, "{} {}", m.name(), opnorm(last));
        assert!((last - DMatrix::identity(2, 2) * want).abs().max() < 1e-12);
    }
}

#[test]
fn flat_models_have_trivial_transport() {
    for m in [ManifoldModel::euclidean(3).unwrap(), ManifoldModel::torus(2).unwrap()] {
        let d = m.dim();
        let path = sample_path(&m, &m.origin(), 0.5, 0.05, 1, 2).unwrap();
        for rule in [TransportRule::Analytic, TransportRule::Tensor] {
            let q = damped_transport(&m, &path, rule);
            assert!(q.iter().all(|qk| (qk - DMatrix::identity(d, d)).abs().max() == 0.0));
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            let v = m.tangent_from_frame(&m.origin(), &e);
            let ws = w_process(&m, &path, &q, &v, &v, rule).unwrap();
            assert!(ws.iter().flatten().all(|c| *c == 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn damped_transport_obeys_the_ricci_bound(raw in prop::collection::vec(-1.0f64..1.0, 3), seed in 0u64..1000, h in prop::sample::select(vec![0.01, 0.02, 0.05])) {
        let t = 0.5;
        for m in curved() {
            let x0 = start(&m, &raw);
            let path = sample_path(&m, &x0, t, h, seed, 0).unwrap();
            let k = m.ricci_lower_bound().max(0.0);
            for rule in [TransportRule::Analytic, TransportRule::Tensor] {
                let q = damped_transport(&m, &path, rule);
                for (qk, tk) in q.iter().zip(&path.times) {
                    prop_assert!(opnorm(qk) <= (k * tk).exp() * (1.0 + 10.0 * h), "{} |Q| = {}", m.name(), opnorm(qk));
                }
            }
        }
    }

    #[test]
    fn transported_frames_stay_orthonormal_and_tangent(raw in prop::collection::vec(-1.0f64..1.0, 3), seed in 0u64..1000) {
        let h = 0.02;
        for m in curved() {
            let x0 = start(&m, &raw);
            let path = sample_path(&m, &x0, 1.0, h, seed, 1).unwrap();
            for (p, f) in path.points.iter().zip(&path.frames) {
                let tol = 1e-12 * ambient_size(p);
                prop_assert!(m.constraint_residual(&p.coords) < tol);
                prop_assert!(f.orthonormality_defect(&m) <= 10.0 * h);
                for e in &f.vectors {
                    prop_assert!(m.tangent_residual(&p.coords, e) < tol, "{} {}", m.name(), m.tangent_residual(&p.coords, e));
                }
            }
        }
    }

    #[test]
    fn analytic_and_tensor_rules_agree(raw in prop::collection::vec(-1.0f64..1.0, 3), seed in 0u64..1000, a in 0usize..3, b in 0usize..3) {
        for m in curved() {
            let d = m.dim();
            let x0 = start(&m, &raw);
            let path = sample_path(&m, &x0, 0.4, 0.02, seed, 0).unwrap();
            let qa = damped_transport(&m, &path, TransportRule::Analytic);
            let qt = damped_transport(&m, &path, TransportRule::Tensor);
            let tol = 1e-10 * path.points.iter().map(ambient_size).fold(0.0, f64::max);
            for (x, y) in qa.iter().zip(&qt) {
                prop_assert!((x - y).abs().max() < tol, "{} {}", m.name(), (x - y).abs().max());
            }
            let mut ea = vec![0.0; d];
            let mut eb = vec![0.0; d];
            ea[a % d] = 1.0;
            eb[b % d] = 1.0;
            let v = m.tangent_from_frame(&x0, &ea);
            let w = m.tangent_from_frame(&x0, &eb);
            let wa = w_process(&m, &path, &qa, &v, &w, TransportRule::Analytic).unwrap();
            let wt = w_process(&m, &path, &qt, &v, &w, TransportRule::Tensor).unwrap();
            for (x, y) in wa.iter().zip(&wt) {
                for (p, q) in x.iter().zip(y) {
                    prop_assert!((p - q).abs() < tol, "{} {p} vs {q}", m.name());
                }
            }
        }
    }

    #[test]
    fn paths_are_deterministic_in_their_inputs(seed in 0u64..1000, index in 0u64..1000) {
        let m = ManifoldModel::hyperbolic(2, 1.0).unwrap();
        let a = sample_path(&m, &m.origin(), 0.3, 0.01, seed, index).unwrap();
        let b = sample_path(&m, &m.origin(), 0.3, 0.01, seed, index).unwrap();
        prop_assert_eq!(&a, &b);
        let c = sample_path(&m, &m.origin(), 0.3, 0.01, seed.wrapping_add(1), index).unwrap();
        prop_assert_ne!(a.increments, c.increments);
    }
}
