//! The Kato functional `sup_x ∫_0^t E^x[V(X_s)] ds` and the exponential
//! moment `E^x[exp ∫_0^t V(X_s) ds]` of a nonnegative potential.

use serde::{Deserialize, Serialize};

use super::{params, z_score, BoundReport, Provenance, Sample, Verdict};
use crate::error::{invalid, Error, Result};
use crate::geometry::fields::ScalarField;
use crate::geometry::{ManifoldModel, Point};
use crate::mc::{run_batch, SimConfig};
use crate::rng::derive_seed;
use crate::transport::{draw_increment, Walker};

/// Largest path integral whose exponential is accumulated.
const EXP_LIMIT: f64 = 700.0;

#[derive(Clone, Debug, PartialEq)]
pub struct KatoOptions {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    /// `h` defaults to the smallest time over 100.
    pub sim: SimConfig,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KatoRow {
    pub t: f64,
    /// Index of the point attaining the supremum.
    pub point: usize,
    pub functional: f64,
    pub functional_stderr: f64,
    pub exp_moment: f64,
    pub exp_moment_stderr: f64,
    /// Paths whose integral exceeded the overflow limit; the moment is
    /// dropped when nonzero.
    pub overflowed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KatoReport {
    pub rows: Vec<KatoRow>,
    /// Fit `log E[exp ∫V] ≈ log C + θ t`.
    pub c: f64,
    pub theta: f64,
    pub nondecreasing: bool,
    pub vanishes_at_zero: bool,
    pub functional_report: BoundReport,
    pub moment_report: BoundReport,
}

/// Integrates the potential along one path, recording `(∫V, exp ∫V)` at
/// each requested node.
fn path_integrals<V: ScalarField + ?Sized>(
    m: &ManifoldModel,
    v: &V,
    x0: &[f64],
    h: f64,
    ends: &[usize],
    rng: &mut crate::rng::PathRng,
    out: &mut [f64],
) -> Result<()> {
    let mut walker = Walker::new(m, x0);
    let mut db = vec![0.0; m.dim()];
    let mut integral = 0.0;
    let mut prev = v.eval(m, &walker.x);
    let mut slot = 0;
    let last = *ends.last().expect("at least one time");
    for k in 1..=last {
        draw_increment(rng, h, &mut db);
        walker.step(&db)?;
        let cur = v.eval(m, &walker.x);
        if !(cur.is_finite() && cur >= 0.0) {
            return Err(Error::NonFinite(format!("potential value {cur} along a path")));
        }
        integral += 0.5 * h * (prev + cur);
        prev = cur;
        while slot < ends.len() && ends[slot] == k {
            out[2 * slot] = integral;
            out[2 * slot + 1] = if integral > EXP_LIMIT { f64::INFINITY } else { integral.exp() };
            slot += 1;
        }
    }
    Ok(())
}

/// Evaluates the functional at every `(t, x)` and fits the moment growth.
pub fn kato_functional<V: ScalarField + ?Sized>(
    m: &ManifoldModel,
    potential: &V,
    opts: &KatoOptions,
) -> Result<KatoReport> {
    potential.supports(m)?;
    if opts.times.is_empty() || opts.points.is_empty() {
        return invalid("the Kato functional needs times and points");
    }
    if opts.times.windows(2).any(|w| w[1] <= w[0]) || opts.times[0] <= 0.0 {
        return invalid("times must be positive and strictly increasing");
    }
    if opts.sim.n_paths < 1000 {
        return invalid("statistical checks need at least 1000 paths");
    }
    let h = opts.sim.h.unwrap_or(opts.times[0] / 100.0);
    let ends: Vec<usize> = opts
        .times
        .iter()
        .map(|t| {
            let n = (t / h).round();
            if n < 1.0 || (n * h - t).abs() > 1e-9 * t.max(1.0) {
                return invalid(format!("time {t} is not a multiple of the step {h}"));
            }
            Ok(n as usize)
        })
        .collect::<Result<_>>()?;
    let nt = opts.times.len();
    let mut per_point = Vec::new();
    for (i, x) in opts.points.iter().enumerate() {
        let sim = SimConfig { seed: derive_seed(opts.sim.seed, i as u64), ..opts.sim.clone() };
        let stats = run_batch(&sim, 2 * nt, |mut rng, _, out| {
            path_integrals(m, potential, &x.coords, h, &ends, &mut rng, out)
        })?;
        per_point.push(stats);
    }
    let mut rows = Vec::with_capacity(nt);
    for j in 0..nt {
        let (best, stats) = per_point
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.mean[2 * j].total_cmp(&b.1.mean[2 * j]))
            .expect("at least one point");
        let mom = stats.mean[2 * j + 1];
        rows.push(KatoRow {
            t: opts.times[j],
            point: best,
            functional: stats.mean[2 * j],
            functional_stderr: stats.stderr[2 * j],
            exp_moment: if mom.is_finite() { mom } else { f64::NAN },
            exp_moment_stderr: if mom.is_finite() { stats.stderr[2 * j + 1] } else { f64::NAN },
            overflowed: !mom.is_finite(),
        });
    }

    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.exp_moment > 0.0 && r.exp_moment.is_finite()).map(|r| (r.t, r.exp_moment.ln())).collect();
    let (c, theta) = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        ((my - slope * mx).exp(), slope)
    } else {
        (f64::NAN, f64::NAN)
    };

    let z = z_score(opts.confidence);
    let nondecreasing = rows.windows(2).all(|w| {
        let slack = z * (w[0].functional_stderr.powi(2) + w[1].functional_stderr.powi(2)).sqrt();
        w[1].functional >= w[0].functional - slack
    });
    // linear extrapolation of the two smallest times back to t = 0
    let vanishes_at_zero = if rows.len() >= 2 {
        let (a, b) = (&rows[0], &rows[1]);
        let at_zero = a.functional - a.t * (b.functional - a.functional) / (b.t - a.t);
        let slack = z * (a.functional_stderr + b.functional_stderr) * (b.t + a.t) / (b.t - a.t) + 1e-2 * a.functional;
        at_zero.abs() <= slack
    } else {
        rows[0].functional.is_finite()
    };

    let functional_samples: Vec<Sample> = rows
        .iter()
        .map(|r| {
            let mut s = Sample::new(params(&[("t", r.t), ("point", r.point as f64)]), r.functional, r.t, Provenance::MonteCarlo);
            s.stderr = Some(r.functional_stderr);
            s
        })
        .collect();
    let mut functional_report = BoundReport::new("kato-functional", functional_samples);
    functional_report.confidence = Some(opts.confidence);
    functional_report.set_constant("nondecreasing", if nondecreasing { 1.0 } else { 0.0 });
    functional_report.set_constant("vanishes_at_zero", if vanishes_at_zero { 1.0 } else { 0.0 });
    functional_report.passed = nondecreasing && vanishes_at_zero && functional_report.all_finite();
    functional_report.verdict = if functional_report.passed { Verdict::Pass } else { Verdict::Fail };

    let moment_samples: Vec<Sample> = rows
        .iter()
        .map(|r| {
            let mut s = Sample::new(
                params(&[("t", r.t), ("point", r.point as f64)]),
                r.exp_moment,
                (theta * r.t).exp(),
                Provenance::MonteCarlo,
            );
            s.stderr = Some(r.exp_moment_stderr);
            if r.overflowed {
                s.verdict = Verdict::Unreliable;
            }
            s
        })
        .collect();
    let mut moment_report = BoundReport::new("kato-exp-moment", moment_samples);
    moment_report.confidence = Some(opts.confidence);
    moment_report.set_constant("C", c);
    moment_report.set_constant("theta", theta);
    moment_report.passed = c.is_finite() && theta.is_finite() && moment_report.all_finite();
    moment_report.verdict = if moment_report.passed { Verdict::Pass } else { Verdict::Fail };
    if rows.iter().any(|r| r.overflowed) {
        moment_report.notes.push("exponential moment overflowed at some times; those rows are dropped".into());
    }

    Ok(KatoReport { rows, c, theta, nondecreasing, vanishes_at_zero, functional_report, moment_report })
}
