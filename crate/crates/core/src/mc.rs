//! Chunked Monte Carlo reduction.
//!
//! Sampling units (single paths, or antithetic pairs) are split into
//! fixed-size chunks. Each chunk is accumulated sequentially and the chunk
//! accumulators are merged in index order, so the result is bitwise
//! identical for a given `(seed, n_paths, chunk_size)` whatever the number
//! of worker threads.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::PathRng;

/// Execution strategy for a batch of paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    /// Rayon data-parallel chunks; identical to `Sequential` when the
    /// `parallel` feature is disabled.
    #[default]
    Parallel,
}

/// Sampling parameters shared by every Monte Carlo estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Time step; `None` means `t / 200`.
    pub h: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub antithetic: bool,
    /// Sampling units per reduction chunk. Part of the reproducibility
    /// contract.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub exec: Exec,
}

fn default_true() -> bool {
    true
}

fn default_chunk() -> usize {
    256
}

impl SimConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, h: None, seed, antithetic: true, chunk_size: default_chunk(), exec: Exec::default() }
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = Some(h);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    /// Number of steps for horizon `t`; rejects non-integer `t / h`.
    pub fn steps_for(&self, t: f64) -> Result<(usize, f64)> {
        let h = self.h.unwrap_or(t / 200.0);
        steps_for(t, h)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return invalid("n_paths must be at least 2");
        }
        if self.chunk_size == 0 {
            return invalid("chunk_size must be positive");
        }
        Ok(())
    }
}

pub(crate) fn steps_for(t: f64, h: f64) -> Result<(usize, f64)> {
    if !(t > 0.0 && t.is_finite()) {
        return invalid(format!("horizon t must be positive and finite, got {t}"));
    }
    if !(h > 0.0 && h <= t) {
        return invalid(format!("step h must satisfy 0 < h <= t, got h = {h}, t = {t}"));
    }
    let n = (t / h).round();
    if ((t / h) - n).abs() > 1e-9 * n.max(1.0) {
        return invalid(format!("t / h = {} is not an integer", t / h));
    }
    Ok((n as usize, t / n))
}

/// Running mean and centered second moment per component (Welford /
/// Chan et al. pairwise merge).
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    pub fn new(width: usize) -> Self {
        Self { n: 0, mean: vec![0.0; width], m2: vec![0.0; width] }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &xi) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = xi - *m;
            *m += delta / n;
            *s += delta * (xi - *m);
        }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean per component.
    pub fn stderr(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![f64::INFINITY; self.mean.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|s| (s.max(0.0) / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Means and standard errors of a vector-valued per-path functional.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
}

/// Runs `sample(rng, path_index, out)` over `cfg.n_paths` paths.
///
/// With antithetic sampling the unit of independence is the pair
/// `(2j, 2j + 1)`; standard errors are computed from pair averages.
pub fn run_batch<F>(cfg: &SimConfig, width: usize, sample: F) -> Result<BatchStats>
where
    F: Fn(PathRng, u64, &mut [f64]) -> Result<()> + Sync,
{
    cfg.validate()?;
    let antithetic = cfg.antithetic && cfg.n_paths >= 2;
    let per_unit = if antithetic { 2 } else { 1 };
    let n_units = cfg.n_paths / per_unit;
    let n_paths = n_units * per_unit;
    let chunk = cfg.chunk_size;
    let n_chunks = n_units.div_ceil(chunk);

    let run_chunk = |c: usize| -> Result<Accumulator> {
        let mut acc = Accumulator::new(width);
        let mut buf = vec![0.0; width];
        let mut unit = vec![0.0; width];
        let end = ((c + 1) * chunk).min(n_units);
        for u in c * chunk..end {
            unit.iter_mut().for_each(|x| *x = 0.0);
            for k in 0..per_unit {
                let idx = (u * per_unit + k) as u64;
                let rng = PathRng::for_path(cfg.seed, idx, antithetic);
                sample(rng, idx, &mut buf)?;
                for (a, b) in unit.iter_mut().zip(&buf) {
                    *a += b / per_unit as f64;
                }
            }
            acc.push(&unit);
        }
        Ok(acc)
    };

    let partials: Vec<Result<Accumulator>> = match cfg.exec {
        Exec::Sequential => (0..n_chunks).map(run_chunk).collect(),
        Exec::Parallel => par_map(n_chunks, &run_chunk),
    };

    let mut total = Accumulator::new(width);
    for p in partials {
        total.merge(&p?);
    }
    Ok(BatchStats { mean: total.mean().to_vec(), stderr: total.stderr(), n_paths })
}

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: &F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: &F) -> Vec<T> {
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn merge_matches_single_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let mut whole = Accumulator::new(1);
            xs.iter().for_each(|x| whole.push(&[*x]));
            let mut a = Accumulator::new(1);
            let mut b = Accumulator::new(1);
            xs[..split].iter().for_each(|x| a.push(&[*x]));
            xs[split..].iter().for_each(|x| b.push(&[*x]));
            a.merge(&b);
            prop_assert!((a.mean()[0] - whole.mean()[0]).abs() < 1e-9);
            prop_assert!((a.stderr()[0] - whole.stderr()[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let cfg = SimConfig::new(10_000, 5);
        let f = |mut rng: PathRng, _i: u64, out: &mut [f64]| {
            let z = rng.normal();
            out[0] = z.exp();
            out[1] = z * z;
            Ok(())
        };
        let a = run_batch(&cfg.clone().with_exec(Exec::Sequential), 2, f).unwrap();
        let b = run_batch(&cfg.with_exec(Exec::Parallel), 2, f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_functional_has_zero_stderr() {
        let cfg = SimConfig::new(1000, 1);
        let s = run_batch(&cfg, 1, |_, _, out| {
            out[0] = 1.0;
            Ok(())
        })
        .unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.stderr[0], 0.0);
    }

    #[test]
    fn step_count_must_be_integral() {
        assert!(steps_for(1.0, 0.3).is_err());
        assert_eq!(steps_for(1.0, 0.25).unwrap().0, 4);
        assert!(steps_for(1.0, 0.0).is_err());
    }
}
