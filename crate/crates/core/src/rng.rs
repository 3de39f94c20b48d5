//! Counter-based Gaussian streams.
//!
//! Every path draws from its own ChaCha8 stream selected by the path's
//! stream id, so the normals of step `k` of path `i` depend only on
//! `(seed, i, k)` and never on scheduling. Normals are produced by
//! Box–Muller, which consumes a fixed number of words per draw; step `k`
//! therefore starts at a known word position.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// A per-path source of standard normals.
#[derive(Clone, Debug)]
pub struct PathRng {
    rng: ChaCha8Rng,
    sign: f64,
    spare: Option<f64>,
}

impl PathRng {
    /// Stream `stream` of the generator keyed by `seed`. `negate` flips the
    /// sign of every normal (antithetic partner).
    pub fn new(seed: u64, stream: u64, negate: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(0);
        Self { rng, sign: if negate { -1.0 } else { 1.0 }, spare: None }
    }

    /// Stream for path `path_index`; with `antithetic`, paths `2j` and
    /// `2j + 1` share stream `j` with opposite signs.
    pub fn for_path(seed: u64, path_index: u64, antithetic: bool) -> Self {
        if antithetic {
            Self::new(seed, path_index / 2, path_index % 2 == 1)
        } else {
            Self::new(seed, path_index, false)
        }
    }

    /// Positions the stream at the start of step `step` when every step
    /// draws `per_step` normals.
    pub fn seek_step(&mut self, step: u64, per_step: usize) {
        let pairs = per_step.div_ceil(2) as u128;
        // two u64 (four u32 words) per Box–Muller pair
        self.rng.set_word_pos(step as u128 * pairs * 4);
        self.spare = None;
    }

    fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    fn box_muller(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// Fills `out` with independent N(0, 1) draws for one step. Pairs are
    /// never split across steps so the word count per step is fixed.
    pub fn fill_normals(&mut self, out: &mut [f64]) {
        self.spare = None;
        let mut i = 0;
        while i < out.len() {
            let (a, b) = self.box_muller();
            out[i] = self.sign * a;
            if i + 1 < out.len() {
                out[i + 1] = self.sign * b;
            }
            i += 2;
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = self.box_muller();
        self.spare = Some(self.sign * b);
        self.sign * a
    }
}

/// Derives an independent seed for a sub-experiment (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_draws_are_addressable() {
        let mut seq = PathRng::new(7, 3, false);
        let mut steps = Vec::new();
        for _ in 0..5 {
            let mut buf = [0.0; 3];
            seq.fill_normals(&mut buf);
            steps.push(buf);
        }
        let mut direct = PathRng::new(7, 3, false);
        direct.seek_step(3, 3);
        let mut buf = [0.0; 3];
        direct.fill_normals(&mut buf);
        assert_eq!(buf, steps[3]);
    }

    #[test]
    fn antithetic_partner_is_negated() {
        let mut a = PathRng::for_path(11, 4, true);
        let mut b = PathRng::for_path(11, 5, true);
        let mut x = [0.0; 4];
        let mut y = [0.0; 4];
        a.fill_normals(&mut x);
        b.fill_normals(&mut y);
        for (p, q) in x.iter().zip(&y) {
            assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn moments_are_standard() {
        let mut r = PathRng::new(1, 0, false);
        let n = 200_000;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let z = r.normal();
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }
}
