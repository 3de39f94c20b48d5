//! Numerical checks of heat-kernel, semigroup and Calderón–Zygmund
//! inequalities on the model spaces.
//!
//! Every inequality of the form `lhs ≤ C · rhs` is evaluated over a
//! parameter grid. The reported constant is the largest observed ratio
//! `lhs / rhs`; a deterministic check passes when every ratio is finite
//! and the constant moves by at most 10% when the grid is refined.
//! Monte Carlo checks compare against `rhs` with a one-sided
//! `z · stderr` slack and report "inconclusive" instead of failing when
//! the noise is too large to decide.

mod cz;
mod kato;
mod kernel_checks;
mod semigroup_checks;

pub use cz::{cz_scan, random_family, CzFunction, CzMode, CzOptions, CzReport};
pub use kato::{kato_functional, KatoOptions, KatoReport, KatoRow};
pub use kernel_checks::{check_gaffney, check_kernel_bounds, check_weighted_l2, Ball};
pub use semigroup_checks::{check_semigroup_bounds, SemigroupCheckOptions};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// Relative change of a fitted constant allowed under refinement.
pub const STABILITY_TOLERANCE: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// An inclusive one-dimensional parameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub min: f64,
    pub max: f64,
    pub n: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl ParamGrid {
    pub fn linear(min: f64, max: f64, n: usize) -> Self {
        ParamGrid { min, max, n, spacing: Spacing::Linear }
    }

    pub fn log(min: f64, max: f64, n: usize) -> Self {
        ParamGrid { min, max, n, spacing: Spacing::Log }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return invalid(format!("{name}: need finite min <= max, got [{}, {}]", self.min, self.max));
        }
        if self.n == 0 || (self.n == 1 && self.min != self.max) {
            return invalid(format!("{name}: need at least two points for a non-degenerate range"));
        }
        if self.spacing == Spacing::Log && self.min <= 0.0 {
            return invalid(format!("{name}: log spacing needs a positive minimum"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.min];
        }
        let last = (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                if i + 1 == self.n {
                    return self.max;
                }
                let u = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.min + u * (self.max - self.min),
                    Spacing::Log => self.min * (self.max / self.min).powf(u),
                }
            })
            .collect()
    }

    /// The grid with a midpoint inserted between every pair of nodes.
    pub fn refined(&self) -> Self {
        ParamGrid { n: if self.n > 1 { 2 * self.n - 1 } else { 1 }, ..self.clone() }
    }
}

/// Parameters of the kernel, weighted-L² and semigroup checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCheckConfig {
    /// Gaussian exponent of the kernel bound, in `(0, 1/4)`.
    pub alpha: f64,
    /// Gaussian exponent of the Hessian bounds, in `(0, 2α)`; the tail
    /// bound additionally needs `β < α`.
    pub beta: f64,
    /// Weight exponent of the weighted L² bounds, in `(0, 2α)`.
    pub gamma: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Exponential-moment rate of the curvature potential.
    #[serde(default)]
    pub theta: f64,
    /// Lᵖ exponent of the semigroup norm check.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_t_grid")]
    pub t_grid: ParamGrid,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: ParamGrid,
    #[serde(default = "default_s_grid")]
    pub s_grid: ParamGrid,
    /// Two-sided confidence of statistical verdicts.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Resolution of spatial quadrature grids.
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_p() -> f64 {
    2.0
}
fn default_t_grid() -> ParamGrid {
    ParamGrid::log(0.01, 4.0, 20)
}
fn default_rho_grid() -> ParamGrid {
    ParamGrid::linear(0.0, 5.0, 20)
}
fn default_s_grid() -> ParamGrid {
    ParamGrid::log(0.05, 2.0, 12)
}
fn default_confidence() -> f64 {
    0.997
}
fn default_resolution() -> usize {
    96
}

impl BoundCheckConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let cfg = BoundCheckConfig {
            alpha,
            beta,
            gamma,
            sigma: default_sigma(),
            theta: 0.0,
            p: default_p(),
            t_grid: default_t_grid(),
            rho_grid: default_rho_grid(),
            s_grid: default_s_grid(),
            confidence: default_confidence(),
            grid_resolution: default_resolution(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha;
        if !(a > 0.0 && a < 0.25) {
            return invalid(format!("α must lie in (0, 1/4), got {a}"));
        }
        if !(self.gamma > 0.0) {
            return invalid(format!("γ must be positive, got {}", self.gamma));
        }
        if self.gamma >= 2.0 * a {
            return invalid(format!("γ ≥ 2α: need γ < 2α, got γ = {} and 2α = {}", self.gamma, 2.0 * a));
        }
        if !(self.beta > 0.0) {
            return invalid(format!("β must be positive, got {}", self.beta));
        }
        if self.beta >= 2.0 * a {
            return invalid(format!("β ≥ 2α: need β < 2α, got β = {} and 2α = {}", self.beta, 2.0 * a));
        }
        if !(self.sigma > 0.0) {
            return invalid(format!("σ must be positive, got {}", self.sigma));
        }
        if !(self.theta >= 0.0) {
            return invalid(format!("θ must be nonnegative, got {}", self.theta));
        }
        if !(self.p >= 1.0) {
            return invalid(format!("p must be at least 1, got {}", self.p));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return invalid(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.grid_resolution < 8 {
            return invalid("grid_resolution must be at least 8");
        }
        self.t_grid.validate("t_grid")?;
        self.rho_grid.validate("rho_grid")?;
        self.s_grid.validate("s_grid")?;
        if self.t_grid.min <= 0.0 || self.s_grid.min <= 0.0 {
            return invalid("time grids must be positive");
        }
        if self.rho_grid.min < 0.0 {
            return invalid("distances must be nonnegative");
        }
        Ok(())
    }

    /// Multiplier of the standard error in statistical verdicts.
    pub fn z(&self) -> f64 {
        z_score(self.confidence)
    }
}

/// Two-sided normal quantile: 0.997 gives about 2.97.
pub fn z_score(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * confidence)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::ClosedForm => "closed-form",
            Provenance::Quadrature => "quadrature",
            Provenance::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    /// Excluded because the oracle cannot resolve the sample.
    Unreliable,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Unreliable => "unreliable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: f64,
}

pub fn params(pairs: &[(&str, f64)]) -> Vec<Param> {
    pairs.iter().map(|(n, v)| Param { name: n.to_string(), value: *v }).collect()
}

/// One evaluated instance of an inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub params: Vec<Param>,
    pub lhs: f64,
    /// Right side without the fitted constant.
    pub rhs: f64,
    pub ratio: f64,
    pub stderr: Option<f64>,
    pub verdict: Verdict,
    pub provenance: Provenance,
}

impl Sample {
    pub fn new(params: Vec<Param>, lhs: f64, rhs: f64, provenance: Provenance) -> Self {
        Sample { params, lhs, rhs, ratio: lhs / rhs, stderr: None, verdict: Verdict::Pass, provenance }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }
}

/// Outcome of one inequality check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inequality_id: String,
    pub samples: Vec<Sample>,
    /// Largest ratio over the reliable samples.
    pub fitted_constant: f64,
    /// The same constant on the refined grid, when refinement was run.
    pub refined_constant: Option<f64>,
    /// Other fitted or supplied constants (exponential rates etc.).
    pub constants: Vec<Param>,
    pub verdict: Verdict,
    pub passed: bool,
    /// Confidence level of statistical verdicts, if any.
    pub confidence: Option<f64>,
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn new(id: &str, samples: Vec<Sample>) -> Self {
        let fitted = max_ratio(&samples);
        BoundReport {
            inequality_id: id.to_string(),
            samples,
            fitted_constant: fitted,
            refined_constant: None,
            constants: Vec::new(),
            verdict: Verdict::Inconclusive,
            passed: false,
            confidence: None,
            notes: Vec::new(),
        }
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn set_constant(&mut self, name: &str, value: f64) {
        match self.constants.iter_mut().find(|p| p.name == name) {
            Some(p) => p.value = value,
            None => self.constants.push(Param { name: name.to_string(), value }),
        }
    }

    pub(crate) fn all_finite(&self) -> bool {
        self.samples.iter().filter(|s| s.verdict != Verdict::Unreliable).all(|s| s.ratio.is_finite())
            && self.fitted_constant.is_finite()
    }

    /// Deterministic verdict: finite ratios and a constant that is stable
    /// under refinement.
    pub(crate) fn finish_deterministic(&mut self, refined: &BoundReport) {
        self.refined_constant = Some(refined.fitted_constant);
        let finite = self.all_finite() && refined.all_finite();
        let stable = stable(self.fitted_constant, refined.fitted_constant);
        if !finite {
            self.notes.push("non-finite ratio".into());
        }
        if !stable {
            self.notes.push(format!(
                "constant moved from {:.6e} to {:.6e} under refinement",
                self.fitted_constant, refined.fitted_constant
            ));
        }
        let unreliable = self.samples.iter().filter(|s| s.verdict == Verdict::Unreliable).count();
        if unreliable > 0 {
            self.notes.push(format!("{unreliable} samples beyond oracle precision excluded from the fit"));
        }
        self.passed = finite && stable;
        self.verdict = if self.passed { Verdict::Pass } else { Verdict::Fail };
    }

    /// Number of samples by verdict.
    pub fn count(&self, v: Verdict) -> usize {
        self.samples.iter().filter(|s| s.verdict == v).count()
    }
}

pub(crate) fn max_ratio(samples: &[Sample]) -> f64 {
    let mut best = 0.0f64;
    for s in samples.iter().filter(|s| s.verdict != Verdict::Unreliable) {
        if !s.ratio.is_finite() {
            return f64::NAN;
        }
        best = best.max(s.ratio);
    }
    best
}

/// `true` when both constants are finite and within the stability
/// tolerance of each other.
pub fn stable(coarse: f64, fine: f64) -> bool {
    if !(coarse.is_finite() && fine.is_finite()) {
        return false;
    }
    let scale = coarse.abs().max(fine.abs());
    scale == 0.0 || (coarse - fine).abs() <= STABILITY_TOLERANCE * scale
}

/// Exponential growth rate of `m` in `x`: the least-squares slope over
/// the upper half of the grid, clamped at zero. `xs` must be increasing.
pub(crate) fn growth_rate(xs: &[f64], ms: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let start = (n / 2).min(n - 2);
    let pts: Vec<(f64, f64)> =
        xs[start..].iter().zip(&ms[start..]).filter(|(_, m)| m.is_finite()).map(|(x, m)| (*x, *m)).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 }
}

/// Pointwise maximum of `values` grouped by the key `key`, returned in
/// increasing key order.
pub(crate) fn max_by_key(keys: &[f64], values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (&k, &v) in keys.iter().zip(values) {
        match pairs.iter_mut().find(|(pk, _)| *pk == k) {
            Some(p) => p.1 = p.1.max(v),
            None => pairs.push((k, v)),
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_above_two_alpha_is_rejected() {
        let err = BoundCheckConfig::new(0.2, 0.2, 0.6).unwrap_err().to_string();
        assert!(err.contains("γ ≥ 2α"), "{err}");
        assert!(BoundCheckConfig::new(0.25, 0.2, 0.3).is_err());
        assert!(BoundCheckConfig::new(0.24, 0.2, 0.3).is_ok());
    }

    #[test]
    fn refined_grid_contains_the_original_nodes() {
        for g in [ParamGrid::linear(0.0, 5.0, 20), ParamGrid::log(0.01, 4.0, 20)] {
            let a = g.values();
            let b = g.refined().values();
            assert_eq!(b.len(), 39);
            for (i, v) in a.iter().enumerate() {
                assert!((b[2 * i] - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn z_score_matches_three_sigma() {
        assert!((z_score(0.997) - 2.9677).abs() < 1e-3);
    }

    #[test]
    fn growth_rate_fits_the_upper_half() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ms = [0.0, 5.0, 5.5, 6.5, 7.5];
        assert!((growth_rate(&xs, &ms) - 1.0).abs() < 1e-12);
        assert_eq!(growth_rate(&xs, &[4.0, 3.0, 2.0, 1.0, 0.0]), 0.0);
    }
}
