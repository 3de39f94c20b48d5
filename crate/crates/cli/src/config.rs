//! Experiment configuration: TOML schema, loading and validation.
//!
//! Validation failures are reported against the line of the offending key
//! (or of its enclosing table when the key was left at its default).

use std::path::Path;

use mheat_core::geometry::ManifoldModel;
use mheat_core::semigroup::HessianMode;
use mheat_core::transport::TransportRule;
use mheat_core::verify::{BoundCheckConfig, CzMode, ParamGrid};
use serde::{Deserialize, Serialize};
use toml::de::{DeTable, DeValue};

use crate::error::{CliError, Result};

fn default_paths() -> usize {
    10_000
}

fn default_confidence() -> f64 {
    0.997
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Time step; defaults to `t / 200`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Output directory, overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub manifold: ManifoldModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSpec>,
    pub experiment: Experiment,
}

/// Built-in test functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `sin(a·x)`
    Sin { direction: Vec<f64> },
    /// `cos(a·x)`
    Cos { direction: Vec<f64> },
    /// `a·x` in ambient coordinates
    Linear { direction: Vec<f64> },
    /// `(a·x)²`
    Square { direction: Vec<f64> },
    /// Smooth compactly supported bump on flat models.
    Bump { center: Vec<f64>, radius: f64 },
    /// Gaussian-profile bump on curved models; centered at the base point
    /// by default.
    GaussianBump {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        width: f64,
    },
    /// Random trigonometric polynomial on a torus.
    Trig {
        degree: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Random spherical-harmonic expansion on the 2-sphere.
    Spherical {
        degree: usize,
        #[serde(default)]
        seed: u64,
    },
}

/// Built-in potentials for the Kato functional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Constant { value: f64 },
    /// `|R|²`, constant on every model.
    CurvatureNormSquared {},
    /// `amplitude` times a smooth bump (flat models).
    Bump { center: Vec<f64>, radius: f64, amplitude: f64 },
    /// `amplitude` times a Gaussian bump (curved models).
    GaussianBump {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        width: f64,
        amplitude: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Experiment {
    Simulate(SimulateSpec),
    Estimate(EstimateSpec),
    Verify(VerifySpec),
    Czscan(CzscanSpec),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::Estimate(_) => "estimate",
            Experiment::Verify(_) => "verify",
            Experiment::Czscan(_) => "czscan",
        }
    }
}

/// `P_t f` at several step sizes, for weak-error studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub t: f64,
    /// Start points in ambient coordinates; the base point by default.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    /// Step counts per level; `[200]` by default.
    #[serde(default)]
    pub steps: Vec<usize>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Pt,
    Grad,
    Hess,
    GreenHess,
}

impl Quantity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quantity::Pt => "pt",
            Quantity::Grad => "grad",
            Quantity::Hess => "hess",
            Quantity::GreenHess => "green_hess",
        }
    }
}

/// Monte Carlo estimates of `P_t f`, its derivatives, or the Green
/// operator, compared against closed forms when the field has one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    pub quantity: Quantity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default)]
    pub mode: HessianMode,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    /// Directions in frame coordinates; `e₁` by default, `w = v` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Fraction of the horizon carrying the first Bismut weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_nodes: Option<usize>,
    #[serde(default)]
    pub rule: TransportRule,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    KernelBounds,
    WeightedL2,
    Gaffney,
    SemigroupBounds,
    Kato,
}

impl CheckKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckKind::KernelBounds => "kernel-bounds",
            CheckKind::WeightedL2 => "weighted-l2",
            CheckKind::Gaffney => "gaffney",
            CheckKind::SemigroupBounds => "semigroup-bounds",
            CheckKind::Kato => "kato",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub check: CheckKind,
    #[serde(default = "default_exponent")]
    pub alpha: f64,
    #[serde(default = "default_exponent")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_one")]
    pub sigma: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<ParamGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<ParamGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_grid: Option<ParamGrid>,
    /// Lᵖ exponents (gaffney, semigroup-bounds); one report set per value.
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<BallSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<BallSpec>,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub rule: TransportRule,
    #[serde(default)]
    pub lp_check: bool,
}

fn default_exponent() -> f64 {
    0.2
}
fn default_gamma() -> f64 {
    0.3
}
fn default_one() -> f64 {
    1.0
}
fn default_family() -> usize {
    50
}
fn default_degree() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzscanSpec {
    pub p: Vec<f64>,
    #[serde(default = "default_one")]
    pub sigma: f64,
    #[serde(default = "default_family")]
    pub family_size: usize,
    /// Leading subfamily compared against the full family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subfamily: Option<usize>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Seed of the random family; the run seed by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_seed: Option<u64>,
    #[serde(default)]
    pub mode: CzMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
}

impl VerifySpec {
    pub fn bound_config(&self) -> BoundCheckConfig {
        let mut cfg = BoundCheckConfig::new(0.2, 0.2, 0.3).expect("defaults are valid");
        cfg.alpha = self.alpha;
        cfg.beta = self.beta;
        cfg.gamma = self.gamma;
        cfg.sigma = self.sigma;
        cfg.theta = self.theta;
        cfg.confidence = self.confidence;
        if let Some(r) = self.grid_resolution {
            cfg.grid_resolution = r;
        }
        if let Some(g) = &self.t_grid {
            cfg.t_grid = g.clone();
        }
        if let Some(g) = &self.rho_grid {
            cfg.rho_grid = g.clone();
        }
        if let Some(g) = &self.s_grid {
            cfg.s_grid = g.clone();
        }
        cfg
    }

    /// Exponents to run; `[2]` when none are given.
    pub fn exponents(&self) -> Vec<f64> {
        if self.p.is_empty() {
            vec![2.0]
        } else {
            self.p.clone()
        }
    }
}

/// A validation failure at a dotted key path.
#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub key: Vec<String>,
    pub message: String,
}

fn issue(key: &[&str], message: impl Into<String>) -> Issue {
    Issue { key: key.iter().map(|s| s.to_string()).collect(), message: message.into() }
}

type Check = std::result::Result<(), Issue>;

fn positive(key: &[&str], name: &str, v: f64) -> Check {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(issue(key, format!("{name} must be positive and finite, got {v}")))
    }
}

fn confidence(key: &[&str], c: f64) -> Check {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(issue(key, format!("confidence must lie in (0, 1), got {c}")))
    }
}

fn grid(key: &[&str], g: &Option<ParamGrid>, positive_min: bool) -> Check {
    let Some(g) = g else { return Ok(()) };
    let name = key.last().copied().unwrap_or("grid");
    g.validate(name).map_err(|e| issue(key, strip_prefix(&e)))?;
    if positive_min && g.min <= 0.0 {
        return Err(issue(key, format!("{name} must start above zero, got {}", g.min)));
    }
    if !positive_min && g.min < 0.0 {
        return Err(issue(key, format!("{name} must be nonnegative, got {}", g.min)));
    }
    Ok(())
}

fn strip_prefix(e: &mheat_core::Error) -> String {
    match e {
        mheat_core::Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}

fn points(key: &[&str], pts: &[Vec<f64>], m: &ManifoldModel) -> Check {
    for (i, p) in pts.iter().enumerate() {
        if p.len() != m.ambient_dim() {
            return Err(issue(
                key,
                format!("point {i} has {} coordinates, {} needs {}", p.len(), m.name(), m.ambient_dim()),
            ));
        }
        crate::fields::point_on(m, p).map_err(|e| issue(key, format!("point {i}: {}", strip_prefix(&e))))?;
    }
    Ok(())
}

fn times(key: &[&str], ts: &[f64]) -> Check {
    if ts.is_empty() {
        return Err(issue(key, "at least one time is required"));
    }
    for t in ts {
        positive(key, "every time", *t)?;
    }
    Ok(())
}

impl ExperimentConfig {
    /// Checks every numeric constraint, returning the first violation.
    pub fn validate(&self) -> Check {
        self.manifold.validate().map_err(|e| issue(&["manifold"], strip_prefix(&e)))?;
        let m = &self.manifold;
        if self.n_paths < 1000 && !matches!(self.experiment, Experiment::Czscan(_)) {
            return Err(issue(&["n_paths"], format!("statistical checks need at least 1000 paths, got {}", self.n_paths)));
        }
        if let Some(h) = self.h {
            positive(&["h"], "h", h)?;
        }
        if let Some(f) = &self.field {
            crate::fields::build_field(m, f).map_err(|e| issue(&["field"], strip_prefix(&e)))?;
        }
        if let Some(p) = &self.potential {
            crate::fields::build_potential(m, p).map_err(|e| issue(&["potential"], strip_prefix(&e)))?;
        }
        match &self.experiment {
            Experiment::Simulate(s) => {
                positive(&["experiment", "t"], "t", s.t)?;
                points(&["experiment", "points"], &s.points, m)?;
                if s.steps.contains(&0) {
                    return Err(issue(&["experiment", "steps"], "step counts must be positive"));
                }
                confidence(&["experiment", "confidence"], s.confidence)?;
                self.require_field()?;
            }
            Experiment::Estimate(s) => self.validate_estimate(s)?,
            Experiment::Verify(s) => self.validate_verify(s)?,
            Experiment::Czscan(s) => {
                if s.p.is_empty() {
                    return Err(issue(&["experiment", "p"], "at least one exponent is required"));
                }
                for p in &s.p {
                    if !(*p > 1.0 && p.is_finite()) {
                        return Err(issue(&["experiment", "p"], format!("the CZ scan needs 1 < p < ∞, got {p}")));
                    }
                }
                positive(&["experiment", "sigma"], "σ", s.sigma)?;
                if s.family_size == 0 {
                    return Err(issue(&["experiment", "family_size"], "family_size must be positive"));
                }
                if let Some(sub) = s.subfamily {
                    if sub == 0 || sub > s.family_size {
                        return Err(issue(
                            &["experiment", "subfamily"],
                            format!("subfamily must lie in [1, family_size = {}], got {sub}", s.family_size),
                        ));
                    }
                }
                if !matches!(m, ManifoldModel::Torus { .. } | ManifoldModel::Sphere { dim: 2, .. }) {
                    return Err(issue(&["manifold"], format!("the CZ scan runs on tori and the 2-sphere, not {}", m.name())));
                }
                if s.mode == CzMode::Mc && !matches!(m, ManifoldModel::Torus { .. }) {
                    return Err(issue(&["experiment", "mode"], "the Monte Carlo CZ scan supports tori only"));
                }
            }
        }
        Ok(())
    }

    fn require_field(&self) -> Check {
        if self.field.is_none() {
            return Err(issue(&["experiment"], format!("a [field] table is required for {} experiments", self.experiment.kind())));
        }
        Ok(())
    }

    fn validate_estimate(&self, s: &EstimateSpec) -> Check {
        let m = &self.manifold;
        self.require_field()?;
        match s.quantity {
            Quantity::GreenHess => {
                let Some(sigma) = s.sigma else {
                    return Err(issue(&["experiment"], "green_hess needs sigma"));
                };
                positive(&["experiment", "sigma"], "σ", sigma)?;
                if let Some(n) = s.time_nodes {
                    if n < 4 {
                        return Err(issue(&["experiment", "time_nodes"], "time_nodes must be at least 4"));
                    }
                }
            }
            _ => {
                let Some(t) = s.t else {
                    return Err(issue(&["experiment"], format!("{} needs t", s.quantity.as_str())));
                };
                positive(&["experiment", "t"], "t", t)?;
            }
        }
        if let Some(split) = s.split {
            if !(split > 0.0 && split < 1.0) {
                return Err(issue(&["experiment", "split"], format!("split must lie in (0, 1), got {split}")));
            }
        }
        for (name, v) in [("v", &s.v), ("w", &s.w)] {
            if let Some(v) = v {
                if v.len() != m.dim() {
                    return Err(issue(&["experiment", name], format!("{name} needs {} frame coordinates, got {}", m.dim(), v.len())));
                }
            }
        }
        points(&["experiment", "points"], &s.points, m)?;
        confidence(&["experiment", "confidence"], s.confidence)
    }

    fn validate_verify(&self, s: &VerifySpec) -> Check {
        let m = &self.manifold;
        let key = |k: &'static str| -> Vec<&'static str> { vec!["experiment", k] };
        let a = s.alpha;
        if !(a > 0.0 && a < 0.25) {
            return Err(issue(&key("alpha"), format!("α must lie in (0, 1/4), got {a}")));
        }
        if !(s.beta > 0.0) {
            return Err(issue(&key("beta"), format!("β must be positive, got {}", s.beta)));
        }
        if s.beta >= 2.0 * a {
            return Err(issue(&key("beta"), format!("β ≥ 2α: need β < 2α, got β = {} and 2α = {}", s.beta, 2.0 * a)));
        }
        if !(s.gamma > 0.0) {
            return Err(issue(&key("gamma"), format!("γ must be positive, got {}", s.gamma)));
        }
        if s.gamma >= 2.0 * a {
            return Err(issue(&key("gamma"), format!("γ ≥ 2α: need γ < 2α, got γ = {} and 2α = {}", s.gamma, 2.0 * a)));
        }
        positive(&key("sigma"), "σ", s.sigma)?;
        if !(s.theta >= 0.0 && s.theta.is_finite()) {
            return Err(issue(&key("theta"), format!("θ must be nonnegative, got {}", s.theta)));
        }
        confidence(&key("confidence"), s.confidence)?;
        if let Some(r) = s.grid_resolution {
            if r < 8 {
                return Err(issue(&key("grid_resolution"), format!("grid_resolution must be at least 8, got {r}")));
            }
        }
        grid(&key("t_grid"), &s.t_grid, true)?;
        grid(&key("s_grid"), &s.s_grid, true)?;
        grid(&key("rho_grid"), &s.rho_grid, false)?;
        for p in &s.p {
            if !(*p >= 1.0 && p.is_finite()) {
                return Err(issue(&key("p"), format!("p must be finite and at least 1, got {p}")));
            }
        }
        match s.check {
            CheckKind::KernelBounds => {}
            CheckKind::WeightedL2 => {
                if s.beta >= a {
                    return Err(issue(&key("beta"), format!("the tail bound needs β < α: β = {}, α = {a}", s.beta)));
                }
            }
            CheckKind::Gaffney => {
                if !matches!(m, ManifoldModel::Torus { dim: 2 }) {
                    return Err(issue(&["manifold"], format!("the Gaffney check runs on the flat 2-torus, not {}", m.name())));
                }
                for p in &s.p {
                    if *p < 2.0 {
                        return Err(issue(&key("p"), format!("the Gaffney check needs p >= 2, got {p}")));
                    }
                }
                for (name, b) in [("e", &s.e), ("f", &s.f)] {
                    let Some(b) = b else {
                        return Err(issue(&["experiment"], format!("the Gaffney check needs ball {name}")));
                    };
                    if b.center.len() != 2 || !(b.radius > 0.0 && b.radius < std::f64::consts::PI) {
                        return Err(issue(&key(name), "balls need a 2-d center and radius in (0, π)"));
                    }
                }
            }
            CheckKind::SemigroupBounds => {
                self.require_field()?;
                times(&key("times"), &s.times)?;
                points(&key("points"), &s.points, m)?;
            }
            CheckKind::Kato => {
                if self.potential.is_none() {
                    return Err(issue(&["experiment"], "the Kato check needs a [potential] table"));
                }
                times(&key("times"), &s.times)?;
                if s.times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(issue(&key("times"), "times must be strictly increasing"));
                }
                points(&key("points"), &s.points, m)?;
            }
        }
        Ok(())
    }
}

/// Parses and validates a configuration file.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text, &path.display().to_string())
}

/// Parses and validates configuration text; `origin` names the source in
/// error messages.
pub fn parse(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((1, 1));
        CliError::Config { path: origin.to_string(), line, column, message: e.message().trim().to_string() }
    })?;
    if let Err(issue) = cfg.validate() {
        let (line, column) = locate(text, &issue.key);
        return Err(CliError::Config { path: origin.to_string(), line, column, message: issue.message });
    }
    Ok(cfg)
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Source position of the deepest existing prefix of `key`.
fn locate(text: &str, key: &[String]) -> (usize, usize) {
    let Ok(doc) = DeTable::parse(text) else { return (1, 1) };
    let mut table = doc.get_ref();
    let mut found = None;
    for part in key {
        let Some((k, v)) = table.iter().find(|(k, _)| k.get_ref().as_ref() == part.as_str()) else { break };
        found = Some(k.span().start);
        match v.get_ref() {
            DeValue::Table(t) => table = t,
            _ => break,
        }
    }
    found.map_or((1, 1), |o| line_col(text, o))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
n_paths = 2000

[manifold]
kind = "euclidean"
dim = 2

[experiment]
kind = "verify"
check = "kernel-bounds"
alpha = 0.2
gamma = 0.6
"#;

    #[test]
    fn gamma_violation_points_at_its_line() {
        let err = parse(BASE, "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("cfg.toml:13:"), "{msg}");
        assert!(msg.contains("γ ≥ 2α") && msg.contains("γ < 2α"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse("seed = \n", "x.toml").unwrap_err().to_string();
        assert!(err.starts_with("x.toml:1:"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("gamma = 0.6", "gamma = 0.3\nalhpa = 1");
        let err = parse(&text, "c").unwrap_err().to_string();
        assert!(err.contains("alhpa"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let text = BASE.replace("gamma = 0.6", "gamma = 0.3");
        let cfg = parse(&text, "c").unwrap();
        let again = toml::to_string(&cfg).unwrap();
        assert_eq!(parse(&again, "c").unwrap(), cfg);
    }
}
