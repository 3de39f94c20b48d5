//! Built-in registries printed by `mheat list`.

use crate::error::{CliError, Result};

pub const KINDS: [&str; 4] = ["manifolds", "fields", "potentials", "checks"];

const MANIFOLDS: &[(&str, &str)] = &[
    ("euclidean", "flat R^d, d >= 1; quadrature grids for d <= 3"),
    ("torus", "flat T^d = [0, 2π)^d, d >= 1; quadrature grids for d <= 3"),
    ("sphere", "round S^d of radius a, d >= 1; heat-kernel oracle and grids for d <= 2"),
    ("hyperbolic", "H^d of curvature -1/R², d >= 2; heat-kernel oracle for d = 2, 3"),
];

const FIELDS: &[(&str, &str)] = &[
    ("sin", "sin(a·x); eigenfunction on R^d and T^d"),
    ("cos", "cos(a·x); eigenfunction on R^d and T^d"),
    ("linear", "a·x in ambient coordinates; eigenfunction on R^d, S^d and H^d"),
    ("square", "(a·x)²; closed-form semigroup on R^d"),
    ("bump", "smooth compactly supported bump on flat models"),
    ("gaussian_bump", "Gaussian-profile bump around a point of S^d or H^d"),
    ("trig", "random trigonometric polynomial of given degree on T^d"),
    ("spherical", "random spherical-harmonic expansion of given degree on S^2"),
];

const POTENTIALS: &[(&str, &str)] = &[
    ("constant", "V = c"),
    ("curvature_norm_squared", "V = |R|², constant on every model"),
    ("bump", "amplitude times a smooth bump (flat models)"),
    ("gaussian_bump", "amplitude times a Gaussian bump (curved models)"),
];

const CHECKS: &[(&str, &str)] = &[
    ("kernel-bounds", "Gaussian upper bound for p_t + t|∂_t p_t| and pointwise Hessian heat-kernel bound"),
    ("weighted-l2", "Gaussian-weighted L² bounds for the kernel, its Hessian, and the Hessian tail off the diagonal"),
    ("gaffney", "off-diagonal Lᵖ decay of t Hess P_t between disjoint balls (flat 2-torus)"),
    ("semigroup-bounds", "pointwise, Lᵖ and domination bounds for Hess P_t f along Brownian paths"),
    ("kato", "Kato functional and exponential moment of a potential along Brownian paths"),
    ("czscan", "Calderón–Zygmund resolvent ratio ‖Hess (Δ+σ)^{-1} f‖_p / ‖f‖_p over random families"),
];

/// `(name, description)` entries of a registry.
pub fn entries(kind: &str) -> Result<&'static [(&'static str, &'static str)]> {
    match kind {
        "manifolds" => Ok(MANIFOLDS),
        "fields" => Ok(FIELDS),
        "potentials" => Ok(POTENTIALS),
        "checks" => Ok(CHECKS),
        other => Err(CliError::Usage(format!("unknown registry '{other}'; expected one of {}", KINDS.join(", ")))),
    }
}

/// Registry rendered as aligned text.
pub fn render(kind: &str) -> Result<String> {
    let items = entries(kind)?;
    let width = items.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    Ok(items.iter().map(|(n, d)| format!("{n:<width$}  {d}\n")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_registry_lists_every_check() {
        let text = render("checks").unwrap();
        for name in ["kernel-bounds", "weighted-l2", "gaffney", "semigroup-bounds", "kato", "czscan"] {
            assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
        }
    }

    #[test]
    fn unknown_kind_is_a_usage_error() {
        assert_eq!(render("bogus").unwrap_err().exit_code(), 2);
    }
}
