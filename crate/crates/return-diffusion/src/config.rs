//! Run configuration: one strict TOML schema for every subcommand.
//!
//! Physics-bearing sections (domain, operator, measure) have no defaults and
//! unknown keys are rejected; numeric tolerances carry documented defaults.
//! Configs round-trip: parse -> serialize -> parse is the identity.

use crate::error::ConfigError;
use crate::expr::Expr;
use crate::grid::DomainSpec;
use crate::measure::{Atom, BoundaryMeasureSpec, DensityKind};
use crate::operator::{builtin_operator, BuiltinOperator, CoefficientField};
use serde::{Deserialize, Serialize};

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSection,
    pub operator: OperatorSection,
    pub measure: MeasureSection,
    pub numerics: NumericsSection,
    #[serde(default)]
    pub task: TaskSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DomainSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct OperatorSection {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    // custom coefficients as expression strings in x, y, r
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a11: Option<Expr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a12: Option<Expr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a21: Option<Expr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a22: Option<Expr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<Expr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b2: Option<Expr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct MeasureSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<Atom>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct NumericsSection {
    pub h: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_tol_exhaust")]
    pub tol_exhaust: f64,
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_radius: Option<f64>,
}

fn default_tau() -> f64 {
    0.01
}
fn default_dt() -> f64 {
    1e-3
}
fn default_lambda() -> f64 {
    1.0
}
fn default_tol_exhaust() -> f64 {
    1e-8
}
fn default_max_n() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TaskSection {
    /// evolution / comparison time
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// comparison times for `compare`/`invariant`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// fixed truncation index (grid/evolve/simulate binning)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// right-hand side / initial data: an expression or `indicator(a,b)`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
    /// Monte Carlo controls
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<StartPoint>,
    /// Abel sequence runs lambda = 1, 1/2, ..., 2^{-lambda-min-exp}
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min_exp: Option<u32>,
    /// invariant subcommand mode: abel | stationary | evolve-compare
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// also build the modified Lyapunov function in `lyapunov`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modify: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPoint {
    pub x: f64,
    #[serde(default)]
    pub y: f64,
}

/// A validated problem: the physics triple plus numerics.
#[derive(Debug)]
pub struct Problem {
    pub domain: DomainSpec,
    pub coeff: CoefficientField,
    pub measure: BoundaryMeasureSpec,
    pub config: RunConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        RunConfig::parse(&text)
    }

    pub fn domain_spec(&self) -> Result<DomainSpec, ConfigError> {
        let d = &self.domain;
        let spec = match d.kind.as_str() {
            "half-line-exterior" => {
                let c = d.c.ok_or_else(|| invalid("domain.c", "required for half-line-exterior"))?;
                DomainSpec::HalfLineExterior { c }
            }
            "ball-exterior" => {
                let r0 = d.r0.ok_or_else(|| invalid("domain.r0", "required for ball-exterior"))?;
                let dim = d.dim.ok_or_else(|| invalid("domain.dim", "required for ball-exterior"))?;
                DomainSpec::BallExterior { r0, dim }
            }
            other => {
                return Err(invalid(
                    "domain.kind",
                    format!("unknown kind `{other}` (expected half-line-exterior or ball-exterior)"),
                ))
            }
        };
        spec.validate().map_err(|e| invalid("domain", e.to_string()))?;
        Ok(spec)
    }

    pub fn coefficient_field(&self) -> Result<CoefficientField, ConfigError> {
        let o = &self.operator;
        match o.name.as_str() {
            "ou" => builtin_operator(BuiltinOperator::Ou, 0.0, 0.0),
            "inverse-power" => builtin_operator(
                BuiltinOperator::InversePower,
                o.alpha.ok_or_else(|| invalid("operator.alpha", "required for inverse-power"))?,
                0.0,
            ),
            "polynomial" => builtin_operator(
                BuiltinOperator::Polynomial,
                o.alpha.ok_or_else(|| invalid("operator.alpha", "required for polynomial"))?,
                o.beta.ok_or_else(|| invalid("operator.beta", "required for polynomial"))?,
            ),
            "custom" => {
                let need = |e: &Option<Expr>, key: &str| -> Result<String, ConfigError> {
                    e.as_ref()
                        .map(|x| x.source().to_string())
                        .ok_or_else(|| invalid(key, "required for a custom operator"))
                };
                let zero = Expr::parse("0").unwrap();
                let a11 = need(&o.a11, "operator.a11")?;
                let a22 = o.a22.as_ref().unwrap_or(&o.a11.clone().unwrap()).source().to_string();
                let a12 = o.a12.as_ref().unwrap_or(&zero).source().to_string();
                let a21 = o.a21.as_ref().unwrap_or(&zero).source().to_string();
                let b1 = need(&o.b1, "operator.b1")?;
                let b2 = o.b2.as_ref().unwrap_or(&zero).source().to_string();
                let eta = need(&o.eta, "operator.eta")?;
                CoefficientField::from_exprs(
                    [[&a11, &a12], [&a21, &a22]],
                    [&b1, &b2],
                    &eta,
                )
            }
            other => {
                return Err(invalid("operator.name", format!("unknown operator `{other}`")))
            }
        }
        .map_err(|e| invalid("operator", e.to_string()))
    }

    pub fn measure_spec(&self, domain: DomainSpec) -> Result<BoundaryMeasureSpec, ConfigError> {
        let m = &self.measure;
        match (&m.atoms, &m.density) {
            (Some(atoms), None) => BoundaryMeasureSpec::atomic(atoms.clone(), domain)
                .map_err(|e| invalid("measure.atoms", e.to_string())),
            (None, Some(kind)) => BoundaryMeasureSpec::density(*kind, domain)
                .map_err(|e| invalid("measure.density", e.to_string())),
            (Some(_), Some(_)) => {
                Err(invalid("measure", "give either atoms or density, not both"))
            }
            (None, None) => Err(invalid("measure", "one of atoms or density is required")),
        }
    }

    pub fn validate_numerics(&self) -> Result<(), ConfigError> {
        let n = &self.numerics;
        if !(n.h > 0.0 && n.h.is_finite()) {
            return Err(invalid("numerics.h", format!("must be positive, got {}", n.h)));
        }
        if !(n.tau > 0.0) {
            return Err(invalid("numerics.tau", format!("must be positive, got {}", n.tau)));
        }
        if !(n.dt > 0.0) {
            return Err(invalid("numerics.dt", format!("must be positive, got {}", n.dt)));
        }
        if !(n.lambda > 0.0) {
            return Err(invalid("numerics.lambda", format!("must be positive, got {}", n.lambda)));
        }
        if !(n.tol_exhaust > 0.0) {
            return Err(invalid("numerics.tol-exhaust", "must be positive".to_string()));
        }
        if n.max_n < 1 {
            return Err(invalid("numerics.max-n", "must be at least 1".to_string()));
        }
        Ok(())
    }

    /// Full validation into a runnable problem.
    pub fn build(self) -> Result<Problem, ConfigError> {
        self.validate_numerics()?;
        let domain = self.domain_spec()?;
        let coeff = self.coefficient_field()?;
        let measure = self.measure_spec(domain)?;
        Ok(Problem { domain, coeff, measure, config: self })
    }
}

/// FNV-1a over the canonical serialized config: the provenance hash carried
/// by every output file.
pub fn config_hash(cfg: &RunConfig) -> u64 {
    let text = cfg.to_toml();
    let mut h = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> &'static str {
        r#"
seed = 42

[domain]
kind = "half-line-exterior"
c = 1.0

[operator]
name = "ou"

[measure]
atoms = [{ x = 2.0, weight = 1.0 }]

[numerics]
h = 0.1
lambda = 1.0

[task]
t = 1.0
"#
    }

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::parse(sample()).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.numerics.tau, 0.01, "documented default");
        let problem = cfg.build().unwrap();
        assert_eq!(problem.domain.dim(), 1);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = RunConfig::parse(sample()).unwrap();
        let text = cfg.to_toml();
        let cfg2 = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(config_hash(&cfg), config_hash(&cfg2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = sample().replace("[task]", "[task]\nbogus = 1\n");
        assert!(RunConfig::parse(&bad).is_err());
        let bad = sample().replace("h = 0.1", "h = 0.1\nmystery = 2.0");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn negative_lambda_is_rejected_by_name() {
        let bad = sample().replace("lambda = 1.0", "lambda = -1.0");
        let cfg = RunConfig::parse(&bad).unwrap();
        let err = cfg.build().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("numerics.lambda"), "{msg}");
    }

    #[test]
    fn measure_must_be_exactly_one_kind() {
        let both = sample().replace(
            "atoms = [{ x = 2.0, weight = 1.0 }]",
            "atoms = [{ x = 2.0, weight = 1.0 }]\n[measure.density]\nkind = \"uniform-interval\"\nlo = 1.5\nhi = 2.5",
        );
        // atoms plus density in one section: still parses structurally but
        // fails validation
        let cfg = RunConfig::parse(&both).unwrap();
        assert!(cfg.build().is_err());
    }

    #[test]
    fn custom_operator_from_expressions() {
        let custom = sample().replace(
            "name = \"ou\"",
            "name = \"custom\"\na11 = \"1\"\nb1 = \"0\"\neta = \"1\"",
        );
        let cfg = RunConfig::parse(&custom).unwrap();
        let problem = cfg.build().unwrap();
        let p = crate::grid::Point::new(3.0, 0.0);
        assert_eq!(problem.coeff.a(p)[0][0], 1.0);
        assert_eq!(problem.coeff.b(p)[0], 0.0);
    }
}
