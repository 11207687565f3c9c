//! Coefficient fields of the second-order operator
//! `A u = Σ a_ij D_i D_j u + Σ b_j D_j u` and their validity checks.
//!
//! Built-in operators cover the exterior-domain examples with polynomially
//! growing or decaying coefficients; arbitrary small closed-form coefficients
//! can be supplied as expressions in `x`, `y`, `r`.

use crate::error::OperatorError;
use crate::expr::Expr;
use crate::grid::{DomainSpec, Grid, Point};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinOperator {
    /// a = I, b = -x.
    Ou,
    /// a = |x|^{-alpha} I, b = -x, for alpha > 0.
    InversePower,
    /// a = |x|^{alpha} I, b = -|x|^{beta-1} x, for alpha > 0, beta > alpha - 1.
    Polynomial,
}

#[derive(Debug, Clone)]
enum CoeffKind {
    Ou,
    InversePower { alpha: f64 },
    Polynomial { alpha: f64, beta: f64 },
    Custom { a: [[Expr; 2]; 2], b: [Expr; 2], eta: Expr },
}

/// The diffusion matrix `a`, drift `b`, and ellipticity floor `eta`,
/// evaluable at any point of the closure of Ω.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    kind: CoeffKind,
}

/// Builds one of the named operators. `alpha`/`beta` are ignored where the
/// operator does not use them.
pub fn builtin_operator(
    name: BuiltinOperator,
    alpha: f64,
    beta: f64,
) -> Result<CoefficientField, OperatorError> {
    let kind = match name {
        BuiltinOperator::Ou => CoeffKind::Ou,
        BuiltinOperator::InversePower => {
            if !(alpha > 0.0) {
                return Err(OperatorError::NonPositiveAlpha(alpha));
            }
            CoeffKind::InversePower { alpha }
        }
        BuiltinOperator::Polynomial => {
            if !(alpha > 0.0 && beta > alpha - 1.0) {
                return Err(OperatorError::ParameterDomain { alpha, beta });
            }
            CoeffKind::Polynomial { alpha, beta }
        }
    };
    Ok(CoefficientField { kind })
}

impl CoefficientField {
    /// Coefficients from closed-form expression strings. `a` is given row by
    /// row; the second row/column only matters in dimension 2.
    pub fn from_exprs(
        a: [[&str; 2]; 2],
        b: [&str; 2],
        eta: &str,
    ) -> Result<CoefficientField, OperatorError> {
        let parse = |s: &str| Expr::parse(s).map_err(OperatorError::from);
        Ok(CoefficientField {
            kind: CoeffKind::Custom {
                a: [[parse(a[0][0])?, parse(a[0][1])?], [parse(a[1][0])?, parse(a[1][1])?]],
                b: [parse(b[0])?, parse(b[1])?],
                eta: parse(eta)?,
            },
        })
    }

    /// Unit diffusion, zero drift. The negative control of the examples.
    pub fn brownian() -> CoefficientField {
        CoefficientField::from_exprs([["1", "0"], ["0", "1"]], ["0", "0"], "1").unwrap()
    }

    pub fn a(&self, p: Point) -> [[f64; 2]; 2] {
        match &self.kind {
            CoeffKind::Ou => [[1.0, 0.0], [0.0, 1.0]],
            CoeffKind::InversePower { alpha } => {
                let s = p.norm().powf(-alpha);
                [[s, 0.0], [0.0, s]]
            }
            CoeffKind::Polynomial { alpha, .. } => {
                let s = p.norm().powf(*alpha);
                [[s, 0.0], [0.0, s]]
            }
            CoeffKind::Custom { a, .. } => {
                [[a[0][0].eval(p), a[0][1].eval(p)], [a[1][0].eval(p), a[1][1].eval(p)]]
            }
        }
    }

    pub fn b(&self, p: Point) -> [f64; 2] {
        match &self.kind {
            CoeffKind::Ou => [-p.x, -p.y],
            CoeffKind::InversePower { .. } => [-p.x, -p.y],
            CoeffKind::Polynomial { beta, .. } => {
                let s = p.norm().powf(beta - 1.0);
                [-s * p.x, -s * p.y]
            }
            CoeffKind::Custom { b, .. } => [b[0].eval(p), b[1].eval(p)],
        }
    }

    pub fn eta(&self, p: Point) -> f64 {
        match &self.kind {
            CoeffKind::Ou => 1.0,
            CoeffKind::InversePower { alpha } => p.norm().powf(-alpha),
            CoeffKind::Polynomial { alpha, .. } => p.norm().powf(*alpha),
            CoeffKind::Custom { eta, .. } => eta.eval(p),
        }
    }

    /// Σ_j (a_jj(x) + b_j(x) x_j) over the active axes. Divergence of this
    /// quantity to -∞ along |x| → ∞ is the growth condition under which the
    /// quadratic Lyapunov function certifies an invariant measure.
    pub fn drift_balance(&self, p: Point, dim: usize) -> f64 {
        let a = self.a(p);
        let b = self.b(p);
        let mut s = 0.0;
        for j in 0..dim {
            s += a[j][j] + b[j] * p.coord(j);
        }
        s
    }

    /// Radial trend of `drift_balance` out to the truncation sphere; `diverges`
    /// flags whether the sampled values decrease without bound (heuristic:
    /// decreasing tail that ends negative and well below the mid-range value).
    pub fn drift_balance_trend(&self, domain: &DomainSpec, n: usize) -> DriftTrendReport {
        let dim = domain.dim();
        let outer = (n + 1) as f64;
        let inner = domain.inner_radius();
        let radii: Vec<f64> = (0..=64)
            .map(|k| inner + (outer - inner) * (k as f64) / 64.0 + 1e-9)
            .collect();
        let dirs = domain.ray_directions();
        let samples: Vec<(f64, f64)> = radii
            .iter()
            .map(|&r| {
                let worst = dirs
                    .iter()
                    .map(|d| self.drift_balance(Point::new(r * d.x, r * d.y), dim))
                    .fold(f64::NEG_INFINITY, f64::max);
                (r, worst)
            })
            .collect();
        let mid = samples[samples.len() / 2].1;
        let last = samples.last().unwrap().1;
        let tail_decreasing = samples[samples.len() / 2..]
            .windows(2)
            .all(|w| w[1].1 <= w[0].1 + 1e-12);
        let diverges = tail_decreasing && last < 0.0 && last <= mid - 1.0;
        DriftTrendReport { samples, diverges }
    }
}

#[derive(Debug, Clone)]
pub struct DriftTrendReport {
    /// (radius, worst drift balance over sampled directions)
    pub samples: Vec<(f64, f64)>,
    pub diverges: bool,
}

/// Outcome of validating strict ellipticity on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub pass: bool,
    /// Set when a(x) is not symmetric somewhere; distinct from a margin failure.
    pub structural_failure: Option<String>,
    /// min over nodes of (smallest eigenvalue of a - eta)
    pub min_margin: f64,
    /// min over nodes of eta; reported because eta may degenerate as |x| → ∞
    pub min_eta: f64,
    pub worst_node: usize,
}

fn min_eigenvalue_sym2(a: [[f64; 2]; 2], dim: usize) -> f64 {
    if dim == 1 {
        a[0][0]
    } else {
        let tr_half = 0.5 * (a[0][0] + a[1][1]);
        let det_part = (0.5 * (a[0][0] - a[1][1])).hypot(a[0][1]);
        tr_half - det_part
    }
}

/// Checks `xi' a(x) xi >= eta(x) |xi|^2` with `eta > 0` at every grid node.
pub fn check_ellipticity(coeff: &CoefficientField, grid: &Grid) -> EllipticityReport {
    let dim = grid.dim();
    let mut min_margin = f64::INFINITY;
    let mut min_eta = f64::INFINITY;
    let mut worst_node = 0;
    let mut structural_failure = None;
    let mut finite = true;
    for (i, &p) in grid.nodes.iter().enumerate() {
        let a = coeff.a(p);
        let b = coeff.b(p);
        let eta = coeff.eta(p);
        for r in 0..dim {
            if !b[r].is_finite() {
                finite = false;
            }
            for c in 0..dim {
                if !a[r][c].is_finite() {
                    finite = false;
                }
            }
        }
        if dim == 2 && (a[0][1] - a[1][0]).abs() > 1e-12 * (1.0 + a[0][1].abs().max(a[1][0].abs()))
        {
            structural_failure = Some(format!(
                "a is not symmetric at node {i} ({}, {}): a12 = {}, a21 = {}",
                p.x, p.y, a[0][1], a[1][0]
            ));
        }
        let margin = min_eigenvalue_sym2(a, dim) - eta;
        if margin < min_margin {
            min_margin = margin;
            worst_node = i;
        }
        min_eta = min_eta.min(eta);
    }
    let pass =
        structural_failure.is_none() && finite && min_margin >= -1e-12 && min_eta > 0.0;
    EllipticityReport { pass, structural_failure, min_margin, min_eta, worst_node }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_exhaustion;

    fn grid_1d() -> Grid {
        build_exhaustion(&DomainSpec::HalfLineExterior { c: 1.0 }, 2, 0.25).unwrap()
    }

    #[test]
    fn builtin_values_at_sample_points() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        let p = Point::new(2.0, 0.0);
        assert_eq!(ou.a(p)[0][0], 1.0);
        assert_eq!(ou.b(p)[0], -2.0);

        let ip = builtin_operator(BuiltinOperator::InversePower, 1.0, 0.0).unwrap();
        assert!((ip.a(p)[0][0] - 0.5).abs() < 1e-15);
        assert_eq!(ip.b(p)[0], -2.0);
    }

    #[test]
    fn polynomial_parameter_domain() {
        // beta = 0.5 > alpha - 1 = 0 -> accepted
        assert!(builtin_operator(BuiltinOperator::Polynomial, 1.0, 0.5).is_ok());
        // beta = -0.1 <= 0 -> rejected
        let err = builtin_operator(BuiltinOperator::Polynomial, 1.0, -0.1).unwrap_err();
        assert!(matches!(err, OperatorError::ParameterDomain { .. }));
    }

    #[test]
    fn drift_balance_arithmetic() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        assert_eq!(ou.drift_balance(Point::new(2.0, 0.0), 1), -3.0);
        assert_eq!(ou.drift_balance(Point::new(2.0, 0.0), 2), -2.0);
        let bm = CoefficientField::brownian();
        assert_eq!(bm.drift_balance(Point::new(7.5, 0.0), 1), 1.0);
    }

    #[test]
    fn ou_drift_balance_is_dim_minus_radius_squared() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        for (x, y, dim) in [(1.5, 0.0, 1), (3.0, 4.0, 2), (0.3, 0.4, 2)] {
            let p = Point::new(x, y);
            let expect = dim as f64 - p.norm() * p.norm();
            assert!((ou.drift_balance(p, dim) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn trend_flags_ou_but_not_brownian() {
        let d = DomainSpec::HalfLineExterior { c: 1.0 };
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        assert!(ou.drift_balance_trend(&d, 6).diverges);
        assert!(!CoefficientField::brownian().drift_balance_trend(&d, 6).diverges);
    }

    #[test]
    fn identity_passes_with_zero_margin() {
        let g = grid_1d();
        let id = CoefficientField::from_exprs([["1", "0"], ["0", "1"]], ["0", "0"], "1").unwrap();
        let r = check_ellipticity(&id, &g);
        assert!(r.pass);
        assert!(r.min_margin.abs() <= 1e-12);
    }

    #[test]
    fn negative_eigenvalue_fails() {
        let g = build_exhaustion(&DomainSpec::BallExterior { r0: 1.0, dim: 2 }, 2, 0.5).unwrap();
        let bad = CoefficientField::from_exprs([["1", "0"], ["0", "-1"]], ["0", "0"], "0.5").unwrap();
        let r = check_ellipticity(&bad, &g);
        assert!(!r.pass);
        assert!(r.structural_failure.is_none());
        assert!(r.min_margin < -1.0);
    }

    #[test]
    fn asymmetry_is_a_structural_failure() {
        let g = build_exhaustion(&DomainSpec::BallExterior { r0: 1.0, dim: 2 }, 2, 0.5).unwrap();
        let bad = CoefficientField::from_exprs([["1", "0.2"], ["0", "1"]], ["0", "0"], "0.5").unwrap();
        let r = check_ellipticity(&bad, &g);
        assert!(!r.pass);
        assert!(r.structural_failure.is_some());
    }

    #[test]
    fn inverse_power_margin_and_eta_floor() {
        // a = |x|^{-1} I with eta = |x|^{-1}: margin 0, eta >= (n+1)^{-1}
        let n = 2;
        let g = build_exhaustion(&DomainSpec::BallExterior { r0: 1.0, dim: 2 }, n, 0.25).unwrap();
        let ip = builtin_operator(BuiltinOperator::InversePower, 1.0, 0.0).unwrap();
        let r = check_ellipticity(&ip, &g);
        assert!(r.pass);
        assert!(r.min_margin.abs() <= 1e-12);
        let floor = ((n + 1) as f64).powf(-1.0);
        assert!(r.min_eta >= floor - 1e-12, "min_eta {} below {}", r.min_eta, floor);
        // oracle: quadratic form on sampled unit directions dominates eta
        for &p in g.nodes.iter().step_by(7) {
            let a = ip.a(p);
            for k in 0..32 {
                let th = 2.0 * std::f64::consts::PI * (k as f64) / 32.0;
                let xi = [th.cos(), th.sin()];
                let form = a[0][0] * xi[0] * xi[0]
                    + (a[0][1] + a[1][0]) * xi[0] * xi[1]
                    + a[1][1] * xi[1] * xi[1];
                assert!(form >= ip.eta(p) - 1e-12);
            }
        }
    }

    #[test]
    fn builtins_pass_on_exterior_grids() {
        for domain in [
            DomainSpec::HalfLineExterior { c: 1.0 },
            DomainSpec::BallExterior { r0: 1.0, dim: 2 },
        ] {
            let g = build_exhaustion(&domain, 3, 0.25).unwrap();
            for coeff in [
                builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap(),
                builtin_operator(BuiltinOperator::InversePower, 1.5, 0.0).unwrap(),
                builtin_operator(BuiltinOperator::Polynomial, 1.0, 0.5).unwrap(),
            ] {
                assert!(check_ellipticity(&coeff, &g).pass);
            }
        }
    }
}
