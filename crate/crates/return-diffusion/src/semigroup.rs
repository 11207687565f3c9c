//! Positivity-preserving time evolution on a fixed truncation.
//!
//! One implicit-Euler step is literally λR(λ, ·) with λ = 1/τ, so each step
//! inherits positivity and the sup-norm contraction from the resolvent, and
//! the semigroup law holds exactly for times on the step grid (the step
//! operator is applied verbatim, never re-derived). Times are therefore
//! restricted to integer multiples of τ.

use crate::error::SolveError;
use crate::grid::{Grid, NodeClass, Point, Window};
use crate::measure::BoundaryMeasureSpec;
use crate::operator::CoefficientField;
use crate::resolvent::{assemble, DiscreteOperator, GridFunction, ResolventSolver};

pub struct SemigroupEvolver {
    pub tau: f64,
    op: DiscreteOperator,
    solver: ResolventSolver,
}

impl SemigroupEvolver {
    pub fn new(op: &DiscreteOperator, tau: f64) -> Result<SemigroupEvolver, SolveError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SolveError::StepMismatch { t: f64::NAN, tau });
        }
        let solver = op.solver(1.0 / tau)?;
        Ok(SemigroupEvolver { tau, op: op.clone(), solver })
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn n_nodes(&self) -> usize {
        self.op.n_nodes
    }

    /// Number of steps for time t; rejects t off the step grid so the
    /// semigroup law stays an exact identity.
    pub fn steps_for(&self, t: f64) -> Result<usize, SolveError> {
        let k = t / self.tau;
        let rounded = k.round();
        if t < 0.0 || (k - rounded).abs() > 1e-9 * rounded.abs().max(1.0) {
            return Err(SolveError::StepMismatch { t, tau: self.tau });
        }
        Ok(rounded as usize)
    }

    /// One implicit-Euler step (I - τ A_h)^{-1}, boundary rows in force.
    pub fn step(&self, u: &[f64]) -> Result<Vec<f64>, SolveError> {
        let lambda = 1.0 / self.tau;
        let scaled: Vec<f64> = u.iter().map(|v| lambda * v).collect();
        self.solver.solve(&scaled)
    }

    pub fn evolve(&self, f: &GridFunction, t: f64) -> Result<GridFunction, SolveError> {
        let k = self.steps_for(t)?;
        let mut u = f.values.clone();
        for _ in 0..k {
            u = self.step(&u)?;
        }
        Ok(GridFunction { values: u })
    }

    /// ‖1 - T(t) 1‖ on the window: zero in the Markov regime up to
    /// discretization and truncation, strictly positive when mass leaks.
    pub fn markov_defect(&self, grid: &Grid, t: f64, window: &Window) -> Result<f64, SolveError> {
        let one = GridFunction::constant(grid, 1.0);
        let u = self.evolve(&one, t)?;
        let mut worst = 0.0f64;
        for (i, p) in grid.nodes.iter().enumerate() {
            if window.contains(*p) && grid.class[i] != NodeClass::ArtificialBoundary {
                worst = worst.max((1.0 - u.values[i]).abs());
            }
        }
        Ok(worst)
    }

    /// ‖T(t+s)f - T(t)T(s)f‖, exactly zero by construction, asserted <= 1e-12.
    pub fn chapman_kolmogorov_residual(
        &self,
        f: &GridFunction,
        t: f64,
        s: f64,
    ) -> Result<f64, SolveError> {
        let joint = self.evolve(f, t + s)?;
        let nested = self.evolve(&self.evolve(f, s)?, t)?;
        let mut sup = 0.0f64;
        for (a, b) in joint.values.iter().zip(&nested.values) {
            sup = sup.max((a - b).abs());
        }
        Ok(sup)
    }

    /// Residual of the integrated generator identity
    /// ∫_0^t T(s) A f ds = T(t) f - f (trapezoid in s), sup over the window.
    pub fn generator_consistency(
        &self,
        grid: &Grid,
        f: &GridFunction,
        t: f64,
        window: &Window,
    ) -> Result<f64, SolveError> {
        let k = self.steps_for(t)?;
        if k == 0 {
            return Ok(0.0);
        }
        let af = GridFunction { values: self.op.apply_stencil(&f.values) };
        let mut quad = vec![0.0f64; f.values.len()];
        let mut g = af.values.clone();
        for step in 0..=k {
            let w = if step == 0 || step == k { 0.5 } else { 1.0 };
            for (q, v) in quad.iter_mut().zip(&g) {
                *q += w * self.tau * v;
            }
            if step < k {
                g = self.step(&g)?;
            }
        }
        let ut = self.evolve(f, t)?;
        let mut sup = 0.0f64;
        for (i, p) in grid.nodes.iter().enumerate() {
            if window.contains(*p) && grid.class[i] == NodeClass::Interior {
                sup = sup.max((quad[i] - (ut.values[i] - f.values[i])).abs());
            }
        }
        Ok(sup)
    }

    /// Adjoint one-step map on measures: mass moves through the transpose of
    /// the step operator, boundary rows redistributing boundary mass into the
    /// interior (the jump-return mechanism seen from the measure side).
    pub fn adjoint_step(&self, nu: &[f64]) -> Vec<f64> {
        let y = self.solver.solve_transpose_raw(nu);
        let lambda = 1.0 / self.tau;
        y.iter()
            .zip(self.solver.interior())
            .map(|(v, &int)| if int { lambda * v } else { 0.0 })
            .collect()
    }

    /// Row of the one-step kernel at a node: the image of the node indicator
    /// under the adjoint step. Rows are nonnegative with total mass <= 1.
    pub fn kernel_row(&self, node: usize) -> Vec<f64> {
        let mut delta = vec![0.0; self.n_nodes()];
        delta[node] = 1.0;
        self.adjoint_step(&delta)
    }
}

/// Sup-window residual of the Laplace-transform consistency
/// Σ_k τ e^{-λ k τ} T(kτ) f ≈ R(λ) f, first order in τ.
pub fn laplace_consistency(
    op: &DiscreteOperator,
    ev: &SemigroupEvolver,
    grid: &Grid,
    f: &GridFunction,
    lambda: f64,
    window: &Window,
) -> Result<f64, SolveError> {
    let r = crate::resolvent::solve_resolvent(op, lambda, f)?;
    let k_max = (40.0 / (lambda * ev.tau)).ceil() as usize;
    let mut acc = vec![0.0f64; f.values.len()];
    let mut g = f.values.clone();
    for k in 0..=k_max {
        let w = ev.tau * (-lambda * k as f64 * ev.tau).exp();
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += w * v;
        }
        if k < k_max {
            g = ev.step(&g)?;
        }
    }
    let mut sup = 0.0f64;
    for (i, p) in grid.nodes.iter().enumerate() {
        if window.contains(*p) && grid.class[i] == NodeClass::Interior {
            sup = sup.max((acc[i] - r.values[i]).abs());
        }
    }
    Ok(sup)
}

#[derive(Debug, Clone)]
pub struct SmoothingReport {
    /// (h, discrete Lipschitz modulus of T(t) 1_B on the window)
    pub levels: Vec<(f64, f64)>,
    /// whether the modulus stabilizes under refinement (bounded limit)
    pub stabilized: bool,
}

/// Smoothing (strong-Feller-type) diagnostic: evolve the indicator of a
/// radial band and track the discrete Lipschitz modulus under grid
/// refinement h, h/2, h/4. A bounded limit indicates smoothing; at t = 0 the
/// modulus diverges like 1/h. Trend report only; no quantitative rate is
/// asserted.
pub fn smoothing_diagnostic(
    coeff: &CoefficientField,
    spec: &BoundaryMeasureSpec,
    n: usize,
    band: (f64, f64),
    t: f64,
    tau: f64,
    h0: f64,
) -> Result<SmoothingReport, SolveError> {
    let domain = *spec.domain();
    let indicator = |p: Point| {
        let r = p.norm();
        if r >= band.0 && r <= band.1 {
            1.0
        } else {
            0.0
        }
    };
    let window = Window::new(n as f64);
    let mut levels = Vec::new();
    for level in 0..3 {
        let h = h0 / (1 << level) as f64;
        let grid = crate::grid::build_exhaustion(&domain, n, h)?;
        let tm = spec.truncate(n, &grid)?;
        let op = assemble(&grid, coeff, &tm)?;
        let f = GridFunction::from_fn(&grid, &indicator);
        let u = if t == 0.0 {
            f
        } else {
            let ev = SemigroupEvolver::new(&op, tau)?;
            ev.evolve(&f, t)?
        };
        let mut modulus = 0.0f64;
        for i in 0..grid.node_count() {
            if grid.class[i] != NodeClass::Interior || !window.contains(grid.nodes[i]) {
                continue;
            }
            let st = grid.stencil(i).unwrap();
            for axis in 0..grid.dim() {
                for side in 0..2 {
                    if let Some(arm) = st.arms[axis][side] {
                        modulus =
                            modulus.max((u.values[i] - u.values[arm.neighbor]).abs() / arm.dist);
                    }
                }
            }
        }
        levels.push((h, modulus));
    }
    let m2 = levels[1].1;
    let m3 = levels[2].1;
    let stabilized = m3 <= 1.3 * m2 + 1e-9;
    Ok(SmoothingReport { levels, stabilized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_exhaustion, DomainSpec};
    use crate::measure::{Atom, BoundaryMeasureSpec};
    use crate::operator::{builtin_operator, BuiltinOperator};
    use crate::resolvent::solve_resolvent;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_line() -> DomainSpec {
        DomainSpec::HalfLineExterior { c: 1.0 }
    }

    fn delta2() -> BoundaryMeasureSpec {
        BoundaryMeasureSpec::atomic(vec![Atom { x: 2.0, y: 0.0, weight: 1.0 }], half_line())
            .unwrap()
    }

    fn laplace_1d() -> CoefficientField {
        CoefficientField::from_exprs([["1", "0"], ["0", "1"]], ["0", "0"], "1").unwrap()
    }

    fn setup(n: usize, h: f64, coeff: &CoefficientField) -> (Grid, DiscreteOperator) {
        let g = build_exhaustion(&half_line(), n, h).unwrap();
        let tm = delta2().truncate(n, &g).unwrap();
        let op = assemble(&g, coeff, &tm).unwrap();
        (g, op)
    }

    #[test]
    fn zero_and_identity_cases() {
        let (g, op) = setup(4, 0.25, &laplace_1d());
        let ev = SemigroupEvolver::new(&op, 0.01).unwrap();
        let zero = GridFunction::constant(&g, 0.0);
        assert!(ev.evolve(&zero, 0.5).unwrap().sup_norm() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = GridFunction {
            values: (0..g.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let u = ev.evolve(&f, 0.0).unwrap();
        assert_eq!(u.values, f.values);
    }

    #[test]
    fn off_grid_times_are_rejected() {
        let (_, op) = setup(3, 0.25, &laplace_1d());
        let ev = SemigroupEvolver::new(&op, 0.01).unwrap();
        assert!(matches!(ev.steps_for(0.015), Err(SolveError::StepMismatch { .. })));
        assert_eq!(ev.steps_for(0.1).unwrap(), 10);
    }

    #[test]
    fn markov_case_preserves_one() {
        // full-mass return measure: T(t) 1 = 1 up to the truncation leak
        let (g, op) = setup(12, 0.25, &laplace_1d());
        let ev = SemigroupEvolver::new(&op, 0.05).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let u = ev.evolve(&one, 1.0).unwrap();
        let window = Window::new(4.0);
        for (i, p) in g.nodes.iter().enumerate() {
            if window.contains(*p) {
                assert!((u.values[i] - 1.0).abs() < 1e-6, "u({}) = {}", p.x, u.values[i]);
            }
        }
    }

    #[test]
    fn sub_markov_and_defect_monotonicity() {
        let (g, op) = setup(6, 0.25, &laplace_1d());
        let ev = SemigroupEvolver::new(&op, 0.05).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        // sub-Markov: T(t) 1 <= 1 everywhere
        for steps in [1usize, 4, 20] {
            let u = ev.evolve(&one, ev.tau * steps as f64).unwrap();
            assert!(u.values.iter().all(|v| *v <= 1.0 + 1e-9));
        }
        // defect is nondecreasing in t (products of sub-Markov contractions)
        let w = Window::new(4.0);
        let d1 = ev.markov_defect(&g, ev.tau, &w).unwrap();
        let d2 = ev.markov_defect(&g, 2.0 * ev.tau, &w).unwrap();
        assert!(d2 >= d1 - 1e-12);
    }

    #[test]
    fn frozen_small_truncation_leaks_more() {
        let coeff = laplace_1d();
        let w = Window::new(2.5);
        let (g_small, op_small) = setup(3, 0.25, &coeff);
        let (g_big, op_big) = setup(12, 0.25, &coeff);
        let tau = 0.05;
        let d_small = SemigroupEvolver::new(&op_small, tau)
            .unwrap()
            .markov_defect(&g_small, 1.0, &w)
            .unwrap();
        let d_big = SemigroupEvolver::new(&op_big, tau)
            .unwrap()
            .markov_defect(&g_big, 1.0, &w)
            .unwrap();
        assert!(
            d_small > 10.0 * d_big && d_small > 1e-4,
            "mass-leak ordering: small {d_small}, big {d_big}"
        );
    }

    #[test]
    fn chapman_kolmogorov_is_exact() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        let (g, op) = setup(5, 0.25, &ou);
        let ev = SemigroupEvolver::new(&op, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let f = GridFunction {
                values: (0..g.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let r = ev.chapman_kolmogorov_residual(&f, 0.2, 0.2).unwrap();
            assert!(r <= 1e-12, "residual {r}");
        }
        // Markov case: both sides stay 1
        let one = GridFunction::constant(&g, 1.0);
        let r = ev.chapman_kolmogorov_residual(&one, 0.25, 0.5).unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn one_step_positivity_and_contraction() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        let (g, op) = setup(5, 0.25, &ou);
        let ev = SemigroupEvolver::new(&op, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f: Vec<f64> = (0..g.node_count()).map(|_| rng.random_range(0.0..2.0)).collect();
            let u = ev.step(&f).unwrap();
            assert!(u.iter().all(|v| *v >= -1e-12));
            let fs = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let us = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(us <= fs * (1.0 + 1e-9));
        }
    }

    #[test]
    fn generator_identity_refines_at_first_order() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        let (g, op) = setup(8, 0.25, &ou);
        let window = Window::new(4.0);
        // f in the discrete domain: f = R(1) g for g = 1
        let one = GridFunction::constant(&g, 1.0);
        let f = solve_resolvent(&op, 1.0, &one).unwrap();
        let r_tau = SemigroupEvolver::new(&op, 0.02)
            .unwrap()
            .generator_consistency(&g, &f, 1.0, &window)
            .unwrap();
        let r_half = SemigroupEvolver::new(&op, 0.01)
            .unwrap()
            .generator_consistency(&g, &f, 1.0, &window)
            .unwrap();
        assert!(
            r_half <= 0.75 * r_tau + 1e-9,
            "first-order refinement: tau {r_tau}, tau/2 {r_half}"
        );
        // t = 0 gives residual 0; constant one gives A f = 0 on both sides
        let ev = SemigroupEvolver::new(&op, 0.02).unwrap();
        assert!(ev.generator_consistency(&g, &f, 0.0, &window).unwrap() == 0.0);
        let r_one = ev.generator_consistency(&g, &one, 1.0, &window).unwrap();
        assert!(r_one < 1e-6, "A 1 = 0 case, residual {r_one}");
    }

    #[test]
    fn kernel_rows_are_sub_markov() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        let (g, op) = setup(5, 0.25, &ou);
        let ev = SemigroupEvolver::new(&op, 0.05).unwrap();
        for node in (0..g.node_count()).step_by(3) {
            let row = ev.kernel_row(node);
            assert!(row.iter().all(|v| *v >= -1e-12));
            let total: f64 = row.iter().sum();
            assert!(total <= 1.0 + 1e-9, "row mass {total}");
        }
    }

    #[test]
    fn laplace_transform_consistency_refines() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        let (g, op) = setup(5, 0.25, &ou);
        let window = Window::new(4.0);
        let f = GridFunction::from_fn(&g, &|p| (-(p.norm() - 2.0).powi(2)).exp());
        let lambda = 1.0;
        let r1 = laplace_consistency(
            &op,
            &SemigroupEvolver::new(&op, 0.02).unwrap(),
            &g,
            &f,
            lambda,
            &window,
        )
        .unwrap();
        let r2 = laplace_consistency(
            &op,
            &SemigroupEvolver::new(&op, 0.01).unwrap(),
            &g,
            &f,
            lambda,
            &window,
        )
        .unwrap();
        assert!(r2 <= 0.75 * r1 + 1e-10, "O(tau): {r1} -> {r2}");
    }

    #[test]
    fn smoothing_diagnostic_trends() {
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        // t = 1: modulus stabilizes under refinement
        let rep = smoothing_diagnostic(&ou, &delta2(), 3, (1.5, 2.5), 1.0, 0.05, 0.2).unwrap();
        assert!(rep.stabilized, "levels {:?}", rep.levels);
        // t = 0: discontinuous data, modulus doubles with each refinement
        let rep0 = smoothing_diagnostic(&ou, &delta2(), 3, (1.5, 2.5), 0.0, 0.05, 0.2).unwrap();
        assert!(!rep0.stabilized, "levels {:?}", rep0.levels);
        let ratio = rep0.levels[2].1 / rep0.levels[1].1;
        assert!(ratio > 1.7, "1/h divergence, ratio {ratio}");
    }
}
