//! Discrete measures, Abel means, adjoint fixed points, and total-variation
//! convergence studies.
//!
//! Measures live on the grid nodes as nonnegative mass vectors, carried only
//! by non-artificial nodes (the adjoint step zeroes the rest). Invariant
//! candidates come from two routes that must agree: the Abel means
//! λ R(λ)' δ_{x0} as λ ↓ 0, and the dominant eigenvector of the adjoint
//! one-step operator. A third, stochastic route lives in [`crate::montecarlo`].

use crate::error::{MeasureError, SolveError};
use crate::grid::{Grid, NodeClass, Point, Window};
use crate::resolvent::{DiscreteOperator, GridFunction};
use crate::semigroup::SemigroupEvolver;
use rayon::prelude::*;
use serde::Serialize;

/// Nonnegative node masses with total at most 1 (+ roundoff).
#[derive(Debug, Clone)]
pub struct MeasureVector {
    pub masses: Vec<f64>,
    pub grid_fingerprint: u64,
}

impl MeasureVector {
    pub fn new(masses: Vec<f64>, grid: &Grid) -> Result<MeasureVector, MeasureError> {
        assert_eq!(masses.len(), grid.node_count());
        let total: f64 = masses.iter().sum();
        if masses.iter().any(|m| *m < -1e-12) || total > 1.0 + 1e-9 {
            return Err(MeasureError::MassNotOne(total));
        }
        Ok(MeasureVector {
            masses: masses.iter().map(|m| m.max(0.0)).collect(),
            grid_fingerprint: grid.fingerprint(),
        })
    }

    pub fn delta(grid: &Grid, node: usize) -> MeasureVector {
        let mut masses = vec![0.0; grid.node_count()];
        masses[node] = 1.0;
        MeasureVector { masses, grid_fingerprint: grid.fingerprint() }
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn mass_on(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.masses[i]).sum()
    }

    /// Rescales to a probability vector; no-op on a zero vector.
    pub fn normalize(&mut self) {
        let t = self.total();
        if t > 0.0 {
            for m in &mut self.masses {
                *m /= t;
            }
        }
    }

    pub fn expectation(&self, f: &GridFunction) -> f64 {
        self.masses.iter().zip(&f.values).map(|(m, v)| m * v).sum()
    }

    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut s = String::from("node,x,y,mass\n");
        for (i, p) in grid.nodes.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", i, p.x, p.y, self.masses[i]));
        }
        s
    }
}

/// Total variation distance ½ Σ |m1 - m2| between measures on the same grid.
pub fn tv_distance(a: &MeasureVector, b: &MeasureVector) -> Result<f64, MeasureError> {
    if a.grid_fingerprint != b.grid_fingerprint || a.masses.len() != b.masses.len() {
        return Err(MeasureError::GridMismatch(a.grid_fingerprint, b.grid_fingerprint));
    }
    Ok(0.5 * a.masses.iter().zip(&b.masses).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Serialize)]
pub struct AbelStep {
    pub lambda: f64,
    pub total_mass: f64,
    pub window_mass: f64,
}

#[derive(Debug)]
pub struct AbelReport {
    pub steps: Vec<AbelStep>,
    /// TV distance between consecutive Abel means
    pub tv_successive: Vec<f64>,
    pub converged: bool,
    pub measures: Vec<MeasureVector>,
}

impl AbelReport {
    pub fn final_measure(&self) -> &MeasureVector {
        self.measures.last().expect("nonempty lambda sequence")
    }
}

/// Abel means ν_λ = λ R(λ)' δ_{x0} along a decreasing λ sequence, solved via
/// the transposed systems (independent per λ, solved in parallel). Masses are
/// bounded by 1 (adjoint contraction); the window mass is the tightness proxy
/// and convergence is declared when consecutive means are TV-close.
pub fn abel_invariant(
    op: &DiscreteOperator,
    grid: &Grid,
    x0: Point,
    lambdas: &[f64],
    window: &Window,
    tol: f64,
) -> Result<AbelReport, SolveError> {
    assert!(!lambdas.is_empty());
    assert!(lambdas.windows(2).all(|w| w[1] < w[0]), "lambda sequence must decrease");
    let start = grid.nearest_node_of(x0, NodeClass::Interior);
    let window_idx = grid.window_indices(window);

    let measures: Vec<MeasureVector> = lambdas
        .par_iter()
        .map(|&lambda| -> Result<MeasureVector, SolveError> {
            let solver = op.solver(lambda)?;
            let mut delta = vec![0.0; grid.node_count()];
            delta[start] = 1.0;
            let y = solver.solve_transpose_raw(&delta);
            let masses: Vec<f64> = y
                .iter()
                .zip(solver.interior())
                .map(|(v, &int)| if int { lambda * v } else { 0.0 })
                .collect();
            let min = masses.iter().fold(f64::INFINITY, |a, &v| a.min(v));
            let total: f64 = masses.iter().sum();
            if min < -1e-12 || total > 1.0 + 1e-9 {
                return Err(SolveError::Postcondition(format!(
                    "Abel mean must be a sub-probability vector: min {min:.3e}, total {total:.6}"
                )));
            }
            MeasureVector::new(masses, grid).map_err(SolveError::Measure)
        })
        .collect::<Result<_, _>>()?;

    let steps: Vec<AbelStep> = lambdas
        .iter()
        .zip(&measures)
        .map(|(&lambda, nu)| AbelStep {
            lambda,
            total_mass: nu.total(),
            window_mass: nu.mass_on(&window_idx),
        })
        .collect();
    let tv_successive: Vec<f64> = measures
        .windows(2)
        .map(|w| tv_distance(&w[0], &w[1]).expect("same grid"))
        .collect();
    let converged = tv_successive.last().map(|&d| d < tol).unwrap_or(false);
    Ok(AbelReport { steps, tv_successive, converged, measures })
}

/// Power iteration driver shared by the adjoint fixed-point solver and tests.
/// Returns (fixed vector, eigenvalue estimate, iterations, converged).
pub fn power_iteration(
    step: impl Fn(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, usize, bool) {
    let mut nu = start;
    let t0: f64 = nu.iter().sum();
    if t0 > 0.0 {
        for m in &mut nu {
            *m /= t0;
        }
    }
    let mut eigenvalue = 0.0;
    for it in 1..=max_iter {
        let next = step(&nu);
        let total: f64 = next.iter().sum();
        eigenvalue = total;
        if total <= 0.0 {
            return (next, 0.0, it, false);
        }
        let scaled: Vec<f64> = next.iter().map(|v| v / total).collect();
        let diff: f64 = scaled.iter().zip(&nu).map(|(a, b)| (a - b).abs()).sum();
        nu = scaled;
        if diff < tol {
            return (nu, eigenvalue, it, true);
        }
    }
    (nu, eigenvalue, max_iter, false)
}

#[derive(Debug)]
pub struct StationaryReport {
    pub measure: MeasureVector,
    /// dominant eigenvalue of the adjoint one-step operator; 1 up to the
    /// truncation leak in the Markov regime
    pub eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
    /// eigenvalue >= 1 - tol: a stationary distribution exists at this truncation
    pub stationary_exists: bool,
    /// Markov defect of the forward semigroup at t = 100 τ, for reliability flagging
    pub markov_defect: f64,
    pub reliable: bool,
}

/// Stationary distribution as the dominant eigenvector of the adjoint
/// one-step operator (inverse iteration through the cached factorization).
/// In sub-Markov regimes the eigenvalue drops below 1 and the result is the
/// quasi-stationary vector, flagged accordingly.
pub fn stationary_solve(
    ev: &SemigroupEvolver,
    grid: &Grid,
    eig_tol: f64,
) -> Result<StationaryReport, SolveError> {
    let interior = grid.interior_indices();
    let mut start = vec![0.0; grid.node_count()];
    for &i in &interior {
        start[i] = 1.0 / interior.len() as f64;
    }
    let (nu, eigenvalue, iterations, converged) =
        power_iteration(|v| ev.adjoint_step(v), start, 1e-13, 50_000);
    let mut measure = MeasureVector::new(nu, grid).map_err(SolveError::Measure)?;
    measure.normalize();
    let window = Window::new(grid.truncation_radius());
    let markov_defect = ev.markov_defect(grid, 100.0 * ev.tau, &window)?;
    let stationary_exists = eigenvalue >= 1.0 - eig_tol;
    Ok(StationaryReport {
        measure,
        eigenvalue,
        iterations,
        converged,
        stationary_exists,
        markov_defect,
        reliable: markov_defect <= 1e-3,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    /// TV(ν(t), ν*) along the adjoint evolution
    pub tv: Vec<f64>,
    /// sup over the window of |T(t)f - <f, ν*>| per dictionary entry
    pub dict_sup: Vec<(String, Vec<f64>)>,
}

/// Bounded test functions used for cross-checks between the PDE and
/// stochastic sides.
pub fn test_dictionary() -> Vec<(String, Box<dyn Fn(Point) -> f64 + Send + Sync>)> {
    vec![
        ("one".into(), Box::new(|_| 1.0)),
        (
            // trapezoidal band: localized like an indicator but Lipschitz, so
            // nodal sampling carries no O(h) widening bias in cross-checks
            "band".into(),
            Box::new(|p: Point| {
                let r = p.norm();
                if r <= 1.5 || r >= 2.5 {
                    0.0
                } else if r < 1.75 {
                    (r - 1.5) / 0.25
                } else if r > 2.25 {
                    (2.5 - r) / 0.25
                } else {
                    1.0
                }
            }),
        ),
        ("gauss".into(), Box::new(|p: Point| (-(p.norm() - 2.0) * (p.norm() - 2.0)).exp())),
        ("invsq".into(), Box::new(|p: Point| 1.0 / (1.0 + p.norm() * p.norm()))),
        ("expneg".into(), Box::new(|p: Point| (-p.norm()).exp())),
    ]
}

/// Evolves ν0 under the adjoint step and records TV distances to ν*, plus the
/// forward-side gaps |T(t)f - <f, ν*>| for the test dictionary.
pub fn convergence_study(
    ev: &SemigroupEvolver,
    grid: &Grid,
    nu0: &MeasureVector,
    nu_star: &MeasureVector,
    times: &[f64],
    window: &Window,
) -> Result<ConvergenceReport, SolveError> {
    let window_idx = grid.window_indices(window);
    let dict = test_dictionary();
    let dict_fns: Vec<(String, GridFunction)> = dict
        .iter()
        .map(|(name, f)| (name.clone(), GridFunction::from_fn(grid, f)))
        .collect();
    let targets: Vec<f64> = dict_fns.iter().map(|(_, f)| nu_star.expectation(f)).collect();

    let mut schedule: Vec<usize> = Vec::new();
    for &t in times {
        schedule.push(ev.steps_for(t)?);
    }
    let max_steps = schedule.iter().copied().max().unwrap_or(0);

    let mut nu = nu0.masses.clone();
    let mut fwd: Vec<Vec<f64>> = dict_fns.iter().map(|(_, f)| f.values.clone()).collect();
    let mut tv = vec![0.0; times.len()];
    let mut dict_sup: Vec<(String, Vec<f64>)> =
        dict_fns.iter().map(|(n, _)| (n.clone(), vec![0.0; times.len()])).collect();

    for step in 0..=max_steps {
        for (k, &s) in schedule.iter().enumerate() {
            if s == step {
                let mv = MeasureVector { masses: nu.clone(), grid_fingerprint: nu_star.grid_fingerprint };
                tv[k] = tv_distance(&mv, nu_star).map_err(SolveError::Measure)?;
                for (d, (fv, &target)) in fwd.iter().zip(targets.iter()).enumerate() {
                    let mut sup = 0.0f64;
                    for &i in &window_idx {
                        if grid.class[i] != NodeClass::ArtificialBoundary {
                            sup = sup.max((fv[i] - target).abs());
                        }
                    }
                    dict_sup[d].1[k] = sup;
                }
            }
        }
        if step < max_steps {
            nu = ev.adjoint_step(&nu);
            for fv in &mut fwd {
                *fv = ev.step(fv)?;
            }
        }
    }
    Ok(ConvergenceReport { times: times.to_vec(), tv, dict_sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_exhaustion, DomainSpec};
    use crate::measure::{Atom, BoundaryMeasureSpec};
    use crate::operator::{builtin_operator, BuiltinOperator, CoefficientField};
    use crate::resolvent::assemble;
    use proptest::prelude::*;

    fn half_line() -> DomainSpec {
        DomainSpec::HalfLineExterior { c: 1.0 }
    }

    fn delta2() -> BoundaryMeasureSpec {
        BoundaryMeasureSpec::atomic(vec![Atom { x: 2.0, y: 0.0, weight: 1.0 }], half_line())
            .unwrap()
    }

    fn ou_setup(n: usize, h: f64) -> (Grid, DiscreteOperator) {
        let g = build_exhaustion(&half_line(), n, h).unwrap();
        let tm = delta2().truncate(n, &g).unwrap();
        let ou = builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap();
        let op = assemble(&g, &ou, &tm).unwrap();
        (g, op)
    }

    #[test]
    fn tv_distance_spec_values() {
        let g = build_exhaustion(&half_line(), 2, 0.5).unwrap();
        let a = MeasureVector::delta(&g, 1);
        let b = MeasureVector::delta(&g, 3);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        let mut half1 = vec![0.0; g.node_count()];
        half1[1] = 0.5;
        half1[2] = 0.5;
        let mut half2 = vec![0.0; g.node_count()];
        half2[2] = 0.5;
        half2[3] = 0.5;
        let m1 = MeasureVector::new(half1, &g).unwrap();
        let m2 = MeasureVector::new(half2, &g).unwrap();
        assert_eq!(tv_distance(&m1, &m2).unwrap(), 0.5);
    }

    #[test]
    fn tv_distance_rejects_grid_mismatch() {
        let g2 = build_exhaustion(&half_line(), 2, 0.5).unwrap();
        let g3 = build_exhaustion(&half_line(), 3, 0.5).unwrap();
        let a = MeasureVector::delta(&g2, 0);
        let b = MeasureVector::delta(&g3, 0);
        assert!(tv_distance(&a, &b).is_err());
    }

    proptest! {
        #[test]
        fn tv_is_a_metric_on_probability_vectors(
            raw1 in proptest::collection::vec(0.0f64..1.0, 9),
            raw2 in proptest::collection::vec(0.0f64..1.0, 9),
            raw3 in proptest::collection::vec(0.0f64..1.0, 9),
        ) {
            let g = build_exhaustion(&half_line(), 2, 0.5).unwrap();
            prop_assume!(g.node_count() == 5);
            let mk = |raw: &[f64]| {
                let mut m = vec![0.0; 5];
                let total: f64 = raw[..5].iter().sum();
                prop_assume!(total > 1e-9);
                for i in 0..5 { m[i] = raw[i] / total; }
                Ok(MeasureVector::new(m, &g).unwrap())
            };
            let a = mk(&raw1)?;
            let b = mk(&raw2)?;
            let c = mk(&raw3)?;
            let dab = tv_distance(&a, &b).unwrap();
            let dba = tv_distance(&b, &a).unwrap();
            let dac = tv_distance(&a, &c).unwrap();
            let dcb = tv_distance(&c, &b).unwrap();
            prop_assert!((dab - dba).abs() < 1e-15);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&dab));
            prop_assert!(dab <= dac + dcb + 1e-12);
            prop_assert!(tv_distance(&a, &a).unwrap() < 1e-15);
        }
    }

    #[test]
    fn hand_built_three_state_chain_matches_hand_computed_stationary() {
        // adjoint of the row-stochastic chain [[.5,.5,0],[.25,.5,.25],[0,.5,.5]];
        // the stationary vector solves pi P = pi, by hand pi = (1/4, 1/2, 1/4)
        let p = [[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]];
        let step = |nu: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[j] += nu[i] * p[i][j];
                }
            }
            out
        };
        let (pi, eig, _, conv) = power_iteration(step, vec![1.0, 0.0, 0.0], 1e-14, 10_000);
        assert!(conv);
        assert!((eig - 1.0).abs() < 1e-12);
        for (got, want) in pi.iter().zip([0.25, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-10, "pi = {pi:?}");
        }
    }

    #[test]
    fn abel_means_contract_and_converge_for_ou() {
        let (g, op) = ou_setup(6, 0.25);
        let lambdas: Vec<f64> = (0..=8).map(|k| 1.0 / (1 << k) as f64).collect();
        let w = Window::new(4.0);
        let rep = abel_invariant(&op, &g, Point::new(2.5, 0.0), &lambdas, &w, 1e-2).unwrap();
        assert!(rep.converged, "tv steps {:?}", rep.tv_successive);
        for s in &rep.steps {
            assert!(s.total_mass <= 1.0 + 1e-9);
        }
        // the OU window retains essentially all mass as lambda drops
        assert!(rep.steps.last().unwrap().window_mass > 0.99);
    }

    #[test]
    fn abel_window_mass_decays_for_brownian_return() {
        // null-recurrent negative control: window mass strictly smaller at
        // lambda = 2^{-10} than at lambda = 1
        let g = build_exhaustion(&half_line(), 16, 0.25).unwrap();
        let tm = delta2().truncate(16, &g).unwrap();
        let op = assemble(&g, &CoefficientField::brownian(), &tm).unwrap();
        let w = Window::new(4.0);
        let rep = abel_invariant(
            &op,
            &g,
            Point::new(2.5, 0.0),
            &[1.0, 1.0 / 1024.0],
            &w,
            1e-3,
        )
        .unwrap();
        assert!(
            rep.steps[1].window_mass < rep.steps[0].window_mass,
            "window mass should decay: {:?}",
            rep.steps
        );
    }

    #[test]
    fn abel_limits_agree_from_two_starting_points() {
        let (g, op) = ou_setup(6, 0.25);
        let lambdas: Vec<f64> = (0..=10).map(|k| 1.0 / (1 << k) as f64).collect();
        let w = Window::new(4.0);
        let rep1 = abel_invariant(&op, &g, Point::new(2.5, 0.0), &lambdas, &w, 1e-3).unwrap();
        let rep2 = abel_invariant(&op, &g, Point::new(4.0, 0.0), &lambdas, &w, 1e-3).unwrap();
        let d = tv_distance(rep1.final_measure(), rep2.final_measure()).unwrap();
        assert!(d <= 2e-3, "TV between Abel limits {d}");
    }

    #[test]
    fn stationary_matches_abel_for_ou() {
        let (g, op) = ou_setup(6, 0.25);
        let ev = SemigroupEvolver::new(&op, 0.05).unwrap();
        let rep = stationary_solve(&ev, &g, 1e-3).unwrap();
        assert!(rep.converged);
        assert!(rep.stationary_exists);
        assert!((rep.eigenvalue - 1.0).abs() < 1e-6, "eigenvalue {}", rep.eigenvalue);
        let lambdas: Vec<f64> = (0..=10).map(|k| 1.0 / (1 << k) as f64).collect();
        let w = Window::new(4.0);
        let abel = abel_invariant(&op, &g, Point::new(2.5, 0.0), &lambdas, &w, 1e-3).unwrap();
        let mut nu = abel.measures.last().unwrap().clone();
        nu.normalize();
        let d = tv_distance(&nu, &rep.measure).unwrap();
        assert!(d < 1e-3, "TV(abel, stationary) = {d}");
    }

    #[test]
    fn quasi_stationary_mass_escapes_windows_for_brownian() {
        // at fixed truncations the Brownian return chain concentrates its
        // dominant eigenvector toward the artificial boundary as n grows
        let w = Window::new(4.0);
        let mut window_masses = Vec::new();
        for n in [8usize, 16, 24] {
            let g = build_exhaustion(&half_line(), n, 0.25).unwrap();
            let tm = delta2().truncate(n, &g).unwrap();
            let op = assemble(&g, &CoefficientField::brownian(), &tm).unwrap();
            let ev = SemigroupEvolver::new(&op, 0.05).unwrap();
            let rep = stationary_solve(&ev, &g, 1e-3).unwrap();
            window_masses.push(rep.measure.mass_on(&g.window_indices(&w)));
        }
        assert!(
            window_masses[0] > window_masses[1] && window_masses[1] > window_masses[2],
            "escaping mass: {window_masses:?}"
        );
    }

    #[test]
    fn convergence_study_fixed_point_and_delta_start() {
        let (g, op) = ou_setup(6, 0.25);
        let ev = SemigroupEvolver::new(&op, 0.05).unwrap();
        let star = stationary_solve(&ev, &g, 1e-3).unwrap().measure;
        let w = Window::new(4.0);
        let times = [0.0, 0.5, 1.0, 2.0, 4.0];

        // starting at the fixed point, distances stay at solver tolerance
        let rep = convergence_study(&ev, &g, &star, &star, &times, &w).unwrap();
        for d in &rep.tv {
            assert!(*d < 1e-5, "fixed point drifted: {:?}", rep.tv);
        }

        // starting at a point mass, TV decreases below 1e-2 by the horizon
        let start = grid_delta(&g, 2.5);
        let rep = convergence_study(&ev, &g, &start, &star, &times, &w).unwrap();
        assert!(rep.tv.windows(2).all(|p| p[1] <= p[0] + 1e-9), "nonincreasing {:?}", rep.tv);
        assert!(*rep.tv.last().unwrap() < 1e-2, "horizon TV {:?}", rep.tv);

        // the `one` dictionary entry reduces to the Markov defect
        let one_gaps = &rep.dict_sup.iter().find(|(n, _)| n == "one").unwrap().1;
        let defect = ev.markov_defect(&g, *times.last().unwrap(), &w).unwrap();
        let expected = (1.0 - star.total()).abs().max(defect);
        assert!((one_gaps.last().unwrap() - expected).abs() < 1e-6 || *one_gaps.last().unwrap() <= expected + 1e-6);
    }

    fn grid_delta(g: &Grid, x: f64) -> MeasureVector {
        let i = g.nearest_node_of(Point::new(x, 0.0), NodeClass::Interior);
        MeasureVector::delta(g, i)
    }
}
