//! Discrete operator assembly and the elliptic resolvent machinery.
//!
//! The matrix mirrors the structure that makes the continuum construction
//! work: interior rows discretize the differential operator with central
//! second differences and upwinded drift, so off-diagonal stencil weights are
//! nonnegative and the diagonal nonpositive (an M-matrix after the λ shift);
//! physical-boundary rows impose the nonlocal condition `u(z) = Σ w u`;
//! artificial-boundary rows pin `u = 0`, the zero extension outside the
//! truncation. Positivity and the sup-norm contraction of `λ R(λ)` are then
//! structural and asserted after every solve, and the resolvents of growing
//! truncations increase monotonically toward the exterior-domain resolvent.

use crate::error::SolveError;
use crate::grid::{Grid, NodeClass, Point, Window};
use crate::linalg::{condition_estimate, Factorized, SparseMat};
use crate::measure::{BoundaryMeasureSpec, TruncatedMeasure};
use crate::operator::{check_ellipticity, CoefficientField};

/// Relative solver tolerance for post-solve assertions.
pub const TOL_SOLVER: f64 = 1e-9;
/// Absolute slack for positivity and monotonicity assertions.
pub const TOL_SIGN: f64 = 1e-12;

/// Node-indexed scalar values on a grid.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn(grid: &Grid, f: &dyn Fn(Point) -> f64) -> GridFunction {
        let values: Vec<f64> = grid.nodes.iter().map(|&p| f(p)).collect();
        assert!(values.iter().all(|v| v.is_finite()), "grid function must be finite");
        GridFunction { values }
    }

    pub fn constant(grid: &Grid, c: f64) -> GridFunction {
        GridFunction { values: vec![c; grid.node_count()] }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn sup_on(&self, indices: &[usize]) -> f64 {
        indices.iter().fold(0.0f64, |a, &i| a.max(self.values[i].abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |a, &v| a.min(v))
    }

    /// CSV dump: node, coordinates, class, value.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut s = String::from("node,x,y,class,value\n");
        for (i, (p, c)) in grid.nodes.iter().zip(&grid.class).enumerate() {
            s.push_str(&format!("{},{},{},{},{}\n", i, p.x, p.y, c.as_str(), self.values[i]));
        }
        s
    }
}

/// The assembled matrix for one truncation, λ-shift applied at solve time.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub n_nodes: usize,
    pub grid_fingerprint: u64,
    pub class: Vec<NodeClass>,
    /// rows of the differential operator at interior nodes (zero elsewhere)
    pub stencil: SparseMat,
    /// physical rows I - W and artificial rows I (zero at interior nodes)
    pub constraints: SparseMat,
}

impl DiscreteOperator {
    pub fn interior_mask(&self) -> Vec<bool> {
        self.class.iter().map(|c| *c == NodeClass::Interior).collect()
    }

    /// Applies the interior stencil; zero at boundary rows.
    pub fn apply_stencil(&self, u: &[f64]) -> Vec<f64> {
        self.stencil.matvec(u)
    }

    /// The system matrix λ - A_h with constraint rows in place.
    pub fn system(&self, lambda: f64) -> SparseMat {
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(
            self.stencil.nnz() + self.constraints.nnz() + self.n_nodes,
        );
        for i in 0..self.n_nodes {
            if self.class[i] == NodeClass::Interior {
                triplets.push((i, i, lambda));
                for (j, v) in self.stencil.row(i) {
                    triplets.push((i, j, -v));
                }
            } else {
                for (j, v) in self.constraints.row(i) {
                    triplets.push((i, j, v));
                }
            }
        }
        SparseMat::from_triplets(self.n_nodes, &triplets)
    }

    pub fn solver(&self, lambda: f64) -> Result<ResolventSolver, SolveError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SolveError::NonPositiveLambda(lambda));
        }
        let sys = self.system(lambda);
        let fact = Factorized::new(&sys)?;
        Ok(ResolventSolver {
            lambda,
            n: self.n_nodes,
            interior: self.interior_mask(),
            sys,
            fact,
        })
    }
}

/// Assembles the discrete operator for a truncation: second-order central
/// differences (Shortley–Weller arms next to the curved boundary), mixed
/// derivatives by the 4-point cross stencil, first-order upwind drift, and
/// the nonlocal/zero boundary rows.
pub fn assemble(
    grid: &Grid,
    coeff: &CoefficientField,
    tm: &TruncatedMeasure,
) -> Result<DiscreteOperator, SolveError> {
    tm.matches(grid)?;
    let ell = check_ellipticity(coeff, grid);
    if !ell.pass {
        let why = ell
            .structural_failure
            .unwrap_or_else(|| format!("min margin {:.3e}, min eta {:.3e}", ell.min_margin, ell.min_eta));
        return Err(SolveError::Ellipticity(why));
    }

    let n = grid.node_count();
    let dim = grid.dim();
    let mut stencil_triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut constraint_triplets: Vec<(usize, usize, f64)> = Vec::new();

    for i in 0..n {
        match grid.class[i] {
            NodeClass::Interior => {
                let p = grid.nodes[i];
                let a = coeff.a(p);
                let b = coeff.b(p);
                let st = grid.stencil(i).ok_or(SolveError::StencilOutsideGrid(i))?;
                let mut diag = 0.0;
                for axis in 0..dim {
                    let minus = st.arms[axis][0].ok_or(SolveError::StencilOutsideGrid(i))?;
                    let plus = st.arms[axis][1].ok_or(SolveError::StencilOutsideGrid(i))?;
                    let (dm, dp) = (minus.dist, plus.dist);
                    let akk = a[axis][axis];
                    stencil_triplets.push((i, minus.neighbor, 2.0 * akk / (dm * (dm + dp))));
                    stencil_triplets.push((i, plus.neighbor, 2.0 * akk / (dp * (dm + dp))));
                    diag -= 2.0 * akk / (dm * dp);
                    let bk = b[axis];
                    if bk >= 0.0 {
                        stencil_triplets.push((i, plus.neighbor, bk / dp));
                        diag -= bk / dp;
                    } else {
                        stencil_triplets.push((i, minus.neighbor, -bk / dm));
                        diag += bk / dm;
                    }
                }
                if dim == 2 {
                    let a01 = a[0][1];
                    if a01.abs() > 1e-14 {
                        // 2 a01 D1 D2 u by the 4-point cross stencil; next to
                        // the curved boundary, where a diagonal corner is
                        // missing, fall back to a one-sided quadrant (still
                        // exact on quadratics, first-order consistent)
                        let h = grid.h;
                        let li = (p.x / h).round() as i64;
                        let lj = (p.y / h).round() as i64;
                        let corner = |di: i64, dj: i64| grid.lattice_node(li + di, lj + dj);
                        let central = [corner(1, 1), corner(-1, -1), corner(1, -1), corner(-1, 1)];
                        if let [Some(pp), Some(mm), Some(pm), Some(mp)] = central {
                            let w = 2.0 * a01 / (4.0 * h * h);
                            stencil_triplets.push((i, pp, w));
                            stencil_triplets.push((i, mm, w));
                            stencil_triplets.push((i, pm, -w));
                            stencil_triplets.push((i, mp, -w));
                        } else {
                            let mut done = false;
                            for (sx, sy) in [(1i64, 1i64), (1, -1), (-1, 1), (-1, -1)] {
                                if let (Some(cc), Some(cx), Some(cy)) =
                                    (corner(sx, sy), corner(sx, 0), corner(0, sy))
                                {
                                    let w = 2.0 * a01 * (sx * sy) as f64 / (h * h);
                                    stencil_triplets.push((i, cc, w));
                                    stencil_triplets.push((i, cx, -w));
                                    stencil_triplets.push((i, cy, -w));
                                    diag += w;
                                    done = true;
                                    break;
                                }
                            }
                            if !done {
                                return Err(SolveError::MixedStencilUnavailable(i));
                            }
                        }
                    }
                }
                stencil_triplets.push((i, i, diag));
            }
            NodeClass::PhysicalBoundary => {
                constraint_triplets.push((i, i, 1.0));
                let row = tm.row_for_node(i).ok_or(SolveError::StencilOutsideGrid(i))?;
                for &(j, w) in row {
                    constraint_triplets.push((i, j, -w));
                }
            }
            NodeClass::ArtificialBoundary => {
                constraint_triplets.push((i, i, 1.0));
            }
        }
    }

    Ok(DiscreteOperator {
        n_nodes: n,
        grid_fingerprint: grid.fingerprint(),
        class: grid.class.clone(),
        stencil: SparseMat::from_triplets(n, &stencil_triplets),
        constraints: SparseMat::from_triplets(n, &constraint_triplets),
    })
}

/// A factorized (λ - A_h) ready for repeated right-hand sides.
pub struct ResolventSolver {
    pub lambda: f64,
    pub n: usize,
    interior: Vec<bool>,
    sys: SparseMat,
    fact: Factorized,
}

impl ResolventSolver {
    /// Solves λu - A_h u = f with the boundary rows in force, then asserts
    /// the structural postconditions: relative residual, the contraction
    /// ‖λu‖ ≤ ‖f‖ (1 + tol), and positivity when f >= 0.
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>, SolveError> {
        assert_eq!(f.len(), self.n);
        let mut rhs = vec![0.0; self.n];
        let mut f_sup = 0.0f64;
        let mut f_min = f64::INFINITY;
        for i in 0..self.n {
            if self.interior[i] {
                rhs[i] = f[i];
                f_sup = f_sup.max(f[i].abs());
                f_min = f_min.min(f[i]);
            }
        }
        let u = self.fact.solve(&rhs);

        let scale = f_sup.max(1e-300);
        let resid = self.sys.matvec(&u);
        let mut r = 0.0f64;
        for i in 0..self.n {
            r = r.max((resid[i] - rhs[i]).abs());
        }
        if !u.iter().all(|v| v.is_finite()) || r > 1e-8 * scale.max(1.0) {
            let cond = condition_estimate(&self.sys, &self.fact);
            return Err(SolveError::IllConditioned { residual: r / scale, cond });
        }

        let u_sup = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if self.lambda * u_sup > f_sup * (1.0 + TOL_SOLVER) + 1e-300 {
            return Err(SolveError::Postcondition(format!(
                "contraction violated: lambda*|u| = {:.6e} > |f| = {:.6e}",
                self.lambda * u_sup,
                f_sup
            )));
        }
        if f_min >= 0.0 {
            let u_min = u.iter().fold(f64::INFINITY, |a, &v| a.min(v));
            if u_min < -TOL_SOLVER * scale.max(1.0) {
                return Err(SolveError::Postcondition(format!(
                    "positivity violated: min u = {u_min:.6e} for f >= 0"
                )));
            }
        }
        Ok(u)
    }

    /// Raw factorization access for non-resolvent right-hand sides (boundary
    /// data, adjoint solves); no postconditions.
    pub fn solve_raw(&self, rhs: &[f64]) -> Vec<f64> {
        self.fact.solve(rhs)
    }

    pub fn solve_transpose_raw(&self, rhs: &[f64]) -> Vec<f64> {
        self.fact.solve_transpose(rhs)
    }

    pub fn interior(&self) -> &[bool] {
        &self.interior
    }

    pub fn condition_estimate(&self) -> f64 {
        condition_estimate(&self.sys, &self.fact)
    }
}

/// One-shot resolvent solve.
pub fn solve_resolvent(
    op: &DiscreteOperator,
    lambda: f64,
    f: &GridFunction,
) -> Result<GridFunction, SolveError> {
    let solver = op.solver(lambda)?;
    Ok(GridFunction { values: solver.solve(&f.values)? })
}

/// Residual of the pseudoresolvent identity
/// `R(l1) - R(l2) - (l2 - l1) R(l1) R(l2)` applied to f, in sup norm.
pub fn resolvent_identity_residual(
    op: &DiscreteOperator,
    l1: f64,
    l2: f64,
    f: &GridFunction,
) -> Result<f64, SolveError> {
    let s1 = op.solver(l1)?;
    let s2 = op.solver(l2)?;
    let u1 = s1.solve(&f.values)?;
    let u2 = s2.solve(&f.values)?;
    let u12 = s1.solve(&u2)?;
    let mut sup = 0.0f64;
    for i in 0..op.n_nodes {
        sup = sup.max((u1[i] - u2[i] - (l2 - l1) * u12[i]).abs());
    }
    Ok(sup)
}

#[derive(Debug, Clone, Default)]
pub struct ExhaustParams {
    /// start index; defaults to the smallest n keeping the measure's core
    /// radius inside B_n
    pub n0: Option<usize>,
    /// stop when the sup increment on the window falls below this (default 1e-8)
    pub tol: Option<f64>,
    /// truncation budget (default 64)
    pub max_n: Option<usize>,
    /// window for all sup-norm claims (default: radius n0 + 1)
    pub window: Option<Window>,
}

#[derive(Debug, Clone)]
pub struct ExhaustDiagnostics {
    pub n_values: Vec<usize>,
    /// sup |u_n - u_{n-1}| on the window, one entry per step after the first
    pub increments: Vec<f64>,
    pub converged: bool,
}

/// Output of the exhaustion: the last truncation's grid, measure, operator,
/// solution, and the increment history.
#[derive(Debug)]
pub struct ExhaustResult {
    pub grid: Grid,
    pub tm: TruncatedMeasure,
    pub op: DiscreteOperator,
    pub u: GridFunction,
    pub window: Window,
    pub diagnostics: ExhaustDiagnostics,
}

pub fn default_start_index(spec: &BoundaryMeasureSpec) -> usize {
    let core = spec.core_radius();
    let inner = spec.domain().inner_radius();
    let mut n = (core - 1e-9).ceil().max(1.0) as usize;
    while ((n + 1) as f64) < inner + 0.5 {
        n += 1;
    }
    n.max(1)
}

/// Runs the monotone exhaustion n = n0, n0+1, ... for λu - Au = f, stopping
/// when the window increment drops below tol. For sign-changing f the two
/// signed parts are exhausted separately (each is monotone) and recombined.
pub fn exhaust_resolvent(
    coeff: &CoefficientField,
    spec: &BoundaryMeasureSpec,
    lambda: f64,
    f: &dyn Fn(Point) -> f64,
    h: f64,
    params: &ExhaustParams,
) -> Result<ExhaustResult, SolveError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SolveError::NonPositiveLambda(lambda));
    }
    let domain = *spec.domain();
    let tol = params.tol.unwrap_or(1e-8);
    let max_n = params.max_n.unwrap_or(64);
    let n0 = params.n0.unwrap_or_else(|| default_start_index(spec));
    let window = params.window.unwrap_or(Window::new((n0 + 1) as f64));

    let mut split = false;
    'restart: loop {
        let mut prev: Option<(Grid, Vec<f64>, Vec<f64>)> = None; // grid, u_plus, u_minus
        let mut history: Vec<f64> = Vec::new();
        let mut n_values: Vec<usize> = Vec::new();

        for n in n0..=max_n {
            let grid = crate::grid::build_exhaustion(&domain, n, h)?;
            let tm = spec.truncate(n, &grid)?;
            let op = assemble(&grid, coeff, &tm)?;
            let solver = op.solver(lambda)?;

            let fv = GridFunction::from_fn(&grid, f);
            if !split && fv.min() < -1e-14 {
                // a negative value of f appeared; redo with the split so the
                // monotonicity assertions quantify over signed parts
                split = true;
                continue 'restart;
            }
            let f_plus: Vec<f64> = fv.values.iter().map(|&v| v.max(0.0)).collect();
            let f_minus: Vec<f64> = fv.values.iter().map(|&v| (-v).max(0.0)).collect();
            let u_plus = solver.solve(&f_plus)?;
            let u_minus = if split { solver.solve(&f_minus)? } else { vec![0.0; grid.node_count()] };

            if let Some((pgrid, pu_plus, pu_minus)) = &prev {
                let mut incr = 0.0f64;
                let scale = (fv.sup_norm() / lambda).max(1.0);
                for (ip, ic) in pgrid.shared_with(&grid) {
                    if !window.contains(pgrid.nodes[ip]) {
                        continue;
                    }
                    let dp = u_plus[ic] - pu_plus[ip];
                    let dm = u_minus[ic] - pu_minus[ip];
                    if dp < -TOL_SIGN * scale || dm < -TOL_SIGN * scale {
                        return Err(SolveError::Postcondition(format!(
                            "exhaustion monotonicity violated at n = {n}: increment {:.3e}",
                            dp.min(dm)
                        )));
                    }
                    incr = incr.max((dp - dm).abs());
                }
                history.push(incr);
                n_values.push(n);
                if incr < tol {
                    let u = GridFunction {
                        values: u_plus.iter().zip(&u_minus).map(|(a, b)| a - b).collect(),
                    };
                    return Ok(ExhaustResult {
                        tm,
                        op,
                        u,
                        window,
                        grid,
                        diagnostics: ExhaustDiagnostics {
                            n_values,
                            increments: history,
                            converged: true,
                        },
                    });
                }
            } else {
                n_values.push(n);
            }
            prev = Some((grid, u_plus, u_minus));
        }
        return Err(SolveError::ExhaustionStalled { max_n, history });
    }
}

/// Outcome of a structural check that may be inapplicable to its input.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckOutcome {
    Pass,
    Fail { worst: f64 },
    Skip { reason: String },
}

/// Discrete maximum principle: if (λ - A_h)u <= 0 at interior rows,
/// u(z) <= Σ w u at physical rows, and u <= 0 at artificial rows, then u <= 0
/// everywhere. Inputs violating the preconditions are skipped, not failed.
pub fn maximum_principle_check(
    op: &DiscreteOperator,
    tm: &TruncatedMeasure,
    lambda: f64,
    u: &GridFunction,
) -> CheckOutcome {
    let scale = u.sup_norm().max(1.0);
    let ptol = 1e-9 * scale;
    let au = op.apply_stencil(&u.values);
    for i in 0..op.n_nodes {
        match op.class[i] {
            NodeClass::Interior => {
                if lambda * u.values[i] - au[i] > ptol {
                    return CheckOutcome::Skip {
                        reason: format!("(lambda - A)u = {:.3e} > 0 at interior node {i}", lambda * u.values[i] - au[i]),
                    };
                }
            }
            NodeClass::PhysicalBoundary => {
                let row = tm.row_for_node(i).unwrap_or(&[]);
                let avg: f64 = row.iter().map(|&(j, w)| w * u.values[j]).sum();
                if u.values[i] - avg > ptol {
                    return CheckOutcome::Skip {
                        reason: format!("boundary precondition fails at node {i}"),
                    };
                }
            }
            NodeClass::ArtificialBoundary => {
                if u.values[i] > ptol {
                    return CheckOutcome::Skip {
                        reason: format!("artificial node {i} is positive"),
                    };
                }
            }
        }
    }
    let max = u.values.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    if max <= ptol {
        CheckOutcome::Pass
    } else {
        CheckOutcome::Fail { worst: max }
    }
}

/// A nonnegative discrete solution of (λ - A)w = 0 with the nonlocal boundary
/// rows and w = 1 pinned on the artificial sphere: the harmonic bump that
/// spans the discrete analogue of the non-uniqueness left by the truncation.
pub fn harmonic_bump(op: &DiscreteOperator, lambda: f64) -> Result<Option<GridFunction>, SolveError> {
    let artificial: Vec<usize> = (0..op.n_nodes)
        .filter(|&i| op.class[i] == NodeClass::ArtificialBoundary)
        .collect();
    if artificial.is_empty() {
        return Ok(None);
    }
    let solver = op.solver(lambda)?;
    let mut rhs = vec![0.0; op.n_nodes];
    for &i in &artificial {
        rhs[i] = 1.0;
    }
    let w = solver.solve_raw(&rhs);
    if w.iter().any(|v| *v < -1e-10) {
        return Err(SolveError::Postcondition("harmonic bump must be nonnegative".into()));
    }
    Ok(Some(GridFunction { values: w }))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeOutcome {
    /// exhaustion limit <= candidate; `strict` when the gap is visibly positive
    Pass { strict: bool },
    Fail { gap: f64 },
    Skip { reason: String },
}

/// Minimality probe: a positive candidate solving the same equation with the
/// boundary rows (artificial values free) must dominate the exhaustion limit.
pub fn minimality_probe(
    exhaust: &ExhaustResult,
    lambda: f64,
    f: &GridFunction,
    candidate: &GridFunction,
    tol: f64,
) -> ProbeOutcome {
    let op = &exhaust.op;
    let scale = candidate.sup_norm().max(f.sup_norm()).max(1.0);
    let ptol = 1e-7 * scale;
    let au = op.apply_stencil(&candidate.values);
    for i in 0..op.n_nodes {
        match op.class[i] {
            NodeClass::Interior => {
                if (lambda * candidate.values[i] - au[i] - f.values[i]).abs() > ptol {
                    return ProbeOutcome::Skip {
                        reason: format!("candidate does not solve the equation at node {i}"),
                    };
                }
            }
            NodeClass::PhysicalBoundary => {
                let row = exhaust.tm.row_for_node(i).unwrap_or(&[]);
                let avg: f64 = row.iter().map(|&(j, w)| w * candidate.values[j]).sum();
                if (candidate.values[i] - avg).abs() > ptol {
                    return ProbeOutcome::Skip {
                        reason: format!("candidate violates the boundary row at node {i}"),
                    };
                }
            }
            NodeClass::ArtificialBoundary => {} // free in the discrete maximal domain
        }
    }
    let mut gap = f64::INFINITY;
    let mut worst = 0.0f64;
    for (i, p) in exhaust.grid.nodes.iter().enumerate() {
        if exhaust.window.contains(*p) {
            let d = candidate.values[i] - exhaust.u.values[i];
            gap = gap.min(d);
            worst = worst.min(d);
        }
    }
    if worst < -tol {
        ProbeOutcome::Fail { gap: worst }
    } else {
        ProbeOutcome::Pass { strict: gap > tol }
    }
}
