//! The `verify` battery: every module-level invariant executed against the
//! configured problem, one pass/fail line per check.

use crate::config::Problem;
use crate::grid::{build_exhaustion, cutoff, NodeClass, Point, Window};
use crate::invariant::{abel_invariant, tv_distance, MeasureVector};
use crate::lyapunov::LyapunovSpec;
use crate::measure::check_monotone;
use crate::montecarlo::{chi_square_jump_test, simulate_paths, SimParams};
use crate::operator::check_ellipticity;
use crate::resolvent::{
    assemble, default_start_index, exhaust_resolvent, maximum_principle_check,
    resolvent_identity_residual, solve_resolvent, CheckOutcome, ExhaustParams, GridFunction,
};
use crate::semigroup::{laplace_consistency, SemigroupEvolver};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, out: Result<(bool, String), String>) -> CheckResult {
    match out {
        Ok((pass, detail)) => CheckResult { name: name.to_string(), pass, detail },
        Err(e) => CheckResult { name: name.to_string(), pass: false, detail: e },
    }
}

macro_rules! try_s {
    ($e:expr) => {
        $e.map_err(|err| err.to_string())?
    };
}

/// Runs the full property suite on a problem. Budgets are sized so the whole
/// battery completes in seconds on the shipped presets.
pub fn run_property_suite(problem: &Problem) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let domain = problem.domain;
    let coeff = &problem.coeff;
    let spec = &problem.measure;
    let num = &problem.config.numerics;
    let h = num.h;
    let n0 = num.n0.unwrap_or_else(|| default_start_index(spec));
    let seed = problem.config.seed;

    out.push(check("grid-nesting-and-class-transitions", (|| {
        let g0 = try_s!(build_exhaustion(&domain, n0, h));
        let g1 = try_s!(build_exhaustion(&domain, n0 + 1, h));
        let shared = g0.shared_with(&g1);
        if shared.len() != g0.node_count() {
            return Ok((false, format!("only {}/{} nodes nest", shared.len(), g0.node_count())));
        }
        for (i, j) in shared {
            let ok = g0.class[i] == g1.class[j]
                || (g0.class[i] == NodeClass::ArtificialBoundary
                    && g1.class[j] == NodeClass::Interior);
            if !ok {
                return Ok((false, format!("illegal class change at node {i}")));
            }
        }
        Ok((true, format!("grids n = {n0}, {} nest exactly", n0 + 1)))
    })()));

    out.push(check("cutoff-sandwich-monotone", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1);
        for _ in 0..200 {
            let r: f64 = rng.random_range(0.0..(n0 as f64 + 3.0));
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let p = Point::new(r * th.cos(), r * th.sin());
            let v = cutoff(n0, p);
            if !(0.0..=1.0).contains(&v)
                || (r <= n0 as f64 && v != 1.0)
                || (r >= n0 as f64 + 1.0 && v != 0.0)
                || cutoff(n0 + 1, p) < v
            {
                return Ok((false, format!("cutoff violation at |x| = {r}")));
            }
        }
        Ok((true, "sandwich and monotonicity on 200 samples".into()))
    })()));

    out.push(check("ellipticity", (|| {
        let g = try_s!(build_exhaustion(&domain, n0 + 2, h));
        let rep = check_ellipticity(coeff, &g);
        Ok((rep.pass, format!("min margin {:.3e}, min eta {:.3e}", rep.min_margin, rep.min_eta)))
    })()));

    out.push(check("measure-rows-subprobability-monotone", (|| {
        let g0 = try_s!(build_exhaustion(&domain, n0, h));
        let g1 = try_s!(build_exhaustion(&domain, n0 + 1, h));
        let t0 = try_s!(spec.truncate(n0, &g0));
        let t1 = try_s!(spec.truncate(n0 + 1, &g1));
        for (k, row) in t0.rows.iter().enumerate() {
            if row.iter().any(|e| e.1 < 0.0) || t0.masses[k] > 1.0 + 1e-9 {
                return Ok((false, format!("row {k} out of [0,1]")));
            }
        }
        let rep = try_s!(check_monotone(&t0, &g0, &t1, &g1));
        Ok((rep.pass, format!("worst violation {:.3e}", rep.worst_violation)))
    })()));

    out.push(check("measure-concentration", (|| {
        let rep = spec.concentration_check(n0.max(2), 0.5);
        Ok((
            rep.pass && rep.smallest_n_half.is_some(),
            format!("min mass {:.6}, smallest n for 1/2: {:?}", rep.min_mass, rep.smallest_n_half),
        ))
    })()));

    out.push(check("measure-boundary-continuity", (|| {
        let gaps = spec.continuity_diagnostic(3);
        let ok = gaps.last().unwrap() <= &(gaps[0] + 1e-9);
        Ok((ok, format!("adjacent gaps per level: {gaps:?}")))
    })()));

    let setup = (|| -> Result<_, String> {
        let n = n0 + 2;
        let g = try_s!(build_exhaustion(&domain, n, h));
        let tm = try_s!(spec.truncate(n, &g));
        let op = try_s!(assemble(&g, coeff, &tm));
        Ok((g, tm, op))
    })();
    let (g, tm, op) = match setup {
        Ok(x) => x,
        Err(e) => {
            out.push(CheckResult { name: "assembly".into(), pass: false, detail: e });
            return out;
        }
    };

    out.push(check("resolvent-contraction-positivity", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2);
        for &lambda in &[0.25, 1.0, 4.0] {
            let solver = try_s!(op.solver(lambda));
            for _ in 0..20 {
                let f: Vec<f64> = (0..g.node_count()).map(|_| rng.random_range(0.0..1.0)).collect();
                // solve() itself asserts contraction and positivity
                try_s!(solver.solve(&f));
            }
        }
        Ok((true, "60 solves with structural postconditions".into()))
    })()));

    out.push(check("pseudoresolvent-identity", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3);
        let f = GridFunction {
            values: (0..g.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let mut worst = 0.0f64;
        for &(l1, l2) in &[(0.25, 1.0), (1.0, 2.0), (0.5, 4.0)] {
            let r = try_s!(resolvent_identity_residual(&op, l1, l2, &f));
            worst = worst.max(r / f.sup_norm());
        }
        Ok((worst <= 1e-8, format!("worst relative residual {worst:.3e}")))
    })()));

    out.push(check("monotone-exhaustion", (|| {
        let params = ExhaustParams {
            n0: Some(n0),
            tol: Some(num.tol_exhaust),
            max_n: Some(num.max_n),
            window: num.window_radius.map(Window::new),
        };
        let ex = try_s!(exhaust_resolvent(coeff, spec, num.lambda, &|_| 1.0, h, &params));
        Ok((
            ex.diagnostics.converged,
            format!(
                "increments {:?} over n = {:?}",
                ex.diagnostics.increments, ex.diagnostics.n_values
            ),
        ))
    })()));

    out.push(check("maximum-principle", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4);
        let lambda = 1.0;
        for _ in 0..10 {
            let gpos = GridFunction {
                values: (0..g.node_count()).map(|_| rng.random_range(0.0..1.0)).collect(),
            };
            let upos = try_s!(solve_resolvent(&op, lambda, &gpos));
            let u = GridFunction { values: upos.values.iter().map(|v| -v).collect() };
            match maximum_principle_check(&op, &tm, lambda, &u) {
                CheckOutcome::Pass => {}
                other => return Ok((false, format!("{other:?}"))),
            }
        }
        Ok((true, "10 constructed inputs".into()))
    })()));

    let ev = match SemigroupEvolver::new(&op, num.tau) {
        Ok(ev) => ev,
        Err(e) => {
            out.push(CheckResult {
                name: "semigroup-evolver".into(),
                pass: false,
                detail: e.to_string(),
            });
            return out;
        }
    };

    out.push(check("chapman-kolmogorov", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let f = GridFunction {
                values: (0..g.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let r = try_s!(ev.chapman_kolmogorov_residual(&f, 4.0 * num.tau, 4.0 * num.tau));
            worst = worst.max(r);
        }
        Ok((worst <= 1e-12, format!("worst residual {worst:.3e}")))
    })()));

    out.push(check("sub-markov-kernel-rows", (|| {
        let one = GridFunction::constant(&g, 1.0);
        let u = try_s!(ev.evolve(&one, 8.0 * num.tau));
        if u.values.iter().any(|v| *v > 1.0 + 1e-9) {
            return Ok((false, "T(t) 1 exceeds 1".into()));
        }
        for node in (0..g.node_count()).step_by((g.node_count() / 16).max(1)) {
            let row = ev.kernel_row(node);
            let total: f64 = row.iter().sum();
            if row.iter().any(|v| *v < -1e-12) || total > 1.0 + 1e-9 {
                return Ok((false, format!("kernel row at node {node} not sub-Markov")));
            }
        }
        Ok((true, "indicator images are sub-Markov".into()))
    })()));

    out.push(check("laplace-transform-consistency", (|| {
        let f = GridFunction::from_fn(&g, &|p| (-(p.norm() - 2.0).powi(2)).exp());
        let w = Window::new((n0 + 1) as f64);
        let lambda = num.lambda.min(0.1 / num.tau); // keep lambda tau <= 0.1
        let r1 = try_s!(laplace_consistency(&op, &ev, &g, &f, lambda, &w));
        let ev2 = try_s!(SemigroupEvolver::new(&op, num.tau / 2.0));
        let r2 = try_s!(laplace_consistency(&op, &ev2, &g, &f, lambda, &w));
        Ok((
            r2 <= 0.75 * r1 + 1e-10,
            format!("residual {r1:.3e} -> {r2:.3e} under tau/2"),
        ))
    })()));

    out.push(check("lyapunov-chain-rule-identity", (|| {
        let v = LyapunovSpec::quadratic();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6);
        for _ in 0..50 {
            let i = rng.random_range(0..g.node_count());
            let p = g.nodes[i];
            if v.a_v(coeff, p, g.dim()) != 2.0 * coeff.drift_balance(p, g.dim()) {
                return Ok((false, format!("identity broke at ({}, {})", p.x, p.y)));
            }
        }
        Ok((true, "A(|x|^2) = 2 drift balance, exact".into()))
    })()));

    out.push(check("abel-adjoint-contraction", (|| {
        let w = Window::new((n0 + 1) as f64);
        let x0 = Point::new(domain.inner_radius() + 1.0, 0.0);
        let rep = try_s!(abel_invariant(&op, &g, x0, &[1.0, 0.5, 0.25], &w, 1.0));
        let ok = rep.steps.iter().all(|s| s.total_mass <= 1.0 + 1e-9);
        Ok((ok, format!("masses {:?}", rep.steps.iter().map(|s| s.total_mass).collect::<Vec<_>>())))
    })()));

    out.push(check("tv-metric-axioms", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7);
        for _ in 0..50 {
            let mk = |rng: &mut ChaCha8Rng| {
                let mut m: Vec<f64> = (0..g.node_count()).map(|_| rng.random_range(0.0..1.0)).collect();
                let t: f64 = m.iter().sum();
                for v in &mut m {
                    *v /= t;
                }
                MeasureVector::new(m, &g).unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let c = mk(&mut rng);
            let dab = try_s!(tv_distance(&a, &b));
            let dba = try_s!(tv_distance(&b, &a));
            let dac = try_s!(tv_distance(&a, &c));
            let dcb = try_s!(tv_distance(&c, &b));
            if (dab - dba).abs() > 1e-14
                || dab > dac + dcb + 1e-12
                || !(0.0..=1.0 + 1e-12).contains(&dab)
            {
                return Ok((false, "axiom violation".into()));
            }
        }
        Ok((true, "symmetry, triangle, range on 50 random triples".into()))
    })()));

    out.push(check("mc-reproducibility", (|| {
        let x0 = Point::new(domain.inner_radius() + 1.0, 0.0);
        let params = SimParams {
            dt: num.dt,
            horizon: 20.0 * num.dt,
            n_particles: 32,
            seed,
            ..Default::default()
        };
        let a = try_s!(simulate_paths(coeff, spec, x0, &params));
        let b = try_s!(simulate_paths(coeff, spec, x0, &params));
        let ok = a
            .positions
            .iter()
            .zip(&b.positions)
            .all(|(p, q)| p.x.to_bits() == q.x.to_bits() && p.y.to_bits() == q.y.to_bits());
        Ok((ok, "bitwise identical ensembles for equal seeds".into()))
    })()));

    out.push(check("mc-boundary-return-chi-square", (|| {
        let x0 = Point::new(domain.inner_radius() + 0.5 * h.max(0.1), 0.0);
        let params = SimParams {
            dt: num.dt,
            horizon: 10.0,
            n_particles: 128,
            seed: seed ^ 0x8,
            record_jumps: true,
            ..Default::default()
        };
        let ens = try_s!(simulate_paths(coeff, spec, x0, &params));
        let first = ens.first_jumps();
        if first.len() < 64 {
            return Ok((true, format!("skipped: only {} first jumps", first.len())));
        }
        let rep = chi_square_jump_test(&first, spec);
        Ok((
            rep.pass,
            format!(
                "chi2 = {:.2} vs 99% threshold {:.2} on {} jumps",
                rep.statistic, rep.threshold_99, rep.samples
            ),
        ))
    })()));

    out
}
