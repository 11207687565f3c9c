//! Acceptance suite: the exit criteria of the build, one test per criterion,
//! each printing a pass line with the measured quantities (visible under
//! `cargo test --test acceptance -- --nocapture`).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use return_diffusion::error::SolveError;
use return_diffusion::grid::{build_exhaustion, DomainSpec, Grid, NodeClass, Point, Window};
use return_diffusion::invariant::{
    abel_invariant, convergence_study, stationary_solve, test_dictionary, tv_distance,
    MeasureVector,
};
use return_diffusion::lyapunov::{
    modify_lyapunov, verify_invariant_lyapunov, verify_uniqueness_lyapunov, LyapunovSpec,
};
use return_diffusion::linalg::SparseMat;
use return_diffusion::measure::{Atom, BoundaryMeasureSpec, DensityKind};
use return_diffusion::montecarlo::{
    chi_square_jump_test, estimate_expectation, estimate_invariant, simulate_paths, SimParams,
};
use return_diffusion::operator::{builtin_operator, BuiltinOperator, CoefficientField};
use return_diffusion::resolvent::{
    assemble, exhaust_resolvent, resolvent_identity_residual, solve_resolvent, DiscreteOperator,
    ExhaustParams, ExhaustResult, GridFunction,
};
use return_diffusion::semigroup::SemigroupEvolver;

const LAMBDAS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

fn half_line() -> DomainSpec {
    DomainSpec::HalfLineExterior { c: 1.0 }
}

fn annulus() -> DomainSpec {
    DomainSpec::BallExterior { r0: 1.0, dim: 2 }
}

fn ou() -> CoefficientField {
    builtin_operator(BuiltinOperator::Ou, 0.0, 0.0).unwrap()
}

fn delta2(domain: DomainSpec) -> BoundaryMeasureSpec {
    BoundaryMeasureSpec::atomic(vec![Atom { x: 2.0, y: 0.0, weight: 1.0 }], domain).unwrap()
}

fn setup(domain: DomainSpec, n: usize, h: f64) -> (Grid, DiscreteOperator) {
    let grid = build_exhaustion(&domain, n, h).unwrap();
    let tm = delta2(domain).truncate(n, &grid).unwrap();
    let op = assemble(&grid, &ou(), &tm).unwrap();
    (grid, op)
}

fn random_values(grid: &Grid, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> GridFunction {
    GridFunction { values: (0..grid.node_count()).map(|_| rng.random_range(lo..hi)).collect() }
}

fn exhaust_ou_1d(h: f64, tol: f64) -> ExhaustResult {
    let params = ExhaustParams { tol: Some(tol), ..Default::default() };
    exhaust_resolvent(&ou(), &delta2(half_line()), 1.0, &|_| 1.0, h, &params).unwrap()
}

#[test]
fn criterion_01_resolvent_contraction_and_positivity() {
    let start = std::time::Instant::now();
    for (name, domain, n, h) in [("1d", half_line(), 6, 0.1), ("2d", annulus(), 4, 0.2)] {
        let (grid, op) = setup(domain, n, h);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for &lambda in &LAMBDAS {
            let solver = op.solver(lambda).unwrap();
            for k in 0..40 {
                // half signed (contraction), half nonnegative (positivity too)
                let f = if k % 2 == 0 {
                    random_values(&grid, &mut rng, -1.0, 1.0)
                } else {
                    random_values(&grid, &mut rng, 0.0, 1.0)
                };
                let u = solver.solve(&f.values).unwrap();
                let f_sup = f
                    .values
                    .iter()
                    .zip(&op.class)
                    .filter(|(_, c)| **c == NodeClass::Interior)
                    .fold(0.0f64, |a, (v, _)| a.max(v.abs()));
                let u_sup = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                assert!(
                    lambda * u_sup <= f_sup * (1.0 + 1e-9),
                    "{name}: contraction failed at lambda {lambda}"
                );
                if f.values.iter().all(|v| *v >= 0.0) {
                    assert!(
                        u.iter().all(|v| *v >= -1e-12),
                        "{name}: positivity failed at lambda {lambda}"
                    );
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "runtime budget exceeded: {elapsed:?}");
    println!(
        "criterion 01 [pass] resolvent contraction and positivity: 400 solves over lambda in {LAMBDAS:?}, {elapsed:?}"
    );
}

#[test]
fn criterion_02_pseudoresolvent_identity_with_dense_oracle() {
    // residual on a fixed truncation for every lambda pair
    let (grid, op) = setup(half_line(), 6, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let f = random_values(&grid, &mut rng, -1.0, 1.0);
    let mut worst: f64 = 0.0;
    for i in 0..LAMBDAS.len() {
        for j in (i + 1)..LAMBDAS.len() {
            let r = resolvent_identity_residual(&op, LAMBDAS[i], LAMBDAS[j], &f).unwrap();
            worst = worst.max(r / f.sup_norm());
        }
    }
    assert!(worst <= 1e-8, "relative residual {worst:.3e}");

    // dense-inverse oracle on a grid of at most 50 nodes
    let (tiny, tiny_op) = setup(half_line(), 2, 0.1);
    assert!(tiny.node_count() <= 50, "oracle grid has {} nodes", tiny.node_count());
    let f = random_values(&tiny, &mut rng, -1.0, 1.0);
    let lambda = 1.0;
    let u = solve_resolvent(&tiny_op, lambda, &f).unwrap();
    let sys = tiny_op.system(lambda);
    let mut rhs = vec![0.0; tiny.node_count()];
    for i in 0..tiny.node_count() {
        if tiny_op.class[i] == NodeClass::Interior {
            rhs[i] = f.values[i];
        }
    }
    let oracle = dense_solve(&sys, &rhs);
    let mut gap: f64 = 0.0;
    for i in 0..tiny.node_count() {
        gap = gap.max((u.values[i] - oracle[i]).abs());
    }
    assert!(gap <= 1e-12, "dense oracle disagreement {gap:.3e}");
    println!(
        "criterion 02 [pass] pseudoresolvent identity: worst relative residual {worst:.3e}, dense-oracle gap {gap:.3e}"
    );
}

#[test]
fn criterion_03_monotone_exhaustion_with_decaying_increments() {
    // full sweep n0 .. n0+8: monotone increments that decay below 1e-8
    let params = ExhaustParams { tol: Some(0.0), max_n: Some(2 + 8), ..Default::default() };
    let err = exhaust_resolvent(&ou(), &delta2(half_line()), 1.0, &|_| 1.0, 0.1, &params)
        .unwrap_err();
    let history = match err {
        SolveError::ExhaustionStalled { history, .. } => history,
        other => panic!("expected the full-sweep history, got {other}"),
    };
    assert_eq!(history.len(), 8, "one increment per step from n0 = 2 to 10");
    // monotonicity is asserted inside the exhaustion at -1e-12; the recorded
    // increments must additionally decay below 1e-8 for the ou preset
    assert!(history.last().unwrap() < &1e-8, "increments {history:?}");
    // a second, sign-changing right-hand side exercises the split
    let params = ExhaustParams::default();
    let ex = exhaust_resolvent(
        &ou(),
        &delta2(half_line()),
        1.0,
        &|p: Point| (3.0 - p.x).max(0.0) - 0.5 * (-(p.x - 2.0).powi(2)).exp(),
        0.1,
        &params,
    )
    .unwrap();
    assert!(ex.diagnostics.converged);
    println!(
        "criterion 03 [pass] monotone exhaustion: increments decay {:?} (last {:.2e})",
        history,
        history.last().unwrap()
    );
}

#[test]
fn criterion_04_closed_form_markov_solve() {
    // 1D (1, inf), a = 1, b = 0, mu(1) = delta_2, lambda = 1, f = 1: the
    // bounded solution is u = 1 + C e^{-x} with the boundary condition
    // u(1) = u(2) forcing C = 0
    let laplace = CoefficientField::from_exprs([["1", "0"], ["0", "1"]], ["0", "0"], "1").unwrap();
    let tol_exhaust = 1e-8;
    let mut errors = Vec::new();
    for &h in &[0.1, 0.05, 0.025] {
        let params = ExhaustParams { tol: Some(tol_exhaust), ..Default::default() };
        let ex = exhaust_resolvent(&laplace, &delta2(half_line()), 1.0, &|_| 1.0, h, &params)
            .unwrap();
        let mut err: f64 = 0.0;
        for (i, p) in ex.grid.nodes.iter().enumerate() {
            if ex.window.contains(*p) {
                err = err.max((ex.u.values[i] - 1.0).abs());
            }
        }
        assert!(err <= 1.0 * h, "|u - 1| = {err:.3e} exceeds C h at h = {h}");
        errors.push(err);
    }
    // the scheme reproduces constants exactly, so the only error left is the
    // exhaustion tail; when errors sit at that floor the order clause holds
    // vacuously, otherwise the observed rate must be at least 1
    let floor = 10.0 * tol_exhaust;
    let order_note = if errors.iter().all(|e| *e <= floor) {
        format!("errors at exhaustion floor {:?}", errors)
    } else {
        let o1 = (errors[0] / errors[1]).log2();
        let o2 = (errors[1] / errors[2]).log2();
        assert!(o1 >= 0.9 && o2 >= 0.9, "observed orders {o1:.2}, {o2:.2}");
        format!("observed orders {o1:.2}, {o2:.2}")
    };
    println!("criterion 04 [pass] closed-form solve u = 1: {order_note}");
}

#[test]
fn criterion_05_markov_defect_under_lyapunov() {
    for (name, domain, h, tau) in [("1d", half_line(), 0.1, 0.01), ("2d", annulus(), 0.2, 0.02)]
    {
        // uniqueness Lyapunov hypothesis with V = |x|^2
        let rep = verify_uniqueness_lyapunov(
            &LyapunovSpec::quadratic(),
            &ou(),
            &domain,
            1.0,
            &[3, 4, 5],
            h,
        );
        assert!(rep.pass, "{name}: uniqueness hypothesis must hold: {rep:?}");

        // Markov defect at the exhausted truncation and a refinement of it
        let spec = delta2(domain);
        let mut defects = Vec::new();
        for (hh, tt) in [(h, tau), (h / 2.0, tau / 2.0)] {
            let params = ExhaustParams { max_n: Some(12), ..Default::default() };
            let ex = exhaust_resolvent(&ou(), &spec, 1.0, &|_| 1.0, hh, &params).unwrap();
            let ev = SemigroupEvolver::new(&ex.op, tt).unwrap();
            let defect = ev.markov_defect(&ex.grid, 1.0, &ex.window).unwrap();
            defects.push(defect);
        }
        assert!(
            defects.iter().all(|d| *d <= 1e-3),
            "{name}: defects past plateau {defects:?}"
        );

        // frozen small truncation leaks strictly more
        let n_small = 2;
        let g_small = build_exhaustion(&domain, n_small, h).unwrap();
        let tm_small = spec.truncate(n_small, &g_small).unwrap();
        let op_small = assemble(&g_small, &ou(), &tm_small).unwrap();
        let ev_small = SemigroupEvolver::new(&op_small, tau).unwrap();
        let w_small = Window::new((n_small + 1) as f64 - 0.5);
        let d_small = ev_small.markov_defect(&g_small, 1.0, &w_small).unwrap();
        assert!(
            d_small > 10.0 * defects[0].max(1e-12),
            "{name}: mass-leak ordering (small {d_small:.3e} vs {:.3e})",
            defects[0]
        );
        println!(
            "criterion 05 [pass] ({name}) Markov defect {defects:?} <= 1e-3; frozen n = {n_small} leaks {d_small:.3e}"
        );
    }
}

#[test]
fn criterion_06_chapman_kolmogorov_exactness() {
    let (grid, op) = setup(half_line(), 6, 0.1);
    let ev = SemigroupEvolver::new(&op, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f = random_values(&grid, &mut rng, -1.0, 1.0);
        let r = ev.chapman_kolmogorov_residual(&f, 0.08, 0.06).unwrap();
        worst = worst.max(r);
    }
    assert!(worst <= 1e-12, "worst residual {worst:.3e}");
    println!("criterion 06 [pass] Chapman-Kolmogorov exact on 100 random f: worst {worst:.3e}");
}

#[test]
fn criterion_07_invariant_measure_triple_agreement() {
    let spec = delta2(half_line());
    let params = ExhaustParams { max_n: Some(12), ..Default::default() };
    let ex = exhaust_resolvent(&ou(), &spec, 1.0, &|_| 1.0, 0.1, &params).unwrap();
    let window = ex.window;

    // route 1: Abel means down to lambda = 2^-10
    let lambdas: Vec<f64> = (0..=10).map(|k| 1.0 / (1u64 << k) as f64).collect();
    let abel = abel_invariant(&ex.op, &ex.grid, Point::new(2.5, 0.0), &lambdas, &window, 1e-3)
        .unwrap();
    assert!(abel.converged);
    let mut nu_abel = abel.final_measure().clone();
    nu_abel.normalize();

    // uniqueness: a second starting point gives the same limit within 2e-3
    let abel2 = abel_invariant(&ex.op, &ex.grid, Point::new(4.0, 0.0), &lambdas, &window, 1e-3)
        .unwrap();
    let d_start = tv_distance(abel.final_measure(), abel2.final_measure()).unwrap();
    assert!(d_start <= 2e-3, "Abel limits from two starting points differ by {d_start:.3e}");

    // route 2: adjoint fixed point
    let ev = SemigroupEvolver::new(&ex.op, 0.02).unwrap();
    let stat = stationary_solve(&ev, &ex.grid, 1e-3).unwrap();
    assert!(stat.stationary_exists && stat.converged);

    // route 3: Monte Carlo occupation, 1e5 particle-time units
    let mc_params = SimParams {
        dt: 1e-3,
        horizon: 500.0,
        n_particles: 200,
        seed: 707,
        ..Default::default()
    };
    let (occupation, occ_rep) =
        estimate_invariant(&ou(), &spec, Point::new(2.5, 0.0), &ex.grid, 20.0, &mc_params)
            .unwrap();
    assert!(occ_rep.outside_fraction < 0.01);

    let d12 = tv_distance(&nu_abel, &stat.measure).unwrap();
    let d13 = tv_distance(&nu_abel, &occupation).unwrap();
    let d23 = tv_distance(&stat.measure, &occupation).unwrap();
    assert!(d12 <= 0.05 && d13 <= 0.05 && d23 <= 0.05, "pairwise TV ({d12:.4}, {d13:.4}, {d23:.4})");
    println!(
        "criterion 07 [pass] triple agreement: TV(abel, stationary) = {d12:.4}, TV(abel, mc) = {d13:.4}, TV(stationary, mc) = {d23:.4}; two-start gap {d_start:.2e}"
    );
}

#[test]
fn criterion_08_total_variation_convergence() {
    let spec = delta2(half_line());
    let params = ExhaustParams { max_n: Some(12), ..Default::default() };
    let ex = exhaust_resolvent(&ou(), &spec, 1.0, &|_| 1.0, 0.1, &params).unwrap();
    let ev = SemigroupEvolver::new(&ex.op, 0.02).unwrap();
    let star = stationary_solve(&ev, &ex.grid, 1e-3).unwrap().measure;
    let start = MeasureVector::delta(
        &ex.grid,
        ex.grid.nearest_node_of(Point::new(2.5, 0.0), NodeClass::Interior),
    );
    let times = [0.5, 1.0, 2.0, 4.0, 8.0];
    let rep = convergence_study(&ev, &ex.grid, &start, &star, &times, &ex.window).unwrap();
    assert!(
        rep.tv.windows(2).all(|w| w[1] <= w[0] + 1e-9),
        "TV must be nonincreasing: {:?}",
        rep.tv
    );
    assert!(rep.tv.last().unwrap() < &1e-2, "horizon TV {:?}", rep.tv);
    println!("criterion 08 [pass] TV convergence from a point mass: {:?}", rep.tv);
}

#[test]
fn criterion_09_brownian_negative_control() {
    let bm = CoefficientField::brownian();
    let spec = delta2(half_line());

    // the invariant-measure criterion fails: A V = 2 d does not diverge
    let inv = verify_invariant_lyapunov(&LyapunovSpec::quadratic(), &bm, &spec, 9.0);
    assert!(!inv.cond_ii && !inv.pass, "A V is constant: {inv:?}");

    // ... while the uniqueness hypothesis still holds
    let uniq = verify_uniqueness_lyapunov(
        &LyapunovSpec::quadratic(),
        &bm,
        &half_line(),
        1.0,
        &[3, 4, 5],
        0.05,
    );
    assert!(uniq.pass);

    // Abel window mass shrinks as lambda drops: no invariant probability
    let g = build_exhaustion(&half_line(), 20, 0.1).unwrap();
    let tm = spec.truncate(20, &g).unwrap();
    let op = assemble(&g, &bm, &tm).unwrap();
    let w = Window::new(3.0);
    let abel = abel_invariant(&op, &g, Point::new(2.5, 0.0), &[1.0, 1.0 / 1024.0], &w, 1e-3)
        .unwrap();
    let (m1, m2) = (abel.steps[0].window_mass, abel.steps[1].window_mass);
    assert!(m2 < m1, "window mass must decay: {m1:.4} -> {m2:.4}");

    // the Markov defect stays small: the process conserves mass, it just
    // spreads it out
    let ev = SemigroupEvolver::new(&op, 0.01).unwrap();
    let defect = ev.markov_defect(&g, 1.0, &w).unwrap();
    assert!(defect <= 1e-3, "defect {defect:.3e}");

    // Monte Carlo occupation of the window does not stabilize: quadrupling
    // the horizon visibly drains it (fixed seeds)
    let mut occ_fracs = Vec::new();
    for horizon in [25.0, 100.0] {
        let params = SimParams {
            dt: 1e-3,
            horizon,
            n_particles: 64,
            seed: 909,
            ..Default::default()
        };
        let (occupation, rep) =
            estimate_invariant(&bm, &spec, Point::new(2.5, 0.0), &g, 2.0, &params).unwrap();
        let in_window = occupation.mass_on(&g.window_indices(&w));
        occ_fracs.push((1.0 - rep.outside_fraction) * in_window);
    }
    assert!(
        occ_fracs[1] < 0.8 * occ_fracs[0],
        "window occupation should drain: {occ_fracs:?}"
    );
    println!(
        "criterion 09 [pass] negative control: cond-ii fails, Abel window mass {m1:.4} -> {m2:.4}, defect {defect:.2e}, occupation {occ_fracs:?}"
    );
}

#[test]
fn criterion_10_monte_carlo_cross_check() {
    let spec = delta2(half_line());
    let params = ExhaustParams { max_n: Some(12), ..Default::default() };
    let ex = exhaust_resolvent(&ou(), &spec, 1.0, &|_| 1.0, 0.00625, &params).unwrap();
    let ev = SemigroupEvolver::new(&ex.op, 0.00125).unwrap();
    let x0 = Point::new(2.5, 0.0);
    let node0 = ex.grid.nearest_node_of(x0, NodeClass::Interior);

    let mut lines = Vec::new();
    for &t in &[0.5, 1.0, 2.0] {
        let mc_params = SimParams {
            dt: 1.25e-4,
            horizon: t,
            n_particles: 8_000,
            seed: 1010 + (t * 10.0) as u64,
            record_jumps: true,
            ..Default::default()
        };
        let ens = simulate_paths(&ou(), &spec, ex.grid.nodes[node0], &mc_params).unwrap();
        for (name, f) in test_dictionary() {
            let fv = GridFunction::from_fn(&ex.grid, f.as_ref());
            let pde = ev.evolve(&fv, t).unwrap().values[node0];
            let (mc, se) = estimate_expectation(&ens, f.as_ref()).unwrap();
            let delta = (pde - mc).abs();
            assert!(
                delta <= 3.0 * se + 1e-6,
                "{name} at t = {t}: |pde - mc| = {delta:.4e} vs 3 se = {:.4e}",
                3.0 * se
            );
            lines.push(format!("{name}@{t}: {delta:.1e} <= {:.1e}", 3.0 * se + 1e-6));
        }
        // post-jump distribution against mu(z); for the single atom this
        // checks every return lands exactly on it
        let chi = chi_square_jump_test(&ens.first_jumps(), &spec);
        assert!(chi.pass, "chi2 {chi:?}");
    }

    // the density variant gives the chi-square test nontrivial bins
    let dens = BoundaryMeasureSpec::density(
        DensityKind::UniformInterval { lo: 1.5, hi: 2.5 },
        half_line(),
    )
    .unwrap();
    let mc_params = SimParams {
        dt: 1e-3,
        horizon: 2.0,
        n_particles: 4000,
        seed: 1011,
        record_jumps: true,
        ..Default::default()
    };
    let ens = simulate_paths(&ou(), &dens, Point::new(1.05, 0.0), &mc_params).unwrap();
    let first = ens.first_jumps();
    assert!(first.len() > 3000, "need iid first jumps, got {}", first.len());
    let chi = chi_square_jump_test(&first, &dens);
    assert!(chi.pass, "density chi2: {chi:?}");
    println!(
        "criterion 10 [pass] oracle cross-check within 3 SE ({}); chi-square {:.2} < {:.2} on {} density jumps",
        lines.join(", "),
        chi.statistic,
        chi.threshold_99,
        chi.samples
    );
}

#[test]
fn criterion_11_modified_lyapunov_construction() {
    let spec = delta2(half_line());
    let (modified, rep) = modify_lyapunov(&spec).unwrap();
    // the inequality chain held at every sampled z inside modify_lyapunov;
    // its recorded extremes must respect M + 1 = V(z) on the boundary
    let m = rep.second_moment;
    assert!((m - 4.0).abs() < 1e-12);
    assert!(rep.worst_bound <= m + 1.0 + 1e-9);
    assert!(rep.worst_integral <= m + 1.0 + 1e-9);
    let boundary_value = modified.v(Point::new(1.0, 0.0));
    assert!((boundary_value - (m + 1.0)).abs() < 1e-12);

    // and the modified function certifies the invariant measure for the preset
    let inv = verify_invariant_lyapunov(&modified, &ou(), &spec, 9.0);
    assert!(inv.pass, "{inv:?}");
    println!(
        "criterion 11 [pass] modified Lyapunov: M = {m}, eps = {}, chain max {:.4} <= {:.4} = M+1",
        rep.epsilon,
        rep.worst_integral,
        m + 1.0
    );
}

/// Dense Gauss-Jordan solve: the independent oracle for tiny systems.
fn dense_solve(mat: &SparseMat, rhs: &[f64]) -> Vec<f64> {
    let n = mat.n;
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for r in 0..n {
        for (c, v) in mat.row(r) {
            a[r][c] += v;
        }
        a[r][n] = rhs[r];
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        assert!(d.abs() > 1e-14, "singular dense system");
        for c in col..=n {
            a[col][c] /= d;
        }
        for r in 0..n {
            if r != col && a[r][col] != 0.0 {
                let factor = a[r][col];
                for c in col..=n {
                    a[r][c] -= factor * a[col][c];
                }
            }
        }
    }
    (0..n).map(|r| a[r][n]).collect()
}
