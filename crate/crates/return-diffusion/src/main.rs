//! `retdiff`: command-line harness for the diffusion-with-return toolkit.
//!
//! Usage: retdiff <grid|solve|evolve|lyapunov|invariant|simulate|verify|compare>
//!        --config PATH [--out DIR] [--seed N] [--jobs K]
//!
//! Exit codes: 0 success, 1 property failure, 2 config error, 3 numerical
//! failure.

use return_diffusion::config::{config_hash, RunConfig};
use return_diffusion::error::{ConfigError, Error};
use return_diffusion::grid::{build_exhaustion, Point, Window};
use return_diffusion::invariant::{
    abel_invariant, convergence_study, stationary_solve, test_dictionary,
    MeasureVector,
};
use return_diffusion::lyapunov::{modify_lyapunov, verify_invariant_lyapunov, verify_uniqueness_lyapunov, LyapunovSpec};
use return_diffusion::montecarlo::{
    chi_square_jump_test, estimate_expectation, estimate_invariant, simulate_paths, SimParams,
};
use return_diffusion::report::{write_csv, write_json, RunMeta};
use return_diffusion::resolvent::{default_start_index, exhaust_resolvent, ExhaustParams, GridFunction};
use return_diffusion::semigroup::SemigroupEvolver;
use return_diffusion::verify::run_property_suite;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

struct Cli {
    subcommand: String,
    config: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    jobs: Option<usize>,
}

fn usage() -> String {
    "usage: retdiff <grid|solve|evolve|lyapunov|invariant|simulate|verify|compare> \
     --config PATH [--out DIR] [--seed N] [--jobs K]"
        .to_string()
}

fn parse_args() -> Result<Cli, ConfigError> {
    let mut args = std::env::args().skip(1);
    let subcommand = args.next().ok_or_else(|| ConfigError::Parse(usage()))?;
    let known = ["grid", "solve", "evolve", "lyapunov", "invariant", "simulate", "verify", "compare"];
    if !known.contains(&subcommand.as_str()) {
        return Err(ConfigError::Parse(format!("unknown subcommand `{subcommand}`; {}", usage())));
    }
    let mut config = None;
    let mut out = PathBuf::from("out");
    let mut seed = None;
    let mut jobs = None;
    while let Some(flag) = args.next() {
        let mut value = || {
            args.next().ok_or_else(|| ConfigError::Parse(format!("flag {flag} needs a value")))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value()?)),
            "--out" => out = PathBuf::from(value()?),
            "--seed" => {
                seed = Some(value()?.parse().map_err(|e| {
                    ConfigError::Parse(format!("bad --seed: {e}"))
                })?)
            }
            "--jobs" => {
                jobs = Some(value()?.parse().map_err(|e| {
                    ConfigError::Parse(format!("bad --jobs: {e}"))
                })?)
            }
            other => return Err(ConfigError::Parse(format!("unknown flag `{other}`; {}", usage()))),
        }
    }
    Ok(Cli {
        subcommand,
        config: config.ok_or_else(|| ConfigError::Parse(format!("--config is required; {}", usage())))?,
        out,
        seed,
        jobs,
    })
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().ok();
    }
    match run(&cli) {
        Ok(success) => {
            if success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Runs the subcommand; Ok(false) marks a property failure (exit 1).
fn run(cli: &Cli) -> Result<bool, Error> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let hash = config_hash(&cfg);
    let problem = cfg.build()?;
    let meta = |module: &str, operation: &str| RunMeta::new(module, operation, hash, problem.config.seed);

    let num = &problem.config.numerics;
    let task = &problem.config.task;
    let n0 = num.n0.unwrap_or_else(|| default_start_index(&problem.measure));
    let window = Window::new(num.window_radius.unwrap_or((n0 + 1) as f64));
    let exhaust_params = ExhaustParams {
        n0: Some(n0),
        tol: Some(num.tol_exhaust),
        max_n: Some(num.max_n),
        window: Some(window),
    };
    let x0 = task
        .x0
        .map(|p| Point::new(p.x, p.y))
        .unwrap_or(Point::new(problem.domain.inner_radius() + 1.0, 0.0));

    match cli.subcommand.as_str() {
        "grid" => {
            let n = task.n.unwrap_or(n0);
            let grid = build_exhaustion(&problem.domain, n, num.h)?;
            let m = meta("domain-grid", "build-exhaustion");
            let p = write_csv(&cli.out, "grid.csv", &m, &grid.to_csv())?;
            let tm = problem.measure.truncate(n, &grid)?;
            write_csv(
                &cli.out,
                "measure.csv",
                &RunMeta::new("boundary-measure", "truncate-measure", hash, problem.config.seed),
                &tm.to_csv(),
            )?;
            write_json(
                &cli.out,
                "grid.json",
                &m,
                json!({
                    "n": n,
                    "h": num.h,
                    "nodes": grid.node_count(),
                    "interior": grid.interior_indices().len(),
                    "physical": grid.physical_indices().len(),
                    "artificial": grid.artificial_indices().len(),
                }),
            )?;
            println!("grid: {} nodes -> {}", grid.node_count(), p.display());
            Ok(true)
        }
        "solve" => {
            let f = parse_data(task.f.as_deref().unwrap_or("1"))?;
            let ex = exhaust_resolvent(
                &problem.coeff,
                &problem.measure,
                num.lambda,
                f.as_ref(),
                num.h,
                &exhaust_params,
            )?;
            let solver = ex.op.solver(num.lambda)?;
            let m = meta("elliptic-resolvent", "exhaust-resolvent");
            write_csv(&cli.out, "solution.csv", &m, &ex.u.to_csv(&ex.grid))?;
            write_json(
                &cli.out,
                "solve.json",
                &m,
                json!({
                    "lambda": num.lambda,
                    "n-values": ex.diagnostics.n_values,
                    "increments": ex.diagnostics.increments,
                    "converged": ex.diagnostics.converged,
                    "condition-estimate": solver.condition_estimate(),
                    "sup-u": ex.u.sup_norm(),
                }),
            )?;
            println!(
                "solve: converged = {}, final n = {}, sup u = {:.6e}",
                ex.diagnostics.converged,
                ex.grid.n,
                ex.u.sup_norm()
            );
            Ok(true)
        }
        "evolve" => {
            let ex = exhaust_resolvent(
                &problem.coeff,
                &problem.measure,
                num.lambda,
                &|_| 1.0,
                num.h,
                &exhaust_params,
            )?;
            let ev = SemigroupEvolver::new(&ex.op, num.tau)?;
            let t_final = task.t.unwrap_or(1.0);
            let init = parse_data(task.initial.as_deref().unwrap_or("1"))?;
            let f0 = GridFunction::from_fn(&ex.grid, init.as_ref());
            // ten snapshots along the way
            let steps = ev.steps_for(t_final)?;
            let stride = (steps / 10).max(1);
            let mut body = String::from("t,node,x,y,value\n");
            let mut u = f0.values.clone();
            let widx = ex.grid.window_indices(&window);
            for k in 0..=steps {
                if k % stride == 0 || k == steps {
                    let t = k as f64 * ev.tau;
                    for &i in &widx {
                        let p = ex.grid.nodes[i];
                        body.push_str(&format!("{},{},{},{},{}\n", t, i, p.x, p.y, u[i]));
                    }
                }
                if k < steps {
                    u = ev.step(&u)?;
                }
            }
            let defect = ev.markov_defect(&ex.grid, t_final, &window)?;
            let m = meta("semigroup-evolution", "evolve");
            write_csv(&cli.out, "evolve.csv", &m, &body)?;
            write_json(
                &cli.out,
                "evolve.json",
                &m,
                json!({ "t": t_final, "tau": ev.tau, "markov-defect": defect }),
            )?;
            println!("evolve: t = {t_final}, Markov defect = {defect:.3e}");
            Ok(true)
        }
        "lyapunov" => {
            let v = LyapunovSpec::quadratic();
            let ns: Vec<usize> = (n0..n0 + 3).collect();
            let uniq = verify_uniqueness_lyapunov(
                &v,
                &problem.coeff,
                &problem.domain,
                num.lambda,
                &ns,
                num.h,
            );
            let inv = verify_invariant_lyapunov(
                &v,
                &problem.coeff,
                &problem.measure,
                (n0 + 3) as f64,
            );
            let mut payload = json!({ "uniqueness": uniq, "invariant-quadratic": inv });
            if task.modify.unwrap_or(false) {
                let (modified, rep) = modify_lyapunov(&problem.measure)?;
                let inv2 = verify_invariant_lyapunov(
                    &modified,
                    &problem.coeff,
                    &problem.measure,
                    (n0 + 3) as f64,
                );
                payload["modified"] = json!({ "construction": rep, "invariant": inv2 });
            }
            let m = meta("lyapunov-invariant", "verify");
            write_json(&cli.out, "lyapunov.json", &m, payload.clone())?;
            let pass = payload["uniqueness"]["pass"].as_bool().unwrap_or(false);
            println!("lyapunov: uniqueness pass = {pass}");
            Ok(true)
        }
        "invariant" => {
            let mode = task.mode.as_deref().unwrap_or("abel");
            let ex = exhaust_resolvent(
                &problem.coeff,
                &problem.measure,
                num.lambda,
                &|_| 1.0,
                num.h,
                &exhaust_params,
            )?;
            let m = meta("lyapunov-invariant", mode);
            match mode {
                "abel" => {
                    let kmax = task.lambda_min_exp.unwrap_or(10);
                    let lambdas: Vec<f64> = (0..=kmax).map(|k| 1.0 / (1u64 << k) as f64).collect();
                    let rep = abel_invariant(&ex.op, &ex.grid, x0, &lambdas, &window, 1e-3)?;
                    write_csv(&cli.out, "abel.csv", &m, &rep.final_measure().to_csv(&ex.grid))?;
                    write_json(
                        &cli.out,
                        "abel.json",
                        &m,
                        json!({ "steps": rep.steps, "tv-successive": rep.tv_successive, "converged": rep.converged }),
                    )?;
                    println!("invariant (abel): converged = {}", rep.converged);
                    Ok(true)
                }
                "stationary" => {
                    let ev = SemigroupEvolver::new(&ex.op, num.tau)?;
                    let rep = stationary_solve(&ev, &ex.grid, 1e-3)?;
                    write_csv(&cli.out, "stationary.csv", &m, &rep.measure.to_csv(&ex.grid))?;
                    write_json(
                        &cli.out,
                        "stationary.json",
                        &m,
                        json!({
                            "eigenvalue": rep.eigenvalue,
                            "iterations": rep.iterations,
                            "converged": rep.converged,
                            "stationary-exists": rep.stationary_exists,
                            "markov-defect": rep.markov_defect,
                            "reliable": rep.reliable,
                        }),
                    )?;
                    println!(
                        "invariant (stationary): eigenvalue = {:.9}, exists = {}",
                        rep.eigenvalue, rep.stationary_exists
                    );
                    Ok(rep.stationary_exists)
                }
                "evolve-compare" => {
                    let ev = SemigroupEvolver::new(&ex.op, num.tau)?;
                    let stat = stationary_solve(&ev, &ex.grid, 1e-3)?;
                    let start = MeasureVector::delta(
                        &ex.grid,
                        ex.grid.nearest_node_of(x0, return_diffusion::grid::NodeClass::Interior),
                    );
                    let times = task.times.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0, 4.0, 8.0]);
                    let rep = convergence_study(&ev, &ex.grid, &start, &stat.measure, &times, &window)?;
                    write_json(&cli.out, "convergence.json", &m, json!(rep))?;
                    println!("invariant (evolve-compare): final TV = {:.3e}", rep.tv.last().unwrap_or(&f64::NAN));
                    Ok(true)
                }
                other => Err(ConfigError::Invalid {
                    key: "task.mode".into(),
                    reason: format!("unknown mode `{other}`"),
                }
                .into()),
            }
        }
        "simulate" => {
            let params = SimParams {
                dt: num.dt,
                horizon: task.horizon.unwrap_or(1.0),
                n_particles: task.particles.unwrap_or(1000),
                seed: problem.config.seed,
                record_jumps: true,
                ..Default::default()
            };
            // occupation runs are exploratory unless the invariant-measure
            // criterion holds for some Lyapunov candidate
            let quadratic_ok = verify_invariant_lyapunov(
                &LyapunovSpec::quadratic(),
                &problem.coeff,
                &problem.measure,
                (n0 + 3) as f64,
            )
            .pass;
            let modified_ok = modify_lyapunov(&problem.measure)
                .map(|(v, _)| {
                    verify_invariant_lyapunov(&v, &problem.coeff, &problem.measure, (n0 + 3) as f64)
                        .pass
                })
                .unwrap_or(false);
            let exploratory = !(quadratic_ok || modified_ok);
            let ens = simulate_paths(&problem.coeff, &problem.measure, x0, &params)?;
            let mut means = serde_json::Map::new();
            for (name, f) in test_dictionary() {
                let (mean, se) = estimate_expectation(&ens, f.as_ref())?;
                means.insert(name, json!({ "mean": mean, "se": se }));
            }
            let first = ens.first_jumps();
            let chi = if first.len() >= 64 {
                Some(chi_square_jump_test(&first, &problem.measure))
            } else {
                None
            };
            // occupation histogram binned to the grid
            let grid = build_exhaustion(&problem.domain, task.n.unwrap_or(n0 + 2), num.h)?;
            let (occ, occ_rep) = estimate_invariant(
                &problem.coeff,
                &problem.measure,
                x0,
                &grid,
                task.burn_in.unwrap_or(params.horizon * 0.1),
                &params,
            )?;
            let m = meta("montecarlo-oracle", "simulate");
            write_csv(&cli.out, "occupation.csv", &m, &occ.to_csv(&grid))?;
            write_json(
                &cli.out,
                "simulate.json",
                &m,
                json!({
                    "particles": params.n_particles,
                    "horizon": params.horizon,
                    "dt": params.dt,
                    "boundary-hits": ens.boundary_hits,
                    "escapes": ens.escapes,
                    "means": means,
                    "chi-square": chi,
                    "occupation": occ_rep,
                    "exploratory": exploratory,
                }),
            )?;
            println!(
                "simulate: {} particles, {} boundary hits, {} escapes",
                params.n_particles, ens.boundary_hits, ens.escapes
            );
            Ok(true)
        }
        "verify" => {
            let results = run_property_suite(&problem);
            let m = meta("cli-harness", "verify");
            write_json(&cli.out, "verify.json", &m, json!(results))?;
            let mut all_pass = true;
            for r in &results {
                println!("[{}] {} — {}", if r.pass { "pass" } else { "FAIL" }, r.name, r.detail);
                all_pass &= r.pass;
            }
            Ok(all_pass)
        }
        "compare" => {
            let ex = exhaust_resolvent(
                &problem.coeff,
                &problem.measure,
                num.lambda,
                &|_| 1.0,
                num.h,
                &exhaust_params,
            )?;
            let ev = SemigroupEvolver::new(&ex.op, num.tau)?;
            let times = task.times.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
            let node0 = ex.grid.nearest_node_of(x0, return_diffusion::grid::NodeClass::Interior);
            let start = ex.grid.nodes[node0];
            let mut body = String::from("f,t,pde,mc,se,delta,pass\n");
            let mut all_pass = true;
            for &t in &times {
                let params = SimParams {
                    dt: num.dt,
                    horizon: t,
                    n_particles: task.particles.unwrap_or(20_000),
                    seed: problem.config.seed,
                    record_jumps: true,
                    ..Default::default()
                };
                let ens = simulate_paths(&problem.coeff, &problem.measure, start, &params)?;
                for (name, f) in test_dictionary() {
                    let fv = GridFunction::from_fn(&ex.grid, f.as_ref());
                    let pde = ev.evolve(&fv, t)?.values[node0];
                    let (mc, se) = estimate_expectation(&ens, f.as_ref())?;
                    let delta = (pde - mc).abs();
                    let pass = delta <= 3.0 * se + 1e-3;
                    all_pass &= pass;
                    body.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        name, t, pde, mc, se, delta, pass
                    ));
                }
            }
            let m = meta("cli-harness", "compare");
            write_csv(&cli.out, "compare.csv", &m, &body)?;
            println!("compare: all rows pass = {all_pass}");
            Ok(all_pass)
        }
        _ => unreachable!("subcommand validated in parse_args"),
    }
}

/// Initial data / right-hand side: `indicator(a,b)` for the radial band, or
/// an expression in x, y, r.
fn parse_data(text: &str) -> Result<Box<dyn Fn(Point) -> f64 + Sync>, Error> {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("indicator(") {
        let inner = rest.strip_suffix(')').ok_or_else(|| ConfigError::Invalid {
            key: "task.f".into(),
            reason: "indicator needs the form indicator(a,b)".into(),
        })?;
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 2 {
            return Err(ConfigError::Invalid {
                key: "task.f".into(),
                reason: "indicator needs two bounds".into(),
            }
            .into());
        }
        let a: f64 = parts[0].trim().parse().map_err(|e| ConfigError::Invalid {
            key: "task.f".into(),
            reason: format!("bad bound: {e}"),
        })?;
        let b: f64 = parts[1].trim().parse().map_err(|e| ConfigError::Invalid {
            key: "task.f".into(),
            reason: format!("bad bound: {e}"),
        })?;
        Ok(Box::new(move |p: Point| {
            let r = p.norm();
            if r >= a && r <= b {
                1.0
            } else {
                0.0
            }
        }))
    } else {
        let expr = return_diffusion::expr::Expr::parse(trimmed).map_err(|e| {
            ConfigError::Invalid { key: "task.f".into(), reason: e.to_string() }
        })?;
        Ok(Box::new(move |p: Point| expr.eval(p)))
    }
}
