//! Stochastic oracle: Euler–Maruyama simulation of the jump-return diffusion.
//!
//! Inside Ω a particle moves by `X <- X + b dt + sqrt(2a) sqrt(dt) xi`; the
//! generator of this scheme is `Σ a_ij D_i D_j + b·∇` (no 1/2, matching the
//! operator convention used everywhere else, hence the factor 2 under the
//! square root). When a step exits Ω, the exit point is located on the chord
//! and the particle restarts from a fresh sample of μ(z). Everything is
//! reproducible: each particle owns a counter-based stream derived from
//! (seed, particle index), so results do not depend on thread scheduling.

use crate::error::McError;
use crate::grid::{DomainSpec, Grid, Point};
use crate::invariant::MeasureVector;
use crate::measure::BoundaryMeasureSpec;
use crate::operator::CoefficientField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct SimParams {
    pub dt: f64,
    pub horizon: f64,
    pub n_particles: usize,
    pub seed: u64,
    /// excursions beyond this radius are counted as escapes (diagnostic)
    pub escape_radius: f64,
    /// record (time, exit z, jump target) events
    pub record_jumps: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 1e-3,
            horizon: 1.0,
            n_particles: 1000,
            seed: 0,
            escape_radius: 65.0,
            record_jumps: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JumpEvent {
    pub particle: u64,
    pub time: f64,
    pub exit: (f64, f64),
    pub target: (f64, f64),
}

#[derive(Debug)]
pub struct ParticleEnsemble {
    pub positions: Vec<Point>,
    pub time: f64,
    pub seed: u64,
    pub boundary_hits: u64,
    pub escapes: u64,
    pub jumps: Vec<JumpEvent>,
}

impl ParticleEnsemble {
    /// The first recorded jump of every particle: iid draws from μ(z),
    /// suitable for goodness-of-fit tests.
    pub fn first_jumps(&self) -> Vec<JumpEvent> {
        let mut seen = std::collections::HashSet::new();
        self.jumps
            .iter()
            .filter(|j| seen.insert(j.particle))
            .cloned()
            .collect()
    }
}

/// sqrt of the symmetric positive semidefinite 2x2 matrix m (closed form).
fn sqrt_spd(m: [[f64; 2]; 2], dim: usize) -> Result<[[f64; 2]; 2], McError> {
    if dim == 1 {
        let v = m[0][0];
        if v < -1e-12 {
            return Err(McError::NotPositiveSemidefinite { eig: v, x: 0.0, y: 0.0 });
        }
        return Ok([[v.max(0.0).sqrt(), 0.0], [0.0, 0.0]]);
    }
    let tr_half = 0.5 * (m[0][0] + m[1][1]);
    let det_part = (0.5 * (m[0][0] - m[1][1])).hypot(m[0][1]);
    let (l1, l2) = (tr_half + det_part, tr_half - det_part);
    if l2 < -1e-12 {
        return Err(McError::NotPositiveSemidefinite { eig: l2, x: 0.0, y: 0.0 });
    }
    let (s1, s2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
    if det_part < 1e-14 {
        // (near-)isotropic
        return Ok([[s1, 0.0], [0.0, s1]]);
    }
    // eigenvector for l1
    let (ex, ey) = if m[0][1].abs() > 1e-300 {
        (l1 - m[1][1], m[0][1])
    } else if m[0][0] >= m[1][1] {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let nrm = ex.hypot(ey);
    let (ex, ey) = (ex / nrm, ey / nrm);
    // sqrt = s1 e e' + s2 (I - e e')
    Ok([
        [s2 + (s1 - s2) * ex * ex, (s1 - s2) * ex * ey],
        [(s1 - s2) * ex * ey, s2 + (s1 - s2) * ey * ey],
    ])
}

struct ParticleOutcome {
    position: Point,
    hits: u64,
    escapes: u64,
    jumps: Vec<JumpEvent>,
    occupation: Vec<(usize, f64)>,
    outside_time: f64,
    error: Option<McError>,
}

/// Advances one particle to the horizon. `bins` enables occupation recording
/// on the given grid after `burn_in`.
#[allow(clippy::too_many_arguments)]
fn run_particle(
    coeff: &CoefficientField,
    spec: &BoundaryMeasureSpec,
    domain: &DomainSpec,
    x0: Point,
    params: &SimParams,
    particle: u64,
    bins: Option<(&Grid, f64)>,
    occupation: &mut Vec<f64>,
) -> ParticleOutcome {
    let dim = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(1 + particle);
    let mut x = x0;
    let mut t = 0.0;
    let mut hits = 0u64;
    let mut escapes = 0u64;
    let mut outside = false;
    let mut outside_time = 0.0;
    let mut jumps = Vec::new();

    let advance = |x: &mut Point, dt: f64, t: f64, rng: &mut ChaCha8Rng, hits: &mut u64, jumps: &mut Vec<JumpEvent>| -> Result<(), McError> {
        let a = coeff.a(*x);
        let b = coeff.b(*x);
        let root = sqrt_spd([[2.0 * a[0][0], 2.0 * a[0][1]], [2.0 * a[1][0], 2.0 * a[1][1]]], dim)
            .map_err(|e| match e {
                McError::NotPositiveSemidefinite { eig, .. } => {
                    McError::NotPositiveSemidefinite { eig, x: x.x, y: x.y }
                }
                other => other,
            })?;
        let sdt = dt.sqrt();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = if dim == 2 { rng.sample(StandardNormal) } else { 0.0 };
        let proposal = Point::new(
            x.x + b[0] * dt + sdt * (root[0][0] * z1 + root[0][1] * z2),
            if dim == 2 {
                x.y + b[1] * dt + sdt * (root[1][0] * z1 + root[1][1] * z2)
            } else {
                0.0
            },
        );
        if domain.contains(proposal) {
            *x = proposal;
        } else {
            // locate the exit on the chord and return instantly
            let z = domain.boundary_crossing(*x, proposal);
            let target = spec.sample(z, rng);
            *hits += 1;
            jumps.push(JumpEvent {
                particle,
                time: t,
                exit: (z.x, z.y),
                target: (target.x, target.y),
            });
            *x = target;
        }
        Ok(())
    };

    let steps = (params.horizon / params.dt).round() as u64;
    for k in 0..steps {
        // sub-step near the boundary to reduce exit-overshoot bias
        let a = coeff.a(x);
        let tr = a[0][0] + if dim == 2 { a[1][1] } else { 0.0 };
        let reach = 3.0 * (2.0 * tr * params.dt).sqrt();
        let res = if domain.boundary_distance(x) < reach {
            let sub = params.dt / 10.0;
            let mut r = Ok(());
            for j in 0..10 {
                r = advance(&mut x, sub, t + j as f64 * sub, &mut rng, &mut hits, &mut jumps);
                if r.is_err() {
                    break;
                }
            }
            r
        } else {
            advance(&mut x, params.dt, t, &mut rng, &mut hits, &mut jumps)
        };
        if let Err(e) = res {
            return ParticleOutcome {
                position: x,
                hits,
                escapes,
                jumps,
                occupation: Vec::new(),
                outside_time,
                error: Some(e),
            };
        }
        t = (k + 1) as f64 * params.dt;

        let r = x.norm();
        if r > params.escape_radius {
            if !outside {
                escapes += 1;
                outside = true;
            }
        } else {
            outside = false;
        }

        if let Some((grid, burn_in)) = bins {
            if t > burn_in {
                match bin_node(grid, x) {
                    Some(i) => occupation[i] += params.dt,
                    None => outside_time += params.dt,
                }
            }
        }
    }
    let occ: Vec<(usize, f64)> = occupation
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| (i, *v))
        .collect();
    ParticleOutcome {
        position: x,
        hits,
        escapes,
        jumps,
        occupation: occ,
        outside_time,
        error: None,
    }
}

/// Nearest lattice node, O(1) through the lattice map.
fn bin_node(grid: &Grid, p: Point) -> Option<usize> {
    let h = grid.h;
    let i = (p.x / h).round() as i64;
    let j = (p.y / h).round() as i64;
    if let Some(idx) = grid.lattice_node(i, j) {
        return Some(idx);
    }
    // rounded point may have been dropped (inside the obstacle) or snapped;
    // try the surrounding cell corners
    let fi = (p.x / h).floor() as i64;
    let fj = (p.y / h).floor() as i64;
    for (ci, cj) in [(fi, fj), (fi + 1, fj), (fi, fj + 1), (fi + 1, fj + 1)] {
        if let Some(idx) = grid.lattice_node(ci, cj) {
            return Some(idx);
        }
    }
    None
}

/// Runs an ensemble of independent particles from x0 to the horizon.
pub fn simulate_paths(
    coeff: &CoefficientField,
    spec: &BoundaryMeasureSpec,
    x0: Point,
    params: &SimParams,
) -> Result<ParticleEnsemble, McError> {
    let domain = *spec.domain();
    if !(params.dt > 0.0) {
        return Err(McError::NonPositiveDt(params.dt));
    }
    if !domain.contains(x0) {
        return Err(McError::StartOutsideDomain { x: x0.x, y: x0.y });
    }
    let outcomes: Vec<ParticleOutcome> = (0..params.n_particles)
        .into_par_iter()
        .map(|idx| {
            let mut unused = Vec::new();
            run_particle(coeff, spec, &domain, x0, params, idx as u64, None, &mut unused)
        })
        .collect();
    let mut positions = Vec::with_capacity(outcomes.len());
    let mut hits = 0u64;
    let mut escapes = 0u64;
    let mut jumps = Vec::new();
    for o in outcomes {
        if let Some(e) = o.error {
            return Err(e);
        }
        positions.push(o.position);
        hits += o.hits;
        escapes += o.escapes;
        if params.record_jumps {
            jumps.extend(o.jumps);
        }
    }
    Ok(ParticleEnsemble {
        positions,
        time: params.horizon,
        seed: params.seed,
        boundary_hits: hits,
        escapes,
        jumps,
    })
}

/// Sample mean and standard error of f over the ensemble.
pub fn estimate_expectation(
    ens: &ParticleEnsemble,
    f: &dyn Fn(Point) -> f64,
) -> Result<(f64, f64), McError> {
    let n = ens.positions.len();
    if n < 2 {
        return Err(McError::TooFewParticles(n));
    }
    let vals: Vec<f64> = ens.positions.iter().map(|&p| f(p)).collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok((mean, (var / n as f64).sqrt()))
}

#[derive(Debug, Serialize)]
pub struct OccupationReport {
    pub total_time: f64,
    /// fraction of post-burn-in time spent outside the binning grid
    pub outside_fraction: f64,
    pub escapes: u64,
    pub boundary_hits: u64,
}

/// Time-average occupation of an ensemble binned to grid nodes: the
/// stochastic estimate of the invariant measure, normalized on the grid.
pub fn estimate_invariant(
    coeff: &CoefficientField,
    spec: &BoundaryMeasureSpec,
    x0: Point,
    grid: &Grid,
    burn_in: f64,
    params: &SimParams,
) -> Result<(MeasureVector, OccupationReport), McError> {
    let domain = *spec.domain();
    if !(params.dt > 0.0) {
        return Err(McError::NonPositiveDt(params.dt));
    }
    if !domain.contains(x0) {
        return Err(McError::StartOutsideDomain { x: x0.x, y: x0.y });
    }
    let outcomes: Vec<ParticleOutcome> = (0..params.n_particles)
        .into_par_iter()
        .map(|idx| {
            let mut occ = vec![0.0f64; grid.node_count()];
            run_particle(
                coeff,
                spec,
                &domain,
                x0,
                params,
                idx as u64,
                Some((grid, burn_in)),
                &mut occ,
            )
        })
        .collect();
    let mut occupation = vec![0.0f64; grid.node_count()];
    let mut outside = 0.0;
    let mut hits = 0u64;
    let mut escapes = 0u64;
    for o in outcomes {
        if let Some(e) = o.error {
            return Err(e);
        }
        for (i, v) in o.occupation {
            occupation[i] += v;
        }
        outside += o.outside_time;
        hits += o.hits;
        escapes += o.escapes;
    }
    let inside: f64 = occupation.iter().sum();
    let total = inside + outside;
    let masses: Vec<f64> = if inside > 0.0 {
        occupation.iter().map(|v| v / inside).collect()
    } else {
        occupation
    };
    let measure = MeasureVector { masses, grid_fingerprint: grid.fingerprint() };
    Ok((
        measure,
        OccupationReport {
            total_time: total,
            outside_fraction: if total > 0.0 { outside / total } else { 0.0 },
            escapes,
            boundary_hits: hits,
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub threshold_99: f64,
    pub pass: bool,
    pub samples: usize,
}

/// 99% chi-square quantile by the Wilson–Hilferty approximation.
pub fn chi_square_quantile_99(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 2.326347874040841; // N(0,1) quantile at 0.99
    k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3)
}

/// Chi-square goodness-of-fit of recorded post-jump positions against μ(z).
/// Atomic specs bin by atom; densities by equal-mass radial bins (times a
/// 4-way angular split in 2D, where the shipped densities are isotropic).
///
/// Pass iid samples: each particle's first jump qualifies
/// ([`ParticleEnsemble::first_jumps`]); pooling all jumps of a path
/// over-disperses the counts because jump frequency depends on the targets
/// already drawn.
pub fn chi_square_jump_test(
    jumps: &[JumpEvent],
    spec: &BoundaryMeasureSpec,
) -> ChiSquareReport {
    let n = jumps.len();
    let (observed, expected): (Vec<f64>, Vec<f64>) = if let Some(atoms) = spec.atoms() {
        let mut obs = vec![0.0; atoms.len()];
        for j in jumps {
            let target = Point::new(j.target.0, j.target.1);
            let k = atoms
                .iter()
                .position(|a| a.location().dist(target) < 1e-9)
                .expect("jump target must be an atom");
            obs[k] += 1.0;
        }
        let exp = atoms.iter().map(|a| a.weight * n as f64).collect();
        (obs, exp)
    } else {
        let radial_bins = 8usize;
        let angular_bins = if spec.domain().dim() == 2 { 4usize } else { 1 };
        let edges: Vec<f64> =
            (0..=radial_bins).map(|k| spec.radial_quantile(k as f64 / radial_bins as f64)).collect();
        let mut obs = vec![0.0; radial_bins * angular_bins];
        for j in jumps {
            let p = Point::new(j.target.0, j.target.1);
            let r = p.norm();
            let mut kr = radial_bins - 1;
            for b in 0..radial_bins {
                if r <= edges[b + 1] {
                    kr = b;
                    break;
                }
            }
            let ka = if angular_bins > 1 {
                let th = p.y.atan2(p.x).rem_euclid(2.0 * std::f64::consts::PI);
                ((th / (2.0 * std::f64::consts::PI) * angular_bins as f64) as usize)
                    .min(angular_bins - 1)
            } else {
                0
            };
            obs[kr * angular_bins + ka] += 1.0;
        }
        let exp = vec![n as f64 / (radial_bins * angular_bins) as f64; radial_bins * angular_bins];
        (obs, exp)
    };
    let mut statistic = 0.0;
    let mut dof = 0usize;
    for (o, e) in observed.iter().zip(&expected) {
        if *e > 0.0 {
            statistic += (o - e) * (o - e) / e;
            dof += 1;
        }
    }
    let dof = dof.saturating_sub(1).max(1);
    let threshold_99 = chi_square_quantile_99(dof);
    ChiSquareReport { statistic, dof, threshold_99, pass: statistic < threshold_99, samples: n }
}
