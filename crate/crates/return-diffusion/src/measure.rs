//! Boundary measures `z ↦ μ(z, ·)` and their grid discretizations.
//!
//! A boundary measure assigns to every boundary point a probability measure on
//! Ω. On a truncation Ω_n the measure is damped by the radial cutoff on both
//! arguments, which makes the family sub-probability and entrywise monotone in
//! `n`; discretely a measure becomes one quadrature weight row per
//! physical-boundary node.
//!
//! Shipped families are constant in `z` (the boundary-continuity hypothesis is
//! then immediate, but it is still validated by sampling like any other spec).

use crate::error::MeasureError;
use crate::grid::{cutoff, DomainSpec, Grid, Point};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    pub weight: f64,
}

impl Atom {
    pub fn location(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Closed-form densities on Ω, normalized to total mass 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityKind {
    /// Uniform on the interval (lo, hi), one-dimensional domains.
    UniformInterval { lo: f64, hi: f64 },
    /// Uniform (w.r.t. area) on the annulus inner < |x| < outer, d = 2.
    UniformAnnulus { inner: f64, outer: f64 },
    /// Density proportional to |x|^{-exponent} on |x| > inner.
    RadialPower { exponent: f64, inner: f64 },
}

#[derive(Debug, Clone)]
enum MeasureKind {
    Atomic(Vec<Atom>),
    Density(DensityKind),
}

/// A boundary measure specification, validated against its domain.
#[derive(Debug, Clone)]
pub struct BoundaryMeasureSpec {
    kind: MeasureKind,
    domain: DomainSpec,
}

/// Result of a tail-refined quadrature.
#[derive(Debug, Clone, Copy)]
pub enum Quadrature {
    Converged(f64),
    Divergent { tail: f64, doublings: usize },
}

impl Quadrature {
    pub fn value(self) -> Result<f64, MeasureError> {
        match self {
            Quadrature::Converged(v) => Ok(v),
            Quadrature::Divergent { tail, doublings } => {
                Err(MeasureError::DivergentQuadrature { tail, doublings })
            }
        }
    }
}

impl BoundaryMeasureSpec {
    pub fn atomic(atoms: Vec<Atom>, domain: DomainSpec) -> Result<Self, MeasureError> {
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if atoms.is_empty() || atoms.iter().any(|a| a.weight < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(MeasureError::MassNotOne(total));
        }
        for a in &atoms {
            if !domain.contains(a.location()) {
                return Err(MeasureError::AtomOutsideDomain { x: a.x, y: a.y });
            }
        }
        Ok(BoundaryMeasureSpec { kind: MeasureKind::Atomic(atoms), domain })
    }

    pub fn density(kind: DensityKind, domain: DomainSpec) -> Result<Self, MeasureError> {
        let dim = domain.dim();
        let inner_r = domain.inner_radius();
        match kind {
            DensityKind::UniformInterval { lo, hi } => {
                if dim != 1 {
                    return Err(MeasureError::InvalidDensity(
                        "uniform-interval requires a one-dimensional domain".into(),
                    ));
                }
                if !(lo < hi) {
                    return Err(MeasureError::InvalidDensity(format!(
                        "need lo < hi, got ({lo}, {hi})"
                    )));
                }
                let inside = match domain {
                    DomainSpec::HalfLineExterior { c } => lo >= c,
                    DomainSpec::BallExterior { r0, .. } => lo >= r0 || hi <= -r0,
                };
                if !inside {
                    return Err(MeasureError::SupportOutsideDomain(format!(
                        "interval ({lo}, {hi}) leaves the domain"
                    )));
                }
            }
            DensityKind::UniformAnnulus { inner, outer } => {
                if dim != 2 {
                    return Err(MeasureError::InvalidDensity(
                        "uniform-annulus requires a two-dimensional domain".into(),
                    ));
                }
                if !(inner < outer) || inner < inner_r {
                    return Err(MeasureError::SupportOutsideDomain(format!(
                        "annulus ({inner}, {outer}) leaves the domain (inner radius {inner_r})"
                    )));
                }
            }
            DensityKind::RadialPower { exponent, inner } => {
                if inner < inner_r {
                    return Err(MeasureError::SupportOutsideDomain(format!(
                        "radial-power support |x| > {inner} leaves the domain"
                    )));
                }
                let min_exp = if dim == 1 { 1.0 } else { 2.0 };
                if exponent <= min_exp {
                    return Err(MeasureError::InvalidDensity(format!(
                        "radial-power exponent must exceed {min_exp} in dimension {dim} to be normalizable"
                    )));
                }
            }
        }
        Ok(BoundaryMeasureSpec { kind: MeasureKind::Density(kind), domain })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.kind, MeasureKind::Atomic(_))
    }

    pub fn atoms(&self) -> Option<&[Atom]> {
        match &self.kind {
            MeasureKind::Atomic(a) => Some(a),
            MeasureKind::Density(_) => None,
        }
    }

    pub fn density_kind(&self) -> Option<DensityKind> {
        match &self.kind {
            MeasureKind::Atomic(_) => None,
            MeasureKind::Density(k) => Some(*k),
        }
    }

    /// Radius capturing essentially all of the measure; the exhaustion start
    /// index is chosen so that this radius fits inside B_n.
    pub fn core_radius(&self) -> f64 {
        match &self.kind {
            MeasureKind::Atomic(atoms) => {
                atoms.iter().map(|a| a.location().norm()).fold(0.0, f64::max)
            }
            MeasureKind::Density(k) => match *k {
                DensityKind::UniformInterval { lo, hi } => hi.abs().max(lo.abs()),
                DensityKind::UniformAnnulus { outer, .. } => outer,
                DensityKind::RadialPower { .. } => self.radial_quantile(0.999),
            },
        }
    }

    /// μ(z, Ω ∩ B_r(0)), exact per family (z-independent for shipped specs).
    pub fn mass_in_ball(&self, r: f64) -> f64 {
        match &self.kind {
            MeasureKind::Atomic(atoms) => atoms
                .iter()
                .filter(|a| a.location().norm() < r)
                .map(|a| a.weight)
                .sum(),
            MeasureKind::Density(k) => match *k {
                DensityKind::UniformInterval { lo, hi } => {
                    // overlap of (lo, hi) with (-r, r)
                    let l = lo.max(-r);
                    let u = hi.min(r);
                    ((u - l).max(0.0)) / (hi - lo)
                }
                DensityKind::UniformAnnulus { inner, outer } => {
                    let u = r.clamp(inner, outer);
                    (u * u - inner * inner) / (outer * outer - inner * inner)
                }
                DensityKind::RadialPower { exponent, inner } => {
                    if r <= inner {
                        0.0
                    } else {
                        let p = if self.domain.dim() == 1 { 1.0 - exponent } else { 2.0 - exponent };
                        1.0 - (r / inner).powf(p)
                    }
                }
            },
        }
    }

    pub fn mass_in_shell(&self, r_lo: f64, r_hi: f64) -> f64 {
        (self.mass_in_ball(r_hi) - self.mass_in_ball(r_lo)).max(0.0)
    }

    /// Inverse of the radial mass distribution (densities only).
    pub fn radial_quantile(&self, q: f64) -> f64 {
        match &self.kind {
            MeasureKind::Atomic(_) => panic!("radial_quantile is only defined for densities"),
            MeasureKind::Density(k) => match *k {
                DensityKind::UniformInterval { lo, hi } => lo + q * (hi - lo),
                DensityKind::UniformAnnulus { inner, outer } => {
                    (inner * inner + q * (outer * outer - inner * inner)).sqrt()
                }
                DensityKind::RadialPower { exponent, inner } => {
                    let p = if self.domain.dim() == 1 { 1.0 - exponent } else { 2.0 - exponent };
                    inner * (1.0 - q).powf(1.0 / p)
                }
            },
        }
    }

    /// Point density value (0 outside the support and outside Ω).
    pub fn density_at(&self, p: Point) -> f64 {
        if !self.domain.contains(p) {
            return 0.0;
        }
        let r = p.norm();
        match &self.kind {
            MeasureKind::Atomic(_) => 0.0,
            MeasureKind::Density(k) => match *k {
                DensityKind::UniformInterval { lo, hi } => {
                    if p.x > lo && p.x < hi {
                        1.0 / (hi - lo)
                    } else {
                        0.0
                    }
                }
                DensityKind::UniformAnnulus { inner, outer } => {
                    if r > inner && r < outer {
                        1.0 / (PI * (outer * outer - inner * inner))
                    } else {
                        0.0
                    }
                }
                DensityKind::RadialPower { exponent, inner } => {
                    if r > inner {
                        let norm = match self.domain.dim() {
                            1 => {
                                let sides = match self.domain {
                                    DomainSpec::HalfLineExterior { .. } => 1.0,
                                    _ => 2.0,
                                };
                                (exponent - 1.0) * inner.powf(exponent - 1.0) / sides
                            }
                            _ => (exponent - 2.0) * inner.powf(exponent - 2.0) / (2.0 * PI),
                        };
                        norm * r.powf(-exponent)
                    } else {
                        0.0
                    }
                }
            },
        }
    }

    /// ⟨f, μ(z)⟩ by exact atom sums or tail-refined radial quadrature; reports
    /// divergence instead of a value when the integral fails to stabilize.
    pub fn integrate(&self, _z: Point, f: &dyn Fn(Point) -> f64) -> Quadrature {
        match &self.kind {
            MeasureKind::Atomic(atoms) => {
                Quadrature::Converged(atoms.iter().map(|a| a.weight * f(a.location())).sum())
            }
            MeasureKind::Density(k) => {
                let dim = self.domain.dim();
                let (support_lo, support_hi) = match *k {
                    DensityKind::UniformInterval { lo, hi } => {
                        (lo.abs().min(hi.abs()), hi.abs().max(lo.abs()))
                    }
                    DensityKind::UniformAnnulus { inner, outer } => (inner, outer),
                    DensityKind::RadialPower { inner, .. } => (inner, f64::INFINITY),
                };
                let eval_ring = |r: f64| -> f64 {
                    // f * density integrated over the sphere of radius r; the
                    // density vanishes outside Ω, so both signs can be summed
                    if dim == 1 {
                        f(Point::new(r, 0.0)) * self.density_at(Point::new(r, 0.0))
                            + f(Point::new(-r, 0.0)) * self.density_at(Point::new(-r, 0.0))
                    } else {
                        let m = 64;
                        let mut s = 0.0;
                        for j in 0..m {
                            let th = 2.0 * PI * (j as f64 + 0.5) / (m as f64);
                            let p = Point::new(r * th.cos(), r * th.sin());
                            s += f(p) * self.density_at(p);
                        }
                        s * 2.0 * PI * r / (m as f64)
                    }
                };
                // panelized midpoint over dyadic radial blocks
                let mut total = 0.0;
                let mut prev_block = f64::INFINITY;
                let mut lo = support_lo;
                let mut width = if support_hi.is_finite() {
                    support_hi - support_lo
                } else {
                    support_lo.max(1.0)
                };
                for doublings in 0..48 {
                    let hi = (lo + width).min(support_hi);
                    let panels = 1024;
                    let dw = (hi - lo) / panels as f64;
                    let mut block = 0.0;
                    for i in 0..panels {
                        let r = lo + (i as f64 + 0.5) * dw;
                        block += eval_ring(r) * dw;
                    }
                    total += block;
                    if hi >= support_hi {
                        return Quadrature::Converged(total);
                    }
                    if block.abs() <= 1e-10 * total.abs().max(1.0) {
                        return Quadrature::Converged(total);
                    }
                    if doublings > 6 && block.abs() >= 0.9 * prev_block.abs() {
                        return Quadrature::Divergent { tail: block, doublings };
                    }
                    prev_block = block;
                    lo = hi;
                    width *= 2.0;
                }
                Quadrature::Divergent { tail: prev_block, doublings: 48 }
            }
        }
    }

    /// Second moment ∫ |x|^2 dμ(z); `Err` when it diverges.
    pub fn second_moment(&self) -> Result<f64, MeasureError> {
        self.integrate(Point::new(0.0, 0.0), &|p| p.norm() * p.norm()).value()
    }

    /// Draws one point from μ(z). Atoms by inverse CDF over the weights;
    /// bounded densities by rejection against a constant envelope on their
    /// support; the unbounded radial-power tail by its exact radial inverse
    /// CDF (no finite envelope covers it).
    pub fn sample<R: Rng + ?Sized>(&self, _z: Point, rng: &mut R) -> Point {
        match &self.kind {
            MeasureKind::Atomic(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.weight;
                    if u <= acc {
                        return a.location();
                    }
                }
                atoms.last().expect("nonempty atom list").location()
            }
            MeasureKind::Density(k) => match *k {
                DensityKind::UniformInterval { lo, hi } => {
                    // constant density: the envelope is the density itself and
                    // every proposal is accepted
                    Point::new(rng.random_range(lo..hi), 0.0)
                }
                DensityKind::UniformAnnulus { inner, outer } => loop {
                    // envelope: uniform proposal in radius and angle, accepted
                    // with ratio r/outer
                    let r: f64 = rng.random_range(inner..outer);
                    let accept: f64 = rng.random();
                    if accept <= r / outer {
                        let th: f64 = rng.random_range(0.0..2.0 * PI);
                        return Point::new(r * th.cos(), r * th.sin());
                    }
                },
                DensityKind::RadialPower { .. } => {
                    let q: f64 = rng.random();
                    let r = self.radial_quantile(q);
                    match self.domain.dim() {
                        1 => {
                            let sign = match self.domain {
                                DomainSpec::HalfLineExterior { .. } => 1.0,
                                _ => {
                                    if rng.random::<bool>() {
                                        1.0
                                    } else {
                                        -1.0
                                    }
                                }
                            };
                            Point::new(sign * r, 0.0)
                        }
                        _ => {
                            let th: f64 = rng.random_range(0.0..2.0 * PI);
                            Point::new(r * th.cos(), r * th.sin())
                        }
                    }
                }
            },
        }
    }

    /// Quadrature weight row of μ(z) on the grid nodes. Atoms spread over the
    /// vertices of their containing cell (multilinear, mass preserving);
    /// densities by support-clipped midpoint cells in 1D and exact-mass radial
    /// shells with equal angular split in 2D, so the row total never exceeds
    /// the true mass. Mass outside the grid's coverage is recorded, not
    /// redistributed.
    pub fn discretize(&self, z: Point, grid: &Grid) -> WeightRow {
        let _ = z; // shipped families are constant in z
        let mut weights = vec![0.0f64; grid.node_count()];
        let mut dropped = 0.0;
        match &self.kind {
            MeasureKind::Atomic(atoms) => {
                for a in atoms {
                    if !spread_atom(grid, a.location(), a.weight, &mut weights) {
                        dropped += a.weight;
                    }
                }
            }
            MeasureKind::Density(_) => {
                if grid.dim() == 1 {
                    self.discretize_density_1d(grid, &mut weights, &mut dropped);
                } else {
                    self.discretize_density_radial(grid, &mut weights, &mut dropped);
                }
            }
        }
        let entries: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, w)| (i, *w))
            .collect();
        WeightRow { entries, dropped }
    }

    fn discretize_density_1d(&self, grid: &Grid, weights: &mut [f64], dropped: &mut f64) {
        let (support_lo, support_hi) = match self.density_kind().unwrap() {
            DensityKind::UniformInterval { lo, hi } => (lo, hi),
            DensityKind::RadialPower { inner, .. } => (inner, f64::INFINITY),
            DensityKind::UniformAnnulus { .. } => unreachable!("validated against dim"),
        };
        for component in components_1d(grid) {
            for w in component.windows(2) {
                let (i0, x0) = w[0];
                let (i1, x1) = w[1];
                // clip the cell against the support (mirrored for x < 0)
                let (lo, hi) = if x1 <= 0.0 {
                    (x0.max(-support_hi), x1.min(-support_lo))
                } else {
                    (x0.max(support_lo), x1.min(support_hi))
                };
                if !(hi > lo) {
                    continue;
                }
                let mid = 0.5 * (lo + hi);
                let mass = self.density_at(Point::new(mid, 0.0)) * (hi - lo);
                weights[i0] += 0.5 * mass;
                weights[i1] += 0.5 * mass;
            }
        }
        let placed: f64 = weights.iter().sum();
        *dropped += (1.0 - placed).max(0.0);
    }

    fn discretize_density_radial(&self, grid: &Grid, weights: &mut [f64], dropped: &mut f64) {
        let h = grid.h;
        let inner = grid.domain.inner_radius();
        let outer = grid.truncation_radius();
        // bucket nodes by radial shell [inner + k h, inner + (k+1) h); shells
        // depend only on (domain, h) so shared shells carry identical raw
        // weights across truncations
        let shell_of = |r: f64| -> usize { ((r - inner) / h).floor().max(0.0) as usize };
        let n_shells = shell_of(outer) + 1;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_shells];
        for (i, p) in grid.nodes.iter().enumerate() {
            let k = shell_of(p.norm()).min(n_shells - 1);
            members[k].push(i);
        }
        let mut carry = 0.0;
        for k in 0..n_shells {
            let r_lo = inner + k as f64 * h;
            let r_hi = (inner + (k + 1) as f64 * h).min(outer);
            if r_lo >= outer {
                break;
            }
            let mass = self.mass_in_shell(r_lo, r_hi) + carry;
            carry = 0.0;
            if mass == 0.0 {
                continue;
            }
            if members[k].is_empty() {
                carry = mass;
                continue;
            }
            let share = mass / members[k].len() as f64;
            for &i in &members[k] {
                weights[i] += share;
            }
        }
        *dropped += carry + (1.0 - self.mass_in_ball(outer)).max(0.0);
    }

    /// Builds the sub-probability truncation on Ω_n: each physical-boundary
    /// row is the quadrature row damped by the cutoff at the boundary point
    /// and at every node; artificial-boundary rows are identically zero.
    pub fn truncate(&self, n: usize, grid: &Grid) -> Result<TruncatedMeasure, MeasureError> {
        if n != grid.n {
            return Err(MeasureError::NotConsecutive);
        }
        let physical = grid.physical_indices();
        let mut rows = Vec::with_capacity(physical.len());
        let mut masses = Vec::with_capacity(physical.len());
        let mut deficits = Vec::with_capacity(physical.len());
        for &z_idx in &physical {
            let z = grid.nodes[z_idx];
            let raw = self.discretize(z, grid);
            let damp_z = cutoff(n, z);
            let mut entries: Vec<(usize, f64)> = raw
                .entries
                .iter()
                .map(|&(i, w)| (i, damp_z * w * cutoff(n, grid.nodes[i])))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            entries.sort_by_key(|e| e.0);
            let mass: f64 = entries.iter().map(|e| e.1).sum();
            debug_assert!(mass <= 1.0 + 1e-9, "row mass {mass} exceeds 1");
            rows.push(entries);
            masses.push(mass);
            deficits.push(raw.dropped);
        }
        Ok(TruncatedMeasure {
            grid_fingerprint: grid.fingerprint(),
            n,
            h: grid.h,
            physical,
            rows,
            masses,
            deficits,
        })
    }

    /// Checks μ(z, Ω_N) >= eps over boundary samples z, and searches the
    /// smallest N achieving mass 1/2 (the concentration premise behind
    /// uniqueness; automatic for compact boundaries).
    pub fn concentration_check(&self, n_probe: usize, eps: f64) -> ConcentrationReport {
        let samples = self.domain.boundary_samples(256);
        let mut min_mass = f64::INFINITY;
        let mut witness = samples[0];
        for &z in &samples {
            let m = self.mass_in_ball((n_probe + 1) as f64); // z-independent families
            if m < min_mass {
                min_mass = m;
                witness = z;
            }
        }
        let mut smallest_n_half = None;
        for n in 1..=64usize {
            if self.mass_in_ball((n + 1) as f64) >= 0.5 {
                smallest_n_half = Some(n);
                break;
            }
        }
        ConcentrationReport { pass: min_mass >= eps, min_mass, witness, smallest_n_half }
    }

    /// Samples ⟨f, μ(z)⟩ along refinements of the boundary sampling and
    /// reports the max adjacent gap per level, for a fixed test dictionary.
    pub fn continuity_diagnostic(&self, levels: usize) -> Vec<f64> {
        let dict: Vec<Box<dyn Fn(Point) -> f64>> = vec![
            Box::new(|_| 1.0),
            Box::new(|p: Point| (-p.norm()).exp()),
            Box::new(|p: Point| 1.0 / (1.0 + p.norm() * p.norm())),
            Box::new(|p: Point| p.x / (1.0 + p.norm())),
        ];
        (0..levels)
            .map(|lvl| {
                let zs = self.domain.boundary_samples(16 << lvl);
                let mut worst: f64 = 0.0;
                for f in &dict {
                    let vals: Vec<f64> = zs
                        .iter()
                        .map(|&z| match self.integrate(z, f) {
                            Quadrature::Converged(v) => v,
                            Quadrature::Divergent { .. } => f64::NAN,
                        })
                        .collect();
                    for k in 0..vals.len() {
                        let gap = (vals[k] - vals[(k + 1) % vals.len()]).abs();
                        worst = worst.max(gap);
                    }
                }
                worst
            })
            .collect()
    }
}

/// Spread a unit of mass onto the vertices of the containing lattice cell.
/// Returns false when the point falls outside the grid's coverage.
fn spread_atom(grid: &Grid, p: Point, mass: f64, weights: &mut [f64]) -> bool {
    if grid.dim() == 1 {
        for component in components_1d(grid) {
            let xs: Vec<f64> = component.iter().map(|&(_, x)| x).collect();
            if p.x < xs[0] - 1e-12 || p.x > *xs.last().unwrap() + 1e-12 {
                continue;
            }
            let j = xs.partition_point(|&x| x <= p.x).clamp(1, xs.len() - 1);
            let (i0, x0) = component[j - 1];
            let (i1, x1) = component[j];
            let t = ((p.x - x0) / (x1 - x0)).clamp(0.0, 1.0);
            weights[i0] += mass * (1.0 - t);
            weights[i1] += mass * t;
            return true;
        }
        false
    } else {
        let h = grid.h;
        let ci = (p.x / h).floor() as i64;
        let cj = (p.y / h).floor() as i64;
        let tx = (p.x / h - ci as f64).clamp(0.0, 1.0);
        let ty = (p.y / h - cj as f64).clamp(0.0, 1.0);
        let corners = [
            (ci, cj, (1.0 - tx) * (1.0 - ty)),
            (ci + 1, cj, tx * (1.0 - ty)),
            (ci, cj + 1, (1.0 - tx) * ty),
            (ci + 1, cj + 1, tx * ty),
        ];
        let mut found = 0.0;
        let mut hits: Vec<(usize, f64)> = Vec::with_capacity(4);
        for (i, j, w) in corners {
            if let Some(idx) = grid.lattice_node(i, j) {
                found += w;
                hits.push((idx, w));
            }
        }
        if found <= 0.0 {
            return false;
        }
        // renormalize over the existing corners: mass preserving near cut cells
        for (idx, w) in hits {
            weights[idx] += mass * w / found;
        }
        true
    }
}

/// Sorted (index, x) lists per connected component of a 1-d grid.
fn components_1d(grid: &Grid) -> Vec<Vec<(usize, f64)>> {
    let mut neg: Vec<(usize, f64)> = Vec::new();
    let mut pos: Vec<(usize, f64)> = Vec::new();
    for (i, p) in grid.nodes.iter().enumerate() {
        if p.x < 0.0 {
            neg.push((i, p.x));
        } else {
            pos.push((i, p.x));
        }
    }
    let mut out = Vec::new();
    for mut side in [neg, pos] {
        if !side.is_empty() {
            side.sort_by(|a, b| a.1.total_cmp(&b.1));
            out.push(side);
        }
    }
    out
}

/// Raw (un-truncated) quadrature row for one boundary point.
#[derive(Debug, Clone)]
pub struct WeightRow {
    pub entries: Vec<(usize, f64)>,
    /// mass that fell outside the grid's coverage
    pub dropped: f64,
}

impl WeightRow {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn get(&self, node: usize) -> f64 {
        self.entries.iter().find(|e| e.0 == node).map(|e| e.1).unwrap_or(0.0)
    }
}

/// The cutoff-damped measure rows on a fixed truncation.
#[derive(Debug, Clone)]
pub struct TruncatedMeasure {
    pub grid_fingerprint: u64,
    pub n: usize,
    pub h: f64,
    /// node indices of the physical-boundary rows, aligned with `rows`
    pub physical: Vec<usize>,
    pub rows: Vec<Vec<(usize, f64)>>,
    /// recorded mass m(z) = Σ w per row (<= 1; the truncation is sub-probability)
    pub masses: Vec<f64>,
    /// mass lost outside the grid's coverage per row, recorded not renormalized
    pub deficits: Vec<f64>,
}

impl TruncatedMeasure {
    pub fn matches(&self, grid: &Grid) -> Result<(), MeasureError> {
        let fp = grid.fingerprint();
        if fp != self.grid_fingerprint {
            return Err(MeasureError::GridMismatch(self.grid_fingerprint, fp));
        }
        Ok(())
    }

    pub fn row_for_node(&self, z_idx: usize) -> Option<&[(usize, f64)]> {
        self.physical.iter().position(|&i| i == z_idx).map(|k| self.rows[k].as_slice())
    }

    /// Sparse CSV: z-index, node-index, weight.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("z,node,weight\n");
        for (k, &z) in self.physical.iter().enumerate() {
            for &(i, w) in &self.rows[k] {
                s.push_str(&format!("{},{},{}\n", z, i, w));
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ConcentrationReport {
    pub pass: bool,
    pub min_mass: f64,
    pub witness: Point,
    pub smallest_n_half: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct MonotoneReport {
    pub pass: bool,
    /// most negative of (w_{n+1} - w_n) over shared entries
    pub worst_violation: f64,
}

/// Entrywise comparison of consecutive truncations on nested grids.
pub fn check_monotone(
    coarse: &TruncatedMeasure,
    coarse_grid: &Grid,
    fine: &TruncatedMeasure,
    fine_grid: &Grid,
) -> Result<MonotoneReport, MeasureError> {
    coarse.matches(coarse_grid)?;
    fine.matches(fine_grid)?;
    if fine.n != coarse.n + 1
        || coarse.h.to_bits() != fine.h.to_bits()
        || coarse_grid.domain != fine_grid.domain
    {
        return Err(MeasureError::NotConsecutive);
    }
    let mut worst: f64 = 0.0;
    for (k, &z_idx) in coarse.physical.iter().enumerate() {
        let z = coarse_grid.nodes[z_idx];
        let z_fine = fine_grid.find_node(z).ok_or(MeasureError::NotConsecutive)?;
        let fine_row = fine.row_for_node(z_fine).ok_or(MeasureError::NotConsecutive)?;
        for &(i, w) in &coarse.rows[k] {
            let p = coarse_grid.nodes[i];
            let j = fine_grid.find_node(p).ok_or(MeasureError::NotConsecutive)?;
            let w_fine = fine_row.iter().find(|e| e.0 == j).map(|e| e.1).unwrap_or(0.0);
            worst = worst.min(w_fine - w);
        }
    }
    Ok(MonotoneReport { pass: worst >= -1e-12, worst_violation: worst })
}
