//! Exterior domains, their truncations, and finite-difference grids.
//!
//! The domain Ω is exhausted by the bounded sets Ω_n = Ω ∩ B_{n+1}(0). A grid
//! covers the closure of Ω_n with a uniform lattice of spacing `h` aligned to
//! the origin, so grids for successive `n` nest exactly: every node of the
//! grid for `n` is a node of the grid for `n+1`, and a node's classification
//! can only move from artificial-boundary to interior as `n` grows.
//!
//! Node classes:
//! - interior: carries a full finite-difference stencil; arms that would cross
//!   the inner boundary are shortened onto it (Shortley–Weller),
//! - physical-boundary: lies exactly on ∂Ω (snapped lattice points and arm
//!   intersection points); carries the nonlocal boundary row,
//! - artificial-boundary: the outermost lattice layer inside B_{n+1}; carries
//!   the zero-extension row u = 0.

use crate::error::GridError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn coord(self, axis: usize) -> f64 {
        if axis == 0 {
            self.x
        } else {
            self.y
        }
    }
}

/// Built-in exterior domains. Both have compact boundary and are Dirichlet
/// regular, so the truncations Ω ∩ B_{n+1}(0) are admissible for the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainSpec {
    /// Ω = (c, ∞) ⊂ ℝ with c > 0; the boundary is the single point {c}.
    HalfLineExterior { c: f64 },
    /// Ω = ℝ^d \ closed-ball(0, r0) with r0 > 0 and d ∈ {1, 2}.
    BallExterior { r0: f64, dim: usize },
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::HalfLineExterior { .. } => 1,
            DomainSpec::BallExterior { dim, .. } => *dim,
        }
    }

    /// Radius below which the truncation is empty (c or r0).
    pub fn inner_radius(&self) -> f64 {
        match self {
            DomainSpec::HalfLineExterior { c } => *c,
            DomainSpec::BallExterior { r0, .. } => *r0,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        match self {
            DomainSpec::HalfLineExterior { c } => {
                if !c.is_finite() || *c <= 0.0 {
                    return Err(GridError::InvalidDomain(format!(
                        "half-line endpoint must be positive and finite, got {c}"
                    )));
                }
            }
            DomainSpec::BallExterior { r0, dim } => {
                if !r0.is_finite() || *r0 <= 0.0 {
                    return Err(GridError::InvalidDomain(format!(
                        "ball radius must be positive and finite, got {r0}"
                    )));
                }
                if *dim != 1 && *dim != 2 {
                    return Err(GridError::InvalidDomain(format!(
                        "dimension must be 1 or 2, got {dim}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Strict interior test.
    pub fn contains(&self, p: Point) -> bool {
        match self {
            DomainSpec::HalfLineExterior { c } => p.x > *c,
            DomainSpec::BallExterior { r0, .. } => p.norm() > *r0,
        }
    }

    /// Distance from a point of Ω to ∂Ω.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        match self {
            DomainSpec::HalfLineExterior { c } => p.x - *c,
            DomainSpec::BallExterior { r0, .. } => p.norm() - *r0,
        }
    }

    /// Equally spread sample points on ∂Ω, used wherever a check quantifies
    /// over boundary points z.
    pub fn boundary_samples(&self, count: usize) -> Vec<Point> {
        match self {
            DomainSpec::HalfLineExterior { c } => vec![Point::new(*c, 0.0)],
            DomainSpec::BallExterior { r0, dim: 1 } => {
                vec![Point::new(-*r0, 0.0), Point::new(*r0, 0.0)]
            }
            DomainSpec::BallExterior { r0, .. } => {
                let count = count.max(4);
                (0..count)
                    .map(|k| {
                        let theta = 2.0 * std::f64::consts::PI * (k as f64) / (count as f64);
                        Point::new(r0 * theta.cos(), r0 * theta.sin())
                    })
                    .collect()
            }
        }
    }

    /// Intersection of the segment [p, q] with ∂Ω, for p inside and q outside
    /// the domain; lands exactly on the boundary.
    pub fn boundary_crossing(&self, p: Point, q: Point) -> Point {
        match self {
            DomainSpec::HalfLineExterior { c } => Point::new(*c, 0.0),
            DomainSpec::BallExterior { r0, .. } => {
                // solve |p + s (q - p)| = r0 for the smallest s in (0, 1]
                let d = Point::new(q.x - p.x, q.y - p.y);
                let a = d.dot(d);
                let b = 2.0 * p.dot(d);
                let c0 = p.dot(p) - r0 * r0;
                let disc = (b * b - 4.0 * a * c0).max(0.0);
                let sq = disc.sqrt();
                let s1 = (-b - sq) / (2.0 * a);
                let s2 = (-b + sq) / (2.0 * a);
                let s = if s1 > 1e-14 { s1 } else { s2 };
                let raw = Point::new(p.x + s * d.x, p.y + s * d.y);
                let r = raw.norm();
                Point::new(raw.x * (*r0 / r), raw.y * (*r0 / r))
            }
        }
    }

    /// Unit directions used for radial sampling of coefficient trends.
    pub fn ray_directions(&self) -> Vec<Point> {
        match self {
            DomainSpec::HalfLineExterior { .. } => vec![Point::new(1.0, 0.0)],
            DomainSpec::BallExterior { dim: 1, .. } => {
                vec![Point::new(1.0, 0.0), Point::new(-1.0, 0.0)]
            }
            DomainSpec::BallExterior { .. } => (0..16)
                .map(|k| {
                    let theta = 2.0 * std::f64::consts::PI * (k as f64) / 16.0;
                    Point::new(theta.cos(), theta.sin())
                })
                .collect(),
        }
    }
}

/// Continuous cutoff used to damp the boundary measure near the truncation
/// sphere: 1 on B_n(0), 0 outside B_{n+1}(0), linear radial ramp in between.
pub fn cutoff(n: usize, p: Point) -> f64 {
    ((n as f64 + 1.0) - p.norm()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    PhysicalBoundary,
    ArtificialBoundary,
}

impl NodeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::PhysicalBoundary => "physical-boundary",
            NodeClass::ArtificialBoundary => "artificial-boundary",
        }
    }
}

/// One stencil arm: the neighboring node along an axis and its distance.
#[derive(Debug, Clone, Copy)]
pub struct Arm {
    pub neighbor: usize,
    pub dist: f64,
}

/// Per-axis arms of an interior node; `arms[axis][0]` is the minus direction.
#[derive(Debug, Clone, Default)]
pub struct Stencil {
    pub arms: [[Option<Arm>; 2]; 2],
}

/// Compact ball on which sup-norms are measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub radius: f64,
}

impl Window {
    pub fn new(radius: f64) -> Self {
        Window { radius }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.norm() <= self.radius + 1e-9
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub domain: DomainSpec,
    pub h: f64,
    pub n: usize,
    pub window: Window,
    pub nodes: Vec<Point>,
    pub class: Vec<NodeClass>,
    stencils: Vec<Option<Stencil>>,
    /// Lattice key (i, j) -> node, for aligned nodes (including snapped ones).
    lattice: HashMap<(i64, i64), usize>,
    /// Quantized coordinates -> node, for every node.
    by_coord: HashMap<(i64, i64), usize>,
}

fn qkey(p: Point, h: f64) -> (i64, i64) {
    let q = h * 1e-6;
    ((p.x / q).round() as i64, (p.y / q).round() as i64)
}

impl Grid {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn truncation_radius(&self) -> f64 {
        (self.n + 1) as f64
    }

    pub fn stencil(&self, i: usize) -> Option<&Stencil> {
        self.stencils[i].as_ref()
    }

    pub fn indices_of(&self, class: NodeClass) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.class[i] == class).collect()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        self.indices_of(NodeClass::Interior)
    }

    pub fn physical_indices(&self) -> Vec<usize> {
        self.indices_of(NodeClass::PhysicalBoundary)
    }

    pub fn artificial_indices(&self) -> Vec<usize> {
        self.indices_of(NodeClass::ArtificialBoundary)
    }

    /// Exact lookup by coordinates (quantized to a fraction of the spacing).
    pub fn find_node(&self, p: Point) -> Option<usize> {
        self.by_coord.get(&qkey(p, self.h)).copied()
    }

    pub fn lattice_node(&self, i: i64, j: i64) -> Option<usize> {
        self.lattice.get(&(i, j)).copied()
    }

    /// Nearest node of a given class; panics only on an empty grid.
    pub fn nearest_node_of(&self, p: Point, class: NodeClass) -> usize {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (i, q) in self.nodes.iter().enumerate() {
            if self.class[i] == class {
                let d = p.dist(*q);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
        }
        best
    }

    pub fn window_indices(&self, window: &Window) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| window.contains(self.nodes[i])).collect()
    }

    /// Pairs (index in self, index in other) for nodes present in both grids.
    pub fn shared_with(&self, other: &Grid) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, p) in self.nodes.iter().enumerate() {
            if let Some(j) = other.find_node(*p) {
                out.push((i, j));
            }
        }
        out
    }

    /// Structural identity of the grid, used to guard cross-grid operations.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x100000001b3);
        };
        eat(self.n as u64);
        eat(self.h.to_bits());
        eat(self.nodes.len() as u64);
        for (p, c) in self.nodes.iter().zip(&self.class) {
            eat(p.x.to_bits());
            eat(p.y.to_bits());
            eat(*c as u64);
        }
        h
    }

    /// CSV dump: node index, coordinates, class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,x,y,class\n");
        for (i, (p, c)) in self.nodes.iter().zip(&self.class).enumerate() {
            s.push_str(&format!("{},{},{},{}\n", i, p.x, p.y, c.as_str()));
        }
        s
    }
}

/// Builds the grid covering Ω_n = Ω ∩ B_{n+1}(0).
pub fn build_exhaustion(domain: &DomainSpec, n: usize, h: f64) -> Result<Grid, GridError> {
    domain.validate()?;
    if !(h.is_finite() && h > 0.0) {
        return Err(GridError::NonPositiveSpacing(h));
    }
    let radius = (n + 1) as f64;
    let inner = domain.inner_radius();
    if radius <= inner + 1e-12 {
        return Err(GridError::EmptyTruncation { radius, inner });
    }
    if n < 1 {
        return Err(GridError::TruncationIndex(n));
    }

    let dim = domain.dim();
    let atol = 1e-9 * radius.max(1.0);
    // lattice points closer than this to the inner boundary are snapped onto
    // it; any remaining interior node then keeps stencil arms of length
    // >= snap_dist, since the whole boundary is at least that far away
    let snap_dist = (0.05 * h).max(1e-9 * inner.max(1.0));

    let mut nodes: Vec<Point> = Vec::new();
    let mut class: Vec<NodeClass> = Vec::new();
    let mut lattice: HashMap<(i64, i64), usize> = HashMap::new();
    let mut by_coord: HashMap<(i64, i64), usize> = HashMap::new();

    let push = |p: Point,
                    c: NodeClass,
                    key: Option<(i64, i64)>,
                    nodes: &mut Vec<Point>,
                    class: &mut Vec<NodeClass>,
                    lattice: &mut HashMap<(i64, i64), usize>,
                    by_coord: &mut HashMap<(i64, i64), usize>|
     -> usize {
        if let Some(&idx) = by_coord.get(&qkey(p, h)) {
            return idx;
        }
        let idx = nodes.len();
        nodes.push(p);
        class.push(c);
        if let Some(k) = key {
            lattice.insert(k, idx);
        }
        by_coord.insert(qkey(p, h), idx);
        idx
    };

    // Pass 1: aligned lattice points in the closure of Ω_n.
    let m = (radius / h).ceil() as i64 + 1;
    let jrange: Vec<i64> = if dim == 2 { (-m..=m).collect() } else { vec![0] };
    for i in -m..=m {
        for &j in &jrange {
            let p = Point::new(i as f64 * h, j as f64 * h);
            let r = p.norm();
            if r > radius + atol {
                continue;
            }
            // membership relative to the inner boundary
            let bd = domain.boundary_distance(p);
            if bd < -snap_dist {
                continue; // outside the closure of Ω
            }
            let on_boundary = bd.abs() <= snap_dist;
            let snapped = match domain {
                DomainSpec::HalfLineExterior { c } => Point::new(*c, 0.0),
                DomainSpec::BallExterior { r0, .. } => {
                    if on_boundary && r > 0.0 {
                        Point::new(p.x * (*r0 / r), p.y * (*r0 / r))
                    } else {
                        p
                    }
                }
            };
            if on_boundary {
                push(
                    snapped,
                    NodeClass::PhysicalBoundary,
                    Some((i, j)),
                    &mut nodes,
                    &mut class,
                    &mut lattice,
                    &mut by_coord,
                );
                continue;
            }
            // artificial if any axis neighbor exits the truncation ball
            let mut artificial = false;
            for axis in 0..dim {
                for sgn in [-1.0, 1.0] {
                    let q = if axis == 0 {
                        Point::new(p.x + sgn * h, p.y)
                    } else {
                        Point::new(p.x, p.y + sgn * h)
                    };
                    if q.norm() > radius + atol {
                        artificial = true;
                    }
                }
            }
            let c = if artificial { NodeClass::ArtificialBoundary } else { NodeClass::Interior };
            push(p, c, Some((i, j)), &mut nodes, &mut class, &mut lattice, &mut by_coord);
        }
    }

    // Pass 2: interior stencils; arms crossing ∂Ω are shortened onto it and
    // may create physical-boundary nodes at the intersection points.
    let interior: Vec<usize> = (0..nodes.len()).filter(|&i| class[i] == NodeClass::Interior).collect();
    let mut stencil_map: HashMap<usize, Stencil> = HashMap::new();
    for &idx in &interior {
        let p = nodes[idx];
        let (li, lj) = (
            (p.x / h).round() as i64,
            (p.y / h).round() as i64,
        );
        let mut st = Stencil::default();
        for axis in 0..dim {
            for (side, sgn) in [(0usize, -1.0f64), (1usize, 1.0f64)] {
                let (qi, qj) = if axis == 0 { (li + sgn as i64, lj) } else { (li, lj + sgn as i64) };
                let q = Point::new(qi as f64 * h, qj as f64 * h);
                let arm = if domain.boundary_distance(q) >= -snap_dist {
                    // stays in the closure of Ω; must be a lattice node
                    let nb = *lattice
                        .get(&(qi, qj))
                        .expect("lattice neighbor of an interior node must exist");
                    Arm { neighbor: nb, dist: p.dist(nodes[nb]) }
                } else {
                    // crosses the inner boundary: shorten onto ∂Ω
                    let bp = domain.boundary_crossing(p, q);
                    let nb = push(
                        bp,
                        NodeClass::PhysicalBoundary,
                        None,
                        &mut nodes,
                        &mut class,
                        &mut lattice,
                        &mut by_coord,
                    );
                    Arm { neighbor: nb, dist: p.dist(bp) }
                };
                assert!(arm.dist > 1e-12 * h, "degenerate stencil arm");
                st.arms[axis][side] = Some(arm);
            }
        }
        stencil_map.insert(idx, st);
    }

    // Pass 3: canonical node order (sorted by coordinates) for stable output.
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| {
        nodes[a]
            .x
            .total_cmp(&nodes[b].x)
            .then(nodes[a].y.total_cmp(&nodes[b].y))
    });
    let mut rank = vec![0usize; nodes.len()];
    for (new_idx, &old_idx) in order.iter().enumerate() {
        rank[old_idx] = new_idx;
    }
    let new_nodes: Vec<Point> = order.iter().map(|&i| nodes[i]).collect();
    let new_class: Vec<NodeClass> = order.iter().map(|&i| class[i]).collect();
    let mut new_stencils: Vec<Option<Stencil>> = vec![None; nodes.len()];
    for (old_idx, st) in stencil_map {
        let mut mapped = Stencil::default();
        for axis in 0..2 {
            for side in 0..2 {
                if let Some(a) = st.arms[axis][side] {
                    mapped.arms[axis][side] = Some(Arm { neighbor: rank[a.neighbor], dist: a.dist });
                }
            }
        }
        new_stencils[rank[old_idx]] = Some(mapped);
    }
    let lattice = lattice.into_iter().map(|(k, v)| (k, rank[v])).collect();
    let by_coord = by_coord.into_iter().map(|(k, v)| (k, rank[v])).collect();

    let grid = Grid {
        domain: *domain,
        h,
        n,
        window: Window::new(radius),
        nodes: new_nodes,
        class: new_class,
        stencils: new_stencils,
        lattice,
        by_coord,
    };

    if grid.interior_indices().is_empty() {
        return Err(GridError::NoInteriorNodes { h, n });
    }
    if grid.physical_indices().is_empty() {
        return Err(GridError::NoBoundaryNodes { h, n });
    }
    Ok(grid)
}
