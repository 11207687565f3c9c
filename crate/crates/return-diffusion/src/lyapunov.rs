//! Lyapunov functions and the two hypotheses they certify: unique solvability
//! (hence the Markov property) and existence of an invariant measure.
//!
//! The workhorse is V(x) = |x|^2 with A V = 2 Σ (a_jj + b_j x_j). For the
//! invariant-measure criterion V must additionally dominate its own boundary
//! averages, v_0(z) = ∫ V dμ(z) <= V(z); a plain quadratic usually fails this
//! at a boundary of radius ~ 1, so [`modify_lyapunov`] rebuilds it as
//! φ(|x|^2) with a C² band near the boundary: φ = M+1 at the boundary radius,
//! stays within [0, M+1] across a band the measure barely charges, and equals
//! the identity beyond it. The final inequality chain is verified numerically
//! at sampled boundary points rather than trusted from the construction.

use crate::error::MeasureError;
use crate::grid::{DomainSpec, Point};
use crate::measure::BoundaryMeasureSpec;
use crate::operator::CoefficientField;
use serde::Serialize;

/// C² piecewise function of t = |x|^2: constant M+1 up to `lo`, a quintic
/// Hermite band on [lo, hi] with flat start and identity-matching end, the
/// identity beyond `hi`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhiSpline {
    pub lo: f64,
    pub hi: f64,
    pub m_plus_1: f64,
}

fn hermite5(u: f64) -> (f64, f64, f64, f64, f64, f64, f64, f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    let h0 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
    let h3 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
    let h4 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
    let d0 = -30.0 * u2 + 60.0 * u3 - 30.0 * u4;
    let d3 = 30.0 * u2 - 60.0 * u3 + 30.0 * u4;
    let d4 = -12.0 * u2 + 28.0 * u3 - 15.0 * u4;
    let s0 = -60.0 * u + 180.0 * u2 - 120.0 * u3;
    let s3 = 60.0 * u - 180.0 * u2 + 120.0 * u3;
    let s4 = -24.0 * u + 84.0 * u2 - 60.0 * u3;
    (h0, h3, h4, d0, d3, d4, s0, s3, s4)
}

impl PhiSpline {
    pub fn phi(&self, t: f64) -> f64 {
        if t <= self.lo {
            self.m_plus_1
        } else if t >= self.hi {
            t
        } else {
            let len = self.hi - self.lo;
            let u = (t - self.lo) / len;
            let (h0, h3, h4, ..) = hermite5(u);
            self.m_plus_1 * h0 + self.hi * h3 + len * h4
        }
    }

    pub fn dphi(&self, t: f64) -> f64 {
        if t <= self.lo {
            0.0
        } else if t >= self.hi {
            1.0
        } else {
            let len = self.hi - self.lo;
            let u = (t - self.lo) / len;
            let (_, _, _, d0, d3, d4, ..) = hermite5(u);
            (self.m_plus_1 * d0 + self.hi * d3 + len * d4) / len
        }
    }

    pub fn d2phi(&self, t: f64) -> f64 {
        if t <= self.lo || t >= self.hi {
            0.0
        } else {
            let len = self.hi - self.lo;
            let u = (t - self.lo) / len;
            let (_, _, _, _, _, _, s0, s3, s4) = hermite5(u);
            (self.m_plus_1 * s0 + self.hi * s3 + len * s4) / (len * len)
        }
    }
}

#[derive(Debug, Clone)]
enum LyapunovKind {
    /// V = |x|^2
    Quadratic,
    /// V = const (a negative-control candidate; never grows)
    Constant(f64),
    /// V = φ(|x|^2)
    Modified(PhiSpline),
}

#[derive(Debug, Clone)]
pub struct LyapunovSpec {
    kind: LyapunovKind,
    pub label: String,
}

impl LyapunovSpec {
    pub fn quadratic() -> LyapunovSpec {
        LyapunovSpec { kind: LyapunovKind::Quadratic, label: "|x|^2".into() }
    }

    pub fn constant(c: f64) -> LyapunovSpec {
        LyapunovSpec { kind: LyapunovKind::Constant(c), label: format!("constant {c}") }
    }

    pub fn modified(spline: PhiSpline) -> LyapunovSpec {
        LyapunovSpec { kind: LyapunovKind::Modified(spline), label: "phi(|x|^2)".into() }
    }

    pub fn spline(&self) -> Option<&PhiSpline> {
        match &self.kind {
            LyapunovKind::Modified(s) => Some(s),
            _ => None,
        }
    }

    pub fn v(&self, p: Point) -> f64 {
        let r2 = p.norm() * p.norm();
        match &self.kind {
            LyapunovKind::Quadratic => r2,
            LyapunovKind::Constant(c) => *c,
            LyapunovKind::Modified(s) => s.phi(r2),
        }
    }

    /// A V by the chain rule for radial V = φ(|x|^2):
    /// A V = 4 φ'' x'ax + 2 φ' (tr a + b·x). For the plain quadratic this is
    /// evaluated as 2 * drift_balance so the cross-module identity
    /// A(|x|^2) = 2 Σ (a_jj + b_j x_j) holds exactly, not just to rounding.
    pub fn a_v(&self, coeff: &CoefficientField, p: Point, dim: usize) -> f64 {
        match &self.kind {
            LyapunovKind::Quadratic => 2.0 * coeff.drift_balance(p, dim),
            LyapunovKind::Constant(_) => 0.0,
            LyapunovKind::Modified(s) => {
                let r2 = p.norm() * p.norm();
                let a = coeff.a(p);
                let b = coeff.b(p);
                let mut xax = 0.0;
                let mut tr = 0.0;
                let mut bx = 0.0;
                for i in 0..dim {
                    tr += a[i][i];
                    bx += b[i] * p.coord(i);
                    for j in 0..dim {
                        xax += p.coord(i) * a[i][j] * p.coord(j);
                    }
                }
                4.0 * s.d2phi(r2) * xax + 2.0 * s.dphi(r2) * (tr + bx)
            }
        }
    }
}

fn radial_samples(domain: &DomainSpec, outer: f64, count: usize) -> Vec<Vec<(f64, Point)>> {
    let inner = domain.inner_radius();
    domain
        .ray_directions()
        .into_iter()
        .map(|d| {
            (1..=count)
                .map(|k| {
                    let r = inner + (outer - inner) * (k as f64) / (count as f64);
                    (r, Point::new(r * d.x, r * d.y))
                })
                .collect()
        })
        .collect()
}

/// Trend test for "V grows without bound": along every sampled ray the tail
/// is nondecreasing and the outer value clearly dominates the mid-range one.
fn grows_unbounded(spec: &LyapunovSpec, domain: &DomainSpec, outer: f64) -> bool {
    for ray in radial_samples(domain, outer, 64) {
        let vals: Vec<f64> = ray.iter().map(|&(_, p)| spec.v(p)).collect();
        let half = vals.len() / 2;
        let tail_ok = vals[half..].windows(2).all(|w| w[1] >= w[0] - 1e-12);
        let dominates = vals[vals.len() - 1] >= 1.5 * vals[half].max(0.0) + 0.1;
        if !tail_ok || !dominates {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub pass: bool,
    /// condition (a): V -> infinity
    pub grows: bool,
    /// condition (b): A V bounded on each truncation (finite samples)
    pub av_bounded: bool,
    /// condition (c): smallest radius r with (λ - A)V >= 0 outside B_r
    pub witness_radius: Option<f64>,
    /// witness radius per truncation index, to judge stability in n
    pub per_n_radius: Vec<(usize, f64)>,
    pub stable_in_n: bool,
}

/// Checks the uniqueness Lyapunov hypothesis for λ: V → ∞, A V locally
/// bounded, and (λ - A)V >= 0 outside some ball captured by the truncations.
pub fn verify_uniqueness_lyapunov(
    spec: &LyapunovSpec,
    coeff: &CoefficientField,
    domain: &DomainSpec,
    lambda: f64,
    ns: &[usize],
    h: f64,
) -> UniquenessReport {
    let dim = domain.dim();
    let n_max = ns.iter().copied().max().unwrap_or(4);
    let outer = (n_max + 1) as f64;
    let grows = grows_unbounded(spec, domain, outer);

    let mut av_bounded = true;
    let mut per_n_radius = Vec::new();
    for &n in ns {
        let outer_n = (n + 1) as f64;
        let mut r_witness = domain.inner_radius();
        for ray in radial_samples(domain, outer_n, (outer_n / h).ceil() as usize) {
            for &(r, p) in &ray {
                let av = spec.a_v(coeff, p, dim);
                if !av.is_finite() {
                    av_bounded = false;
                }
                let g = lambda * spec.v(p) - av;
                if g < -1e-9 * (1.0 + spec.v(p).abs()) {
                    r_witness = r_witness.max(r);
                }
            }
        }
        per_n_radius.push((n, r_witness));
    }
    let radii: Vec<f64> = per_n_radius.iter().map(|e| e.1).collect();
    let spread = radii.iter().fold(0.0f64, |a, &r| a.max(r))
        - radii.iter().fold(f64::INFINITY, |a, &r| a.min(r));
    let stable_in_n = spread <= 2.0 * h + 1e-9;
    let witness = *radii.last().unwrap_or(&domain.inner_radius());
    let captured = witness < (n_max + 1) as f64 - h;
    let pass = grows && av_bounded && captured && stable_in_n;
    UniquenessReport {
        pass,
        grows,
        av_bounded,
        witness_radius: if captured { Some(witness) } else { None },
        per_n_radius,
        stable_in_n,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    pub pass: bool,
    /// (i) V >= 0 and V -> infinity
    pub cond_i: bool,
    /// (ii) A V -> -infinity radially
    pub cond_ii: bool,
    /// (iii) v0(z) = ∫ V dμ(z) <= V(z) at sampled z
    pub cond_iii: bool,
    /// worst v0(z) - V(z) over sampled z (positive = violation)
    pub worst_gap: f64,
    pub diagnosis: Option<String>,
}

/// Checks the invariant-measure Lyapunov criterion, boundary condition
/// included: the third condition integrates V against μ(z) at sampled z and
/// detects non-integrability by quadrature divergence.
pub fn verify_invariant_lyapunov(
    spec: &LyapunovSpec,
    coeff: &CoefficientField,
    mspec: &BoundaryMeasureSpec,
    outer: f64,
) -> InvariantReport {
    let domain = mspec.domain();
    let dim = domain.dim();

    let mut nonneg = true;
    let mut av_tail_ok = true;
    for ray in radial_samples(domain, outer, 64) {
        let avs: Vec<f64> = ray.iter().map(|&(_, p)| spec.a_v(coeff, p, dim)).collect();
        if ray.iter().any(|&(_, p)| spec.v(p) < -1e-12) {
            nonneg = false;
        }
        let half = avs.len() / 2;
        let tail_dec = avs[half..].windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let dives = avs[avs.len() - 1] <= (avs[half] - 1.0).min(-1.0);
        if !tail_dec || !dives {
            av_tail_ok = false;
        }
    }
    let cond_i = nonneg && grows_unbounded(spec, domain, outer);
    let cond_ii = av_tail_ok;

    let mut cond_iii = true;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut diagnosis = None;
    for z in domain.boundary_samples(64) {
        match mspec.integrate(z, &|p| spec.v(p)).value() {
            Ok(v0) => {
                let gap = v0 - spec.v(z);
                worst_gap = worst_gap.max(gap);
                if gap > 1e-6 * (1.0 + spec.v(z).abs()) {
                    cond_iii = false;
                }
            }
            Err(e) => {
                cond_iii = false;
                diagnosis = Some(format!("V is not integrable against mu(z): {e}"));
                worst_gap = f64::INFINITY;
                break;
            }
        }
    }
    InvariantReport { pass: cond_i && cond_ii && cond_iii, cond_i, cond_ii, cond_iii, worst_gap, diagnosis }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModifyReport {
    /// M = sup_z ∫ |x|^2 dμ(z)
    pub second_moment: f64,
    pub epsilon: f64,
    /// band of t = |x|^2 carrying the quintic
    pub band: (f64, f64),
    /// worst ∫ Ṽ dμ(z) over sampled z; must stay <= M + 1
    pub worst_integral: f64,
    /// worst (M+1) μ(z, S_eps) + M bound; must stay <= M + 1
    pub worst_bound: f64,
}

/// Builds the modified Lyapunov function Ṽ = φ(|x|^2): finds a band near the
/// boundary that the measure charges with mass at most (1 + 2M)^{-1} (halving
/// search on the band width), rebuilds φ as a C² quintic there, and verifies
/// the inequality chain ∫ Ṽ dμ(z) <= (M+1) μ(z, S_eps) + M <= M+1 = Ṽ(z)
/// numerically at sampled boundary points.
pub fn modify_lyapunov(
    mspec: &BoundaryMeasureSpec,
) -> Result<(LyapunovSpec, ModifyReport), MeasureError> {
    let domain = mspec.domain();
    let inner = domain.inner_radius();
    let m = mspec.second_moment()?;
    let cap = 1.0 / (1.0 + 2.0 * m);

    // halving search for the band width; also keep the band top below M+1 so
    // the descending quintic stays within [0, M+1]
    let mut eps = 0.5;
    let mut found = false;
    for _ in 0..20 {
        let shell_ok = mspec.mass_in_shell(inner, inner + eps) <= cap + 1e-12;
        let top_ok = (inner + eps) * (inner + eps) <= m + 1.0 + 1e-12;
        if shell_ok && top_ok {
            found = true;
            break;
        }
        eps *= 0.5;
    }
    if !found {
        return Err(MeasureError::InvalidDensity(format!(
            "no band width eps found with mu(z, S_eps) <= {cap:.3e}"
        )));
    }

    let spline = PhiSpline {
        lo: inner * inner,
        hi: (inner + eps) * (inner + eps),
        m_plus_1: m + 1.0,
    };
    // band membership: phi stays within [0, M+1]
    for k in 0..=1000 {
        let t = spline.lo + (spline.hi - spline.lo) * (k as f64) / 1000.0;
        let v = spline.phi(t);
        assert!(
            (-1e-9..=m + 1.0 + 1e-9).contains(&v),
            "phi({t}) = {v} leaves [0, M+1]"
        );
    }
    let spec = LyapunovSpec::modified(spline);

    // the inequality chain, verified numerically per sampled z
    let mut worst_integral = f64::NEG_INFINITY;
    let mut worst_bound = f64::NEG_INFINITY;
    for z in domain.boundary_samples(64) {
        let lhs = mspec.integrate(z, &|p| spec.v(p)).value()?;
        let shell_mass = mspec.mass_in_shell(inner, inner + eps);
        let bound = (m + 1.0) * shell_mass + m;
        worst_integral = worst_integral.max(lhs);
        worst_bound = worst_bound.max(bound);
        let quad_slack = 1e-4 * (1.0 + m);
        if lhs > bound + quad_slack || bound > m + 1.0 + 1e-9 || lhs > spec.v(z) + quad_slack {
            return Err(MeasureError::InvalidDensity(format!(
                "inequality chain failed at z = ({}, {}): integral {lhs:.6}, bound {bound:.6}, V(z) {:.6}",
                z.x,
                z.y,
                spec.v(z)
            )));
        }
    }
    let report = ModifyReport {
        second_moment: m,
        epsilon: eps,
        band: (spline.lo, spline.hi),
        worst_integral,
        worst_bound,
    };
    Ok((spec, report))
}
