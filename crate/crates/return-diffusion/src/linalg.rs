//! Sparse matrix plumbing: triplet assembly, CSR matvec, and a direct LU
//! factorization (backed by faer) with forward and transpose solves.

use crate::error::SolveError;
use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, MatMut};

/// Row-major sparse matrix with summed duplicate entries.
#[derive(Debug, Clone)]
pub struct SparseMat {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMat {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> SparseMat {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMat { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            let xr = x[r];
            if xr != 0.0 {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    y[self.cols[k]] += self.vals[k] * xr;
                }
            }
        }
        y
    }

    /// max row sum of absolute values
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// A direct factorization of a sparse matrix, reusable for many right-hand
/// sides in either orientation.
pub struct Factorized {
    n: usize,
    lu: Lu<usize, f64>,
}

impl Factorized {
    pub fn new(mat: &SparseMat) -> Result<Factorized, SolveError> {
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..mat.n)
            .flat_map(|r| mat.row(r).map(move |(c, v)| Triplet::new(r, c, v)))
            .collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(mat.n, mat.n, &triplets)
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        let symbolic = SymbolicLu::try_new(a.symbolic())
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic, a.as_ref())
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        Ok(Factorized { n: mat.n, lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut x = rhs.to_vec();
        let m = MatMut::from_column_major_slice_mut(&mut x, self.n, 1);
        self.lu.solve_in_place_with_conj(Conj::No, m);
        x
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut x = rhs.to_vec();
        let m = MatMut::from_column_major_slice_mut(&mut x, self.n, 1);
        self.lu.solve_transpose_in_place_with_conj(Conj::No, m);
        x
    }
}

/// One-norm condition estimate by a few rounds of Hager's power method on the
/// inverse, reusing the factorization.
pub fn condition_estimate(mat: &SparseMat, fact: &Factorized) -> f64 {
    let n = mat.n;
    if n == 0 {
        return 0.0;
    }
    let norm_a_1 = {
        // max column sum = max row sum of the transpose
        let mut col = vec![0.0f64; n];
        for r in 0..n {
            for (c, v) in mat.row(r) {
                col[c] += v.abs();
            }
        }
        col.iter().fold(0.0f64, |a, &b| a.max(b))
    };
    let mut x = vec![1.0 / n as f64; n];
    let mut est = 0.0f64;
    for _ in 0..5 {
        let y = fact.solve(&x);
        est = y.iter().map(|v| v.abs()).sum();
        let xi: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
        let z = fact.solve_transpose(&xi);
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .fold((0, 0.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        if zmax <= zx.abs() {
            break;
        }
        x = vec![0.0; n];
        x[jmax] = 1.0;
    }
    norm_a_1 * est
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SparseMat {
        // [[2,1,0],[0,3,1],[1,0,4]]
        SparseMat::from_triplets(
            3,
            &[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0), (1, 2, 1.0), (2, 0, 1.0), (2, 2, 4.0)],
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMat::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 1.0]);
    }

    #[test]
    fn solve_and_transpose_round_trip() {
        let m = toy();
        let f = Factorized::new(&m).unwrap();
        let b = vec![3.0, 4.0, 5.0];
        let x = f.solve(&b);
        let back = m.matvec(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let bt = vec![1.0, 2.0, 3.0];
        let y = f.solve_transpose(&bt);
        let back = m.matvec_transpose(&y);
        for (u, v) in back.iter().zip(&bt) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn condition_estimate_is_sane() {
        let m = toy();
        let f = Factorized::new(&m).unwrap();
        let c = condition_estimate(&m, &f);
        // well-conditioned 3x3: estimate within a couple orders of unity
        assert!(c > 1.0 && c < 1e3, "estimate {c}");
    }
}
