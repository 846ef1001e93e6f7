//! Compressed sparse row matrices and a banded LU direct solver.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// CSR matrix with f64 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from (row, col, value) triplets, summing duplicates. Entries that
    /// sum to exactly zero are kept; structural zeros are never invented.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut sum = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                sum += v * x[j];
            }
            y[i] = sum;
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let triplets = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, triplets)
    }

    /// `self + alpha * other`, merging sparsity patterns.
    pub fn add_scaled(&self, other: &Self, alpha: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets: Vec<_> = self.iter().collect();
        triplets.extend(other.iter().map(|(i, j, v)| (i, j, alpha * v)));
        Self::from_triplets(self.nrows, self.ncols, triplets)
    }

    /// Left-multiplies by a diagonal matrix: row i scaled by `diag[i]`.
    pub fn scale_rows(&self, diag: &[f64]) -> Self {
        assert_eq!(diag.len(), self.nrows);
        let mut out = self.clone();
        for i in 0..self.nrows {
            let (lo, hi) = (out.indptr[i], out.indptr[i + 1]);
            for v in &mut out.values[lo..hi] {
                *v *= diag[i];
            }
        }
        out
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= alpha;
        }
        out
    }

    pub fn inf_norm(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude on the strict upper triangle.
    pub fn strict_upper_max_abs(&self) -> f64 {
        self.iter()
            .filter(|&(i, j, _)| j > i)
            .map(|(_, _, v)| v.abs())
            .fold(0.0, f64::max)
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.iter()
            .map(|(i, j, _)| i.abs_diff(j))
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    triplets.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), triplets)
    }
}

/// Square banded matrix in LAPACK-style column storage with room for the
/// fill-in produced by partial pivoting: entry (i, j) is stored at
/// `data[j * ldab + kl + ku + i - j]` for `-(kl + ku) <= i - j <= kl`.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        (j as isize - i as isize) <= self.ku as isize
            && (i as isize - j as isize) <= self.kl as isize
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j));
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n || j >= self.n || !self.in_band(i, j) {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn from_csr(a: &SparseMatrix) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let mut kl = 0usize;
        let mut ku = 0usize;
        for (i, j, _) in a.iter() {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let mut b = Self::zeros(n, kl, ku);
        for (i, j, v) in a.iter() {
            b.add(i, j, v);
        }
        b
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let i_lo = j.saturating_sub(self.ku);
            let i_hi = (j + self.kl).min(self.n - 1);
            let xj = x[j];
            for i in i_lo..=i_hi {
                y[i] += self.data[self.slot(i, j)] * xj;
            }
        }
        y
    }

    pub fn inf_norm(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        for j in 0..self.n {
            let i_lo = j.saturating_sub(self.ku);
            let i_hi = (j + self.kl).min(self.n - 1);
            for i in i_lo..=i_hi {
                sums[i] += self.data[self.slot(i, j)].abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// LU factorization with partial pivoting. The factors stay in band
    /// storage; U may fill up to `kl + ku` superdiagonals.
    pub fn lu(mut self) -> Result<BandedLu> {
        let n = self.n;
        let kl = self.kl;
        let ku_fill = self.ku + self.kl;
        let mut ipiv = vec![0usize; n];
        let mut max_pivot = 0.0_f64;
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            // Pivot search within the column's band rows.
            let i_hi = (j + kl).min(n - 1);
            let mut piv_row = j;
            let mut piv_val = self.data[self.slot(j, j)].abs();
            for i in j + 1..=i_hi {
                let v = self.data[self.slot(i, j)].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = i;
                }
            }
            ipiv[j] = piv_row;
            if piv_val == 0.0 {
                return Err(Error::Solver(format!(
                    "zero pivot at column {j} of banded LU"
                )));
            }
            max_pivot = max_pivot.max(piv_val);
            min_pivot = min_pivot.min(piv_val);
            if piv_row != j {
                let c_hi = (j + ku_fill).min(n - 1);
                for c in j..=c_hi {
                    let s1 = self.slot(j, c);
                    let s2 = self.slot(piv_row, c);
                    self.data.swap(s1, s2);
                }
            }
            let pivot = self.data[self.slot(j, j)];
            if i_hi > j {
                // Multipliers live contiguously below the pivot.
                let lj = self.slot(j + 1, j);
                for s in lj..=self.slot(i_hi, j) {
                    self.data[s] /= pivot;
                }
                // Rank-1 update; for a fixed column the affected rows are
                // contiguous in the band storage, and columns j and c occupy
                // disjoint storage blocks.
                let c_hi = (j + ku_fill).min(n - 1);
                let nrows = i_hi - j;
                for c in j + 1..=c_hi {
                    let ajc = self.data[self.slot(j, c)];
                    if ajc == 0.0 {
                        continue;
                    }
                    let us = self.slot(j + 1, c);
                    let (head, tail) = self.data.split_at_mut(us);
                    let lcol = &head[lj..lj + nrows];
                    for (u, &l) in tail[..nrows].iter_mut().zip(lcol) {
                        *u -= ajc * l;
                    }
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            ku_fill,
            ldab: self.ldab,
            data: self.data,
            ipiv,
            pivot_ratio: max_pivot / min_pivot,
        })
    }
}

/// Factored banded matrix. The factors reuse the band storage of the input:
/// U occupies up to `kl + ku` superdiagonals (fill from pivoting), L the `kl`
/// subdiagonals with unit diagonal.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku_fill: usize,
    ldab: usize,
    data: Vec<f64>,
    ipiv: Vec<usize>,
    /// max|pivot| / min|pivot|: a cheap conditioning indicator.
    pub pivot_ratio: f64,
}

impl BandedLu {
    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        // Same layout as BandedMatrix: storage row = kl + ku + (i - j), and
        // ku_fill == kl + ku.
        self.data[j * self.ldab + self.ku_fill + i - j]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        // Forward: apply row swaps and L (unit diagonal).
        for j in 0..self.n {
            let p = self.ipiv[j];
            if p != j {
                x.swap(j, p);
            }
            let i_hi = (j + self.kl).min(self.n - 1);
            let xj = x[j];
            if xj != 0.0 {
                for i in j + 1..=i_hi {
                    x[i] -= self.entry(i, j) * xj;
                }
            }
        }
        // Back substitution with U.
        for j in (0..self.n).rev() {
            x[j] /= self.entry(j, j);
            let xj = x[j];
            if xj != 0.0 {
                let i_lo = j.saturating_sub(self.ku_fill);
                for i in i_lo..j {
                    x[i] -= self.entry(i, j) * xj;
                }
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triplets_merge_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn matvec_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut triplets = Vec::new();
        for i in 0..8usize {
            for j in 0..8usize {
                if rng.random_range(0.0..1.0) < 0.4 {
                    triplets.push((i, j, rng.random_range(-1.0..1.0)));
                }
            }
        }
        let m = SparseMatrix::from_triplets(8, 8, triplets);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = m.matvec(&x);
        let yd = m.to_dense() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..8 {
            assert!((y[i] - yd[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn add_scaled_and_transpose() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0)]);
        let b = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 5.0)]);
        let c = a.add_scaled(&b, 2.0);
        assert_eq!(c.get(0, 1), 4.0);
        assert_eq!(c.get(1, 0), 10.0);
        let t = c.transpose();
        assert_eq!(t.get(1, 0), 4.0);
        assert_eq!(t.get(0, 1), 10.0);
    }

    #[test]
    fn banded_lu_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &(n, kl, ku) in &[(12usize, 2usize, 3usize), (30, 7, 5), (50, 1, 1), (9, 8, 8)] {
            let mut band = BandedMatrix::zeros(n, kl, ku);
            let mut dense = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if band.in_band(i, j) {
                        let v: f64 = rng.random_range(-1.0..1.0);
                        let v = if i == j { v + 3.0 } else { v };
                        band.set(i, j, v);
                        dense[(i, j)] = v;
                    }
                }
            }
            let x_true: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = band.matvec(&x_true);
            let lu = band.clone().lu().unwrap();
            let x = lu.solve(&b);
            let x_dense = dense
                .lu()
                .solve(&nalgebra::DVector::from_column_slice(&b))
                .unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - x_true[i]).abs() < 1e-10,
                    "n={n} kl={kl} ku={ku} i={i}: {} vs {}",
                    x[i],
                    x_true[i]
                );
                assert!((x[i] - x_dense[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn banded_lu_needs_pivoting() {
        // Zero diagonal head: fails without partial pivoting.
        let mut band = BandedMatrix::zeros(3, 1, 1);
        band.set(0, 0, 0.0);
        band.set(0, 1, 1.0);
        band.set(1, 0, 1.0);
        band.set(1, 1, 1.0);
        band.set(1, 2, 0.5);
        band.set(2, 1, -1.0);
        band.set(2, 2, 2.0);
        let rhs = vec![1.0, 2.0, 0.0];
        let x = band.clone().lu().unwrap().solve(&rhs);
        let back = band.matvec(&x);
        for i in 0..3 {
            assert!((back[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_banded_matrix_is_reported() {
        let band = BandedMatrix::zeros(4, 1, 1);
        assert!(band.lu().is_err());
    }

    #[test]
    fn from_csr_roundtrip() {
        let a = SparseMatrix::from_triplets(
            4,
            4,
            vec![(0, 0, 2.0), (1, 2, -1.0), (3, 1, 4.0), (2, 2, 1.0)],
        );
        let band = BandedMatrix::from_csr(&a);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(band.get(i, j), a.get(i, j));
            }
        }
        assert_eq!(band.kl(), 2);
        assert_eq!(band.ku(), 1);
    }
}
