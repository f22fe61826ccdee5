use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::csr::CsrMatrix;
use super::ordering::minimum_degree;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Ordering, elimination tree and factor pattern of a symmetric matrix.
///
/// The analysis depends only on the sparsity pattern, so it is computed once
/// and shared by every numeric factorisation of matrices with that pattern.
/// Values are supplied in the layout of the permuted upper triangle; use
/// [`SymbolicCholesky::slot`] to find where an entry `(i, j)` lives.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
    iperm: Vec<usize>,
    // Upper triangle of P A Pᵀ, compressed by column.
    a_colptr: Vec<usize>,
    a_rowidx: Vec<usize>,
    // Factor pattern, compressed by column, diagonal first then ascending rows.
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    // Row patterns of L (strictly lower part) with the slot each entry fills.
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_slots: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyse the pattern given as (row, col) pairs in original indexing.
    /// Either triangle may be given; the diagonal is always included.
    pub fn analyze(n: usize, entries: &[(usize, usize)]) -> Arc<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in entries {
            if i != j {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        let perm = minimum_degree(&adjacency);
        Self::analyze_with_ordering(n, entries, perm)
    }

    /// Analyse the pattern of a symmetric CSR matrix.
    pub fn analyze_csr(a: &CsrMatrix) -> Arc<Self> {
        let entries: Vec<(usize, usize)> = (0..a.nrows()).flat_map(|i| a.row(i).0.iter().map(move |&j| (i, j))).collect();
        Self::analyze(a.nrows(), &entries)
    }

    /// For each stored entry of `a`, the factor value slot it fills; entries of
    /// the strict lower triangle map to `None` so each pair is written once.
    pub fn slot_map(&self, a: &CsrMatrix) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(a.nnz());
        for i in 0..a.nrows() {
            for &j in a.row(i).0 {
                out.push(if j >= i { Some(self.slot(i, j).expect("entry outside analysed pattern")) } else { None });
            }
        }
        out
    }

    /// Factorise a symmetric CSR matrix whose pattern lies within the analysed one.
    pub fn factor_csr(self: &Arc<Self>, a: &CsrMatrix) -> Result<CholeskyFactor> {
        let map = self.slot_map(a);
        let mut values = vec![0.0; self.value_len()];
        for (k, s) in map.iter().enumerate() {
            if let Some(s) = s {
                values[*s] += a.values()[k];
            }
        }
        self.factor(&values)
    }

    /// Analyse with a caller-supplied ordering.
    pub fn analyze_with_ordering(n: usize, entries: &[(usize, usize)], perm: Vec<usize>) -> Arc<Self> {
        assert_eq!(perm.len(), n);
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        // Permuted upper triangle, column-compressed.
        let mut cols: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
        for &(i, j) in entries {
            let (a, b) = (iperm[i], iperm[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            cols[c].push(r);
        }
        let mut a_colptr = vec![0];
        let mut a_rowidx = Vec::new();
        for col in cols.iter_mut() {
            col.sort_unstable();
            col.dedup();
            a_rowidx.extend_from_slice(col);
            a_colptr.push(a_rowidx.len());
        }

        // Elimination tree.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &r in &a_rowidx[a_colptr[k]..a_colptr[k + 1]] {
                let mut i = r;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Row patterns via elimination-tree reach.
        let mut mark = vec![NONE; n];
        let mut row_ptr = vec![0];
        let mut row_cols = Vec::new();
        let mut col_counts = vec![1usize; n];
        for k in 0..n {
            mark[k] = k;
            let start = row_cols.len();
            for &r in &a_rowidx[a_colptr[k]..a_colptr[k + 1]] {
                let mut i = r;
                while i < k && mark[i] != k {
                    mark[i] = k;
                    row_cols.push(i);
                    i = parent[i];
                }
            }
            row_cols[start..].sort_unstable();
            for &j in &row_cols[start..] {
                col_counts[j] += 1;
            }
            row_ptr.push(row_cols.len());
        }

        let mut l_colptr = vec![0; n + 1];
        for j in 0..n {
            l_colptr[j + 1] = l_colptr[j] + col_counts[j];
        }
        let mut l_rowidx = vec![0; l_colptr[n]];
        let mut fill: Vec<usize> = l_colptr[..n].to_vec();
        for j in 0..n {
            l_rowidx[fill[j]] = j;
            fill[j] += 1;
        }
        let mut row_slots = vec![0; row_cols.len()];
        for k in 0..n {
            for p in row_ptr[k]..row_ptr[k + 1] {
                let j = row_cols[p];
                l_rowidx[fill[j]] = k;
                row_slots[p] = fill[j];
                fill[j] += 1;
            }
        }

        Arc::new(Self { n, perm, iperm, a_colptr, a_rowidx, l_colptr, l_rowidx, row_ptr, row_cols, row_slots })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Length of the value array expected by [`factor`](Self::factor).
    pub fn value_len(&self) -> usize {
        self.a_rowidx.len()
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_rowidx.len()
    }

    /// Position of entry `(i, j)` (original indexing, either triangle) in the
    /// value array, or `None` if it is structurally zero.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.iperm[i], self.iperm[j]);
        let (r, c) = if a <= b { (a, b) } else { (b, a) };
        let rows = &self.a_rowidx[self.a_colptr[c]..self.a_colptr[c + 1]];
        rows.binary_search(&r).ok().map(|p| self.a_colptr[c] + p)
    }

    fn l_slot(&self, r: usize, c: usize) -> Option<usize> {
        let start = self.l_colptr[c];
        let rows = &self.l_rowidx[start..self.l_colptr[c + 1]];
        rows.binary_search(&r).ok().map(|p| start + p)
    }

    /// Numeric factorisation `P A Pᵀ = L Lᵀ`.
    pub fn factor(self: &Arc<Self>, values: &[f64]) -> Result<CholeskyFactor> {
        assert_eq!(values.len(), self.value_len());
        let n = self.n;
        let mut l = vec![0.0; self.l_rowidx.len()];
        let mut x = vec![0.0; n];
        for k in 0..n {
            for p in self.a_colptr[k]..self.a_colptr[k + 1] {
                x[self.a_rowidx[p]] = values[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for p in self.row_ptr[k]..self.row_ptr[k + 1] {
                let j = self.row_cols[p];
                let slot = self.row_slots[p];
                let lkj = x[j] / l[self.l_colptr[j]];
                x[j] = 0.0;
                for q in self.l_colptr[j] + 1..slot {
                    x[self.l_rowidx[q]] -= l[q] * lkj;
                }
                d -= lkj * lkj;
                l[slot] = lkj;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { column: self.perm[k] });
            }
            l[self.l_colptr[k]] = d.sqrt();
        }
        Ok(CholeskyFactor { symbolic: Arc::clone(self), l })
    }
}

/// Numeric Cholesky factor sharing a [`SymbolicCholesky`].
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    l: Vec<f64>,
}

impl CholeskyFactor {
    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn log_det(&self) -> f64 {
        let s = &self.symbolic;
        2.0 * (0..s.n).map(|j| self.l[s.l_colptr[j]].ln()).sum::<f64>()
    }

    // L y = b in place (permuted space).
    fn forward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let p0 = s.l_colptr[j];
            y[j] /= self.l[p0];
            let yj = y[j];
            for p in p0 + 1..s.l_colptr[j + 1] {
                y[s.l_rowidx[p]] -= self.l[p] * yj;
            }
        }
    }

    // Lᵀ y = b in place (permuted space).
    fn backward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let p0 = s.l_colptr[j];
            let mut acc = y[j];
            for p in p0 + 1..s.l_colptr[j + 1] {
                acc -= self.l[p] * y[s.l_rowidx[p]];
            }
            y[j] = acc / self.l[p0];
        }
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        let mut y: Vec<f64> = s.perm.iter().map(|&p| b[p]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; s.n];
        for (k, &p) in s.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// `x = Pᵀ L⁻ᵀ z`; has covariance `A⁻¹` when `z` is white noise.
    pub fn solve_lt(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; s.n];
        for (k, &p) in s.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// One zero-mean draw with covariance `A⁻¹`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.solve_lt(&z)
    }

    /// Entries of `A⁻¹` on the factor pattern (Takahashi recursions).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let s = &self.symbolic;
        let mut sigma = vec![0.0; self.l.len()];
        let mut rows: Vec<usize> = Vec::new();
        let mut lv: Vec<f64> = Vec::new();
        for j in (0..s.n).rev() {
            let p0 = s.l_colptr[j];
            let p1 = s.l_colptr[j + 1];
            let ljj = self.l[p0];
            rows.clear();
            lv.clear();
            rows.extend_from_slice(&s.l_rowidx[p0 + 1..p1]);
            lv.extend_from_slice(&self.l[p0 + 1..p1]);
            for (a, &i) in rows.iter().enumerate() {
                let mut acc = 0.0;
                for (b, &k) in rows.iter().enumerate() {
                    let (r, c) = if k >= i { (k, i) } else { (i, k) };
                    let slot = s.l_slot(r, c).expect("fill pattern not closed");
                    acc += lv[b] * sigma[slot];
                }
                sigma[p0 + 1 + a] = -acc / ljj;
            }
            let mut acc = 0.0;
            for (b, _) in rows.iter().enumerate() {
                acc += lv[b] * sigma[p0 + 1 + b];
            }
            sigma[p0] = 1.0 / (ljj * ljj) - acc / ljj;
        }
        SelectedInverse { symbolic: Arc::clone(&self.symbolic), sigma }
    }
}

/// Entries of the inverse on the factor pattern, addressed in original indexing.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: Arc<SymbolicCholesky>,
    sigma: Vec<f64>,
}

impl SelectedInverse {
    /// `(A⁻¹)_ij` if `(i, j)` lies in the factor pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let s = &self.symbolic;
        let (a, b) = (s.iperm[i], s.iperm[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        s.l_slot(r, c).map(|p| self.sigma[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let s = &self.symbolic;
        (0..s.n).map(|i| self.sigma[s.l_colptr[s.iperm[i]]]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Random SPD matrix: sparse symmetric pattern plus a dominant diagonal.
    fn random_spd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    t.push((i, j, v));
                    t.push((j, i, v));
                }
            }
        }
        let m = CsrMatrix::from_triplets(n, n, &t);
        let mut diag = vec![1.0; n];
        for (i, _, v) in m.triplets() {
            diag[i] += v.abs();
        }
        m.linear_combination(1.0, &CsrMatrix::from_diagonal(&diag), 1.0)
    }

    fn factor(m: &CsrMatrix) -> CholeskyFactor {
        let entries: Vec<_> = m.triplets().iter().map(|&(i, j, _)| (i, j)).collect();
        let sym = SymbolicCholesky::analyze(m.nrows(), &entries);
        let mut vals = vec![0.0; sym.value_len()];
        for (i, j, v) in m.triplets() {
            if i <= j {
                vals[sym.slot(i, j).unwrap()] = v;
            }
        }
        sym.factor(&vals).unwrap()
    }

    #[test]
    fn solve_logdet_and_selected_inverse_match_dense() {
        for seed in 0..5 {
            let m = random_spd(40, seed);
            let f = factor(&m);
            let dense = m.to_dense();
            let inv = dense.clone().try_inverse().unwrap();
            let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
            let x = f.solve(&b);
            let r = m.mul_vec(&x);
            for (ri, bi) in r.iter().zip(&b) {
                assert!((ri - bi).abs() < 1e-12);
            }
            let ld = nalgebra::Cholesky::new(dense).unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
            assert!((f.log_det() - ld).abs() < 1e-10);
            let sel = f.selected_inverse();
            for (i, d) in sel.diagonal().iter().enumerate() {
                assert!((d - inv[(i, i)]).abs() < 1e-12);
            }
            for (i, j, _) in m.triplets() {
                assert!((sel.get(i, j).unwrap() - inv[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        let entries: Vec<_> = m.triplets().iter().map(|&(i, j, _)| (i, j)).collect();
        let sym = SymbolicCholesky::analyze(2, &entries);
        let mut vals = vec![0.0; sym.value_len()];
        for (i, j, v) in m.triplets() {
            if i <= j {
                vals[sym.slot(i, j).unwrap()] = v;
            }
        }
        assert!(matches!(sym.factor(&vals), Err(Error::NotPositiveDefinite { .. })));
    }
}
