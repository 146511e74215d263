use crate::scalar::Scalar;
use rayon::prelude::*;

const SUM_CHUNK: usize = 4096;

/// Sum with a partition that does not depend on the thread pool, so the
/// result is bit-identical for any thread count.
pub fn fixed_sum<T: Scalar>(xs: &[T]) -> T {
    if xs.len() <= SUM_CHUNK {
        return xs.iter().fold(T::zero(), |a, &b| a + b);
    }
    let partial: Vec<T> = xs
        .par_chunks(SUM_CHUNK)
        .map(|c| c.iter().fold(T::zero(), |a, &b| a + b))
        .collect();
    partial.iter().fold(T::zero(), |a, &b| a + b)
}

/// Compressed sparse row matrix. Row `i` holds the weights flowing into `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Duplicates are summed; explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() = *values.last().unwrap() + v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = CsrMatrix { nrows, ncols, row_ptr, col_idx, values };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|v| *v != T::zero()) {
            return;
        }
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.values[k] != T::zero() {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i).find(|&(c, _)| c == j).map_or(T::zero(), |(_, v)| v)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// y = A x, parallel over rows; each row is summed sequentially.
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        let body = |(i, yi): (usize, &mut T)| {
            let mut s = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s = s + self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        };
        if self.nrows >= 2048 {
            y.par_iter_mut().enumerate().for_each(body);
        } else {
            y.iter_mut().enumerate().for_each(body);
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<(usize, usize, T)> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn column_sums(&self) -> Vec<T> {
        let mut s = vec![T::zero(); self.ncols];
        for (_, j, v) in self.triplets() {
            s[j] = s[j] + v;
        }
        s
    }

    /// Copy with every column `j` where `mask[j]` removed (set to zero).
    pub fn without_columns(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.ncols);
        let t = self.triplets().filter(|&(_, j, _)| !mask[j]).collect();
        CsrMatrix::from_triplets(self.nrows, self.ncols, t)
    }

    /// Principal submatrix on `idx` (which must be sorted and distinct).
    pub fn principal_submatrix(&self, idx: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.ncols];
        for (k, &g) in idx.iter().enumerate() {
            local[g] = k;
        }
        let mut t = Vec::new();
        for (a, &gi) in idx.iter().enumerate() {
            for (gj, v) in self.row(gi) {
                if local[gj] != usize::MAX {
                    t.push((a, local[gj], v));
                }
            }
        }
        CsrMatrix::from_triplets(idx.len(), idx.len(), t)
    }
}
