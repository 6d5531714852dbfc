//! Compressed sparse row operators and a symmetric positive-definite solver.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Immutable sparse matrix in CSR layout. Entries within a row are sorted by
/// column and duplicates are summed during assembly, so two operators built
/// from the same triplets in any order are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        for &(r, c, _) in &triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}x{cols}");
        }
        // Stable sort keeps the summation order of duplicates deterministic.
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseOperator { rows, cols, row_ptr, col_idx, values }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        SparseOperator {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Canonically ordered `(row, col, value)` entries.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `y = A^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                y[c] += v * x[r];
            }
        }
        y
    }

    /// Applies the operator to each column of a row-major `n x k` block.
    pub fn mul_cols<const K: usize>(&self, x: &[[f64; K]]) -> Vec<[f64; K]> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let mut acc = [0.0; K];
                for (c, v) in self.row(r) {
                    for k in 0..K {
                        acc[k] += v * x[c][k];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn tr_mul_cols<const K: usize>(&self, x: &[[f64; K]]) -> Vec<[f64; K]> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![[0.0; K]; self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                for k in 0..K {
                    y[c][k] += v * x[r][k];
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseOperator {
        SparseOperator::from_triplets(self.cols, self.rows, self.triplets().map(|(r, c, v)| (c, r, v)).collect())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// Largest `|A - A^T|` entry; zero for a symmetric operator.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        self.triplets().map(|(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max)
    }

    /// Principal submatrix that drops the listed rows/columns; returns it with
    /// the map from kept index to original index.
    pub fn without(&self, removed: &[usize]) -> (SparseOperator, Vec<usize>) {
        assert_eq!(self.rows, self.cols);
        let mut new_index = vec![usize::MAX; self.rows];
        let mut kept = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            if !removed.contains(&i) {
                new_index[i] = kept.len();
                kept.push(i);
            }
        }
        let triplets = self
            .triplets()
            .filter(|&(r, c, _)| new_index[r] != usize::MAX && new_index[c] != usize::MAX)
            .map(|(r, c, v)| (new_index[r], new_index[c], v))
            .collect();
        (SparseOperator::from_triplets(kept.len(), kept.len(), triplets), kept)
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
pub fn reverse_cuthill_mckee(a: &SparseOperator) -> Vec<usize> {
    let n = a.rows();
    let adj: Vec<Vec<usize>> = (0..n).map(|r| a.row(r).map(|(c, _)| c).filter(|&c| c != r).collect()).collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        // Start each component from its lowest-degree unvisited vertex.
        let start = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)).unwrap();
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (skyline) Cholesky factor `P A P^T = L L^T` of a symmetric
/// positive-definite operator, with a bandwidth-reducing permutation.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    perm: Vec<usize>,
    // first[i]: first column stored in row i of L; row i holds columns first[i]..=i.
    first: Vec<usize>,
    row_start: Vec<usize>,
    data: Vec<f64>,
}

impl CholeskyFactor {
    pub fn new(a: &SparseOperator) -> Result<Self> {
        assert_eq!(a.rows(), a.cols());
        let n = a.rows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (r, c, _) in a.triplets() {
            let (i, j) = (inv[r], inv[c]);
            if j < i {
                first[i] = first[i].min(j);
            }
        }
        let mut row_start = vec![0usize; n + 1];
        for i in 0..n {
            row_start[i + 1] = row_start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; row_start[n]];
        for (r, c, v) in a.triplets() {
            let (i, j) = (inv[r], inv[c]);
            if j <= i {
                data[row_start[i] + j - first[i]] += v;
            }
        }
        let at = |first: &[usize], row_start: &[usize], i: usize, j: usize| row_start[i] + j - first[i];
        for i in 0..n {
            for j in first[i]..=i {
                let lo = first[i].max(first[j]);
                let mut s = data[at(&first, &row_start, i, j)];
                for k in lo..j {
                    s -= data[at(&first, &row_start, i, k)] * data[at(&first, &row_start, j, k)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { pivot: perm[i], value: s });
                    }
                    data[at(&first, &row_start, i, i)] = s.sqrt();
                } else {
                    data[at(&first, &row_start, i, j)] = s / data[at(&first, &row_start, j, j)];
                }
            }
        }
        Ok(CholeskyFactor { n, perm, first, row_start, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[self.row_start[i] + j - self.first[i]]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..self.n {
            let mut s = y[i];
            for k in self.first[i]..i {
                s -= self.entry(i, k) * y[k];
            }
            y[i] = s / self.entry(i, i);
        }
        for i in (0..self.n).rev() {
            y[i] /= self.entry(i, i);
            let yi = y[i];
            for k in self.first[i]..i {
                y[k] -= self.entry(i, k) * yi;
            }
        }
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let a = SparseOperator::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5), (0, 0, -1.0)]);
        let t: Vec<_> = a.triplets().collect();
        assert_eq!(t, vec![(0, 0, -1.0), (0, 1, 2.0), (1, 2, 1.5)]);
        assert_eq!(a.get(1, 2), 1.5);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.mul_vec(&[1.0, 1.0, 2.0]), vec![1.0, 3.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 2.0]), vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn cholesky_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        // Random sparse SPD: diagonally dominant graph Laplacian plus identity.
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 1.0));
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let w: f64 = rng.gen_range(0.1..2.0);
                    trip.extend([(i, i, w), (j, j, w), (i, j, -w), (j, i, -w)]);
                }
            }
        }
        let a = SparseOperator::from_triplets(n, n, trip);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = CholeskyFactor::new(&a).unwrap().solve(&b);
        let dense = a.to_dense().cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for i in 0..n {
            assert!((x[i] - dense[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_is_reported() {
        let a = SparseOperator::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(matches!(CholeskyFactor::new(&a), Err(Error::NotPositiveDefinite { .. })));
    }
}
