//! Compressed sparse row matrices.
//!
//! Shared by the graph operators (Laplacian family) and the tape's
//! sparse-dense products.

/// Compressed sparse rows. Column indices within each row are ascending.
#[derive(Debug, Clone)]
pub struct Csr<T> {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Copy> Csr<T> {
    /// Build from per-row (column, value) lists; columns must be sorted.
    pub fn from_rows(n_cols: usize, rows: &[Vec<(usize, T)>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for &(c, v) in row {
                debug_assert!(c < n_cols);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows: rows.len(),
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// (column, value) pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(c, v)| (i, c, v)))
    }

    pub fn map_values<U: Copy>(&self, f: impl Fn(T) -> U) -> Csr<U> {
        Csr {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Block-diagonal stacking, used to batch several structures through
    /// shared weights in one pass.
    pub fn block_diag(blocks: &[&Csr<T>]) -> Csr<T> {
        let n_rows: usize = blocks.iter().map(|b| b.n_rows).sum();
        let n_cols: usize = blocks.iter().map(|b| b.n_cols).sum();
        let nnz: usize = blocks.iter().map(|b| b.nnz()).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        let mut col_off = 0;
        for b in blocks {
            for i in 0..b.n_rows {
                for (c, v) in b.row(i) {
                    col_idx.push(c + col_off);
                    values.push(v);
                }
                row_ptr.push(col_idx.len());
            }
            col_off += b.n_cols;
        }
        Csr {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl Csr<f64> {
    /// Dense copy, for small-mesh oracles and tests.
    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut m = ndarray::Array2::zeros((self.n_rows, self.n_cols));
        for (i, j, v) in self.iter_entries() {
            m[[i, j]] = v;
        }
        m
    }

    /// y = M x for a dense vector x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for (j, v) in self.row(i) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }
}

impl Csr<f64> {
    /// Sparse product `self * other` by row-wise accumulation.
    pub fn matmul(&self, other: &Csr<f64>) -> Csr<f64> {
        assert_eq!(self.n_cols, other.n_rows, "sparse matmul shape mismatch");
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(self.n_rows);
        let mut acc: Vec<f64> = vec![0.0; other.n_cols];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.n_rows {
            for (k, v) in self.row(i) {
                for (j, w) in other.row(k) {
                    if acc[j] == 0.0 && !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += v * w;
                }
            }
            touched.sort_unstable();
            let row: Vec<(usize, f64)> = touched.iter().map(|&j| (j, acc[j])).collect();
            for &j in &touched {
                acc[j] = 0.0;
            }
            touched.clear();
            rows.push(row);
        }
        Csr::from_rows(other.n_cols, &rows)
    }

    /// alpha * self + beta * other on the union of sparsity patterns.
    pub fn add_scaled(&self, alpha: f64, other: &Csr<f64>, beta: f64) -> Csr<f64> {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(self.n_rows);
        for i in 0..self.n_rows {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut a = self.row(i).peekable();
            let mut b = other.row(i).peekable();
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (Some((ca, va)), Some((cb, vb))) => {
                        if ca == cb {
                            row.push((ca, alpha * va + beta * vb));
                            a.next();
                            b.next();
                        } else if ca < cb {
                            row.push((ca, alpha * va));
                            a.next();
                        } else {
                            row.push((cb, beta * vb));
                            b.next();
                        }
                    }
                    (Some((ca, va)), None) => {
                        row.push((ca, alpha * va));
                        a.next();
                    }
                    (None, Some((cb, vb))) => {
                        row.push((cb, beta * vb));
                        b.next();
                    }
                    (None, None) => break,
                }
            }
            rows.push(row);
        }
        Csr::from_rows(self.n_cols, &rows)
    }

    /// Identity pattern of size n.
    pub fn identity(n: usize) -> Csr<f64> {
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        Csr::from_rows(n, &rows)
    }
}
