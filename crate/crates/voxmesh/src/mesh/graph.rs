//! Sparse graph operators bound to one mesh topology.
//!
//! The scaled Laplacian is what the spectral filters consume:
//! `L_norm = I - D^{-1/2} A D^{-1/2}` and `L~ = 2 L_norm / lambda_max - I`.
//! Eigendecomposition is never computed; lambda_max defaults to the constant
//! upper bound 2, with power iteration available as an alternative.

use super::TriMesh;
use crate::data_err;
use crate::error::Result;
pub use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMode {
    /// lambda_max = 2, the upper bound for normalized Laplacians.
    FixedTwo,
    /// Estimate lambda_max by power iteration on L_norm.
    PowerIteration,
}

/// Adjacency, degree and Laplacian family of one mesh topology.
#[derive(Debug, Clone)]
pub struct GraphOperator {
    adjacency: Csr<f64>,
    degree: Vec<f64>,
    laplacian_normalized: Csr<f64>,
    laplacian_scaled: Csr<f64>,
    lambda_max: f64,
}

impl GraphOperator {
    pub fn vertex_count(&self) -> usize {
        self.degree.len()
    }

    pub fn adjacency(&self) -> &Csr<f64> {
        &self.adjacency
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn laplacian_normalized(&self) -> &Csr<f64> {
        &self.laplacian_normalized
    }

    pub fn laplacian_scaled(&self) -> &Csr<f64> {
        &self.laplacian_scaled
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Transposed neighbor-mean operator W^T with W[i][j] = 1/deg(i) for
    /// j in N(i); `X (W^T)` then holds each column's one-ring mean. Used by
    /// the Laplacian regularizer.
    pub fn neighbor_mean_transposed(&self) -> Csr<f64> {
        let n = self.vertex_count();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, _) in self.adjacency.iter_entries() {
            // W[i][j] = 1/deg(i)  ->  W^T[j][i]
            rows[j].push((i, 1.0 / self.degree[i]));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(c, _)| c);
        }
        Csr::from_rows(n, &rows)
    }

    /// Combinatorial Laplacian L = D - A; every row sums to zero.
    pub fn laplacian_combinatorial(&self) -> Csr<f64> {
        let n = self.vertex_count();
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> =
                    self.adjacency.row(i).map(|(j, _)| (j, -1.0)).collect();
                row.push((i, self.degree[i]));
                row.sort_unstable_by_key(|&(c, _)| c);
                row
            })
            .collect();
        Csr::from_rows(n, &rows)
    }

    /// Build the Laplacian family from raw one-ring lists (each sorted,
    /// symmetric). The graph must be connected with no isolated vertex.
    pub fn from_neighbor_lists(
        neighbors: &[Vec<usize>],
        lambda_mode: LambdaMode,
    ) -> Result<GraphOperator> {
        let n = neighbors.len();
        if let Some(v) = (0..n).find(|&v| neighbors[v].is_empty()) {
            return Err(data_err!("vertex {v} is isolated (degree 0)"));
        }
        let components = component_count(neighbors);
        if components != 1 {
            return Err(data_err!(
                "mesh graph is disconnected: {components} components"
            ));
        }

        let adj_rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| neighbors[i].iter().map(|&j| (j, 1.0)).collect())
            .collect();
        let adjacency = Csr::from_rows(n, &adj_rows);
        let degree: Vec<f64> = (0..n).map(|i| neighbors[i].len() as f64).collect();

        // L_norm = I - D^{-1/2} A D^{-1/2}; diagonal entries are stored
        // explicitly so the scaled matrix keeps a uniform structure.
        let inv_sqrt_deg: Vec<f64> = degree.iter().map(|&d| 1.0 / d.sqrt()).collect();
        let lnorm_rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = neighbors[i]
                    .iter()
                    .map(|&j| (j, -inv_sqrt_deg[i] * inv_sqrt_deg[j]))
                    .collect();
                row.push((i, 1.0));
                row.sort_unstable_by_key(|&(c, _)| c);
                row
            })
            .collect();
        let laplacian_normalized = Csr::from_rows(n, &lnorm_rows);

        let lambda_max = match lambda_mode {
            LambdaMode::FixedTwo => 2.0,
            LambdaMode::PowerIteration => power_iteration_lambda_max(&laplacian_normalized),
        };

        let laplacian_scaled = {
            let s = 2.0 / lambda_max;
            let rows: Vec<Vec<(usize, f64)>> = (0..n)
                .map(|i| {
                    laplacian_normalized
                        .row(i)
                        .map(|(j, v)| (j, if i == j { s * v - 1.0 } else { s * v }))
                        .collect()
                })
                .collect();
            Csr::from_rows(n, &rows)
        };

        Ok(GraphOperator {
            adjacency,
            degree,
            laplacian_normalized,
            laplacian_scaled,
            lambda_max,
        })
    }
}

/// Connected-component count by BFS over one-ring lists.
fn component_count(neighbors: &[Vec<usize>]) -> usize {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for &w in &neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    components
}

/// Build the Laplacian family for a mesh topology.
pub fn build_graph_operator(mesh: &TriMesh, lambda_mode: LambdaMode) -> Result<GraphOperator> {
    let neighbors: Vec<Vec<usize>> = (0..mesh.vertex_count())
        .map(|v| mesh.one_ring(v).to_vec())
        .collect();
    GraphOperator::from_neighbor_lists(&neighbors, lambda_mode)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// deterministic start vector.
fn power_iteration_lambda_max(m: &Csr<f64>) -> f64 {
    let n = m.n_rows();
    // Alternating-sign ramp avoids starting orthogonal to the top eigenvector
    // on symmetric graphs (the constant vector would).
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * (1.0 + i as f64 / n as f64)
        })
        .collect();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let y = m.matvec(&x);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 2.0;
        }
        x = y.iter().map(|v| v / norm).collect();
        let mx = m.matvec(&x);
        lambda = x.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>();
    }
    lambda
}
