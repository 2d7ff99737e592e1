//! Spectral graph convolution on mesh-vertex features.
//!
//! A layer computes `sigma(theta0 f + theta1 (f L~))` with the first-order
//! Chebyshev form of the scaled Laplacian; `chebyshev_basis` exposes the
//! general K-term recursion for verification.

use crate::mesh::GraphOperator;
use crate::sparse::Csr;
use crate::tensor::{Activation, BoundParams, ParamId, ParamStore, Scalar, Tape, Var};
use rand::Rng;
use std::sync::Arc;

/// Precision-converted sparse operators of one graph (or a block-diagonal
/// batch of graphs), ready for tape products.
#[derive(Clone)]
pub struct SpectralOps<T: Scalar> {
    pub vertex_count: usize,
    pub scaled_laplacian: Arc<Csr<T>>,
    pub neighbor_mean_t: Arc<Csr<T>>,
}

impl<T: Scalar> SpectralOps<T> {
    pub fn from_operator(op: &GraphOperator) -> Self {
        Self {
            vertex_count: op.vertex_count(),
            scaled_laplacian: Arc::new(op.laplacian_scaled().map_values(|v| T::cast(v))),
            neighbor_mean_t: Arc::new(op.neighbor_mean_transposed().map_values(|v| T::cast(v))),
        }
    }

    /// Stack several graphs into one block-diagonal operator so all
    /// structures share one pass through the network weights.
    pub fn block_diag(parts: &[&SpectralOps<T>]) -> Self {
        let lap: Vec<&Csr<T>> = parts.iter().map(|p| &*p.scaled_laplacian).collect();
        let nm: Vec<&Csr<T>> = parts.iter().map(|p| &*p.neighbor_mean_t).collect();
        Self {
            vertex_count: parts.iter().map(|p| p.vertex_count).sum(),
            scaled_laplacian: Arc::new(Csr::block_diag(&lap)),
            neighbor_mean_t: Arc::new(Csr::block_diag(&nm)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphConvLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
    theta0: ParamId,
    theta1: ParamId,
}

impl GraphConvLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let theta0 = store.add_glorot(&format!("{name}.theta0"), &[d_out, d_in], d_in, d_out, rng);
        let theta1 = store.add_glorot(&format!("{name}.theta1"), &[d_out, d_in], d_in, d_out, rng);
        Self {
            d_in,
            d_out,
            activation,
            theta0,
            theta1,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        params: &BoundParams<'t, T>,
        ops: &SpectralOps<T>,
        f_in: Var<'t, T>,
    ) -> Var<'t, T> {
        let shape = f_in.shape();
        assert_eq!(
            shape,
            vec![self.d_in, ops.vertex_count],
            "graph_conv: features {:?} vs d_in {} and {} vertices",
            shape,
            self.d_in,
            ops.vertex_count
        );
        let t0 = params.var(self.theta0);
        let t1 = params.var(self.theta1);
        let spread = f_in.spmm_right(&ops.scaled_laplacian);
        let out = t0.matmul(f_in).add(t1.matmul(spread));
        match self.activation {
            Activation::Relu => out.relu(),
            Activation::None => out,
        }
    }
}

/// Two graph convolutions with a residual connection: ReLU after the first,
/// none after the second, and a final ReLU after the addition.
#[derive(Debug, Clone)]
pub struct GraphResidualBlock {
    conv_a: GraphConvLayer,
    conv_b: GraphConvLayer,
}

impl GraphResidualBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            conv_a: GraphConvLayer::new(
                store,
                &format!("{name}.a"),
                width,
                width,
                Activation::Relu,
                rng,
            ),
            conv_b: GraphConvLayer::new(
                store,
                &format!("{name}.b"),
                width,
                width,
                Activation::None,
                rng,
            ),
        }
    }

    pub fn width(&self) -> usize {
        self.conv_a.d_in
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        params: &BoundParams<'t, T>,
        ops: &SpectralOps<T>,
        f_in: Var<'t, T>,
    ) -> Var<'t, T> {
        let h = self.conv_a.forward(params, ops, f_in);
        let h = self.conv_b.forward(params, ops, h);
        f_in.add(h).relu()
    }
}

/// Chebyshev polynomials of the scaled Laplacian: T0 = I, T1 = L~,
/// Tk = 2 L~ T_{k-1} - T_{k-2}. Returns K+1 matrices.
pub fn chebyshev_basis(op: &GraphOperator, k: usize) -> Vec<Csr<f64>> {
    let n = op.vertex_count();
    let mut out = Vec::with_capacity(k + 1);
    out.push(Csr::identity(n));
    if k == 0 {
        return out;
    }
    out.push(op.laplacian_scaled().clone());
    for i in 2..=k {
        let prod = op.laplacian_scaled().matmul(&out[i - 1]);
        let next = prod.add_scaled(2.0, &out[i - 2], -1.0);
        out.push(next);
    }
    out
}
