//! The computation tape and differentiable operations.

use super::conv;
use super::Scalar;
use crate::sparse::Csr;
use ndarray::{ArrayD, ArrayViewD, Axis, Ix2, IxDyn, Slice};
use std::cell::{Cell, Ref, RefCell};
use std::sync::Arc;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// One recorded operation: op id, input refs and saved intermediates. The
/// output ref is the node's own index.
enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId),
    Scale(NodeId, T),
    Matmul(NodeId, NodeId),
    /// x[d,N] * S[N,N] with S constant.
    SpmmRight(NodeId, Arc<Csr<T>>),
    Relu(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    PowScalar(NodeId, T),
    Abs(NodeId),
    ClampMin(NodeId, T),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    Concat(Vec<NodeId>, usize),
    SliceCols(NodeId, usize, usize),
    GatherCols(NodeId, Arc<Vec<usize>>),
    Transpose(NodeId),
    Conv3d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
    },
    /// x[C, ...] + b[C] broadcast over trailing axes.
    ChannelBias(NodeId, NodeId),
    /// Nearest-neighbor x2 upsampling of [C, D, H, W].
    Upsample2x(NodeId),
    /// Saved mask already carries the inverted-dropout scale.
    Dropout(NodeId, Arc<ArrayD<T>>),
    /// feats [C, D0, D1, D2], points [N, 3] in feature-grid axis coordinates
    /// -> [N, C]; differentiable w.r.t. both.
    TrilinearGather { feats: NodeId, points: NodeId },
    /// Column-wise cross product of two [3, N] matrices.
    CrossCols(NodeId, NodeId),
    /// Columns scaled to unit length, [d, N].
    NormalizeCols(NodeId),
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Matmul(..) => "matmul",
            Op::SpmmRight(..) => "sparse_dense_matmul",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Ln(..) => "ln",
            Op::PowScalar(..) => "pow_scalar",
            Op::Abs(..) => "abs",
            Op::ClampMin(..) => "clamp_min",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherCols(..) => "gather_cols",
            Op::Transpose(..) => "transpose",
            Op::Conv3d { .. } => "conv3d",
            Op::ChannelBias(..) => "channel_bias",
            Op::Upsample2x(..) => "upsample2x",
            Op::Dropout(..) => "dropout",
            Op::TrilinearGather { .. } => "trilinear_gather",
            Op::CrossCols(..) => "cross_cols",
            Op::NormalizeCols(..) => "normalize_cols",
        }
    }
}

struct Node<T: Scalar> {
    value: ArrayD<T>,
    grad: Option<ArrayD<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Confined to one worker; not Sync.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    backward_run: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: NodeId,
}

#[cfg(debug_assertions)]
fn debug_check_finite<T: Scalar>(value: &ArrayD<T>, op: &str) {
    debug_assert!(
        value.iter().all(|v| v.is_finite()),
        "non-finite value after op `{op}`"
    );
}

#[cfg(not(debug_assertions))]
fn debug_check_finite<T: Scalar>(_value: &ArrayD<T>, _op: &str) {}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            backward_run: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        debug_check_finite(&value, op.name());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        // Fresh forward work invalidates the "backward already ran" state.
        self.backward_run.set(false);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Insert a tensor that participates in differentiation.
    pub fn leaf(&self, value: ArrayD<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Insert a constant (no gradient).
    pub fn constant(&self, value: ArrayD<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    fn requires_grad_of(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Concatenate along `axis`.
    pub fn concat<'t>(&'t self, vars: &[Var<'t, T>], axis: usize) -> Var<'t, T> {
        assert!(!vars.is_empty(), "concat of zero tensors");
        let ids: Vec<NodeId> = vars.iter().map(|v| v.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<ArrayViewD<T>> = ids.iter().map(|&i| nodes[i].value.view()).collect();
            ndarray::concatenate(Axis(axis), &views).unwrap_or_else(|e| {
                panic!(
                    "concat axis {axis}: incompatible shapes {:?}: {e}",
                    views.iter().map(|v| v.shape().to_vec()).collect::<Vec<_>>()
                )
            })
        };
        let rg = self.requires_grad_of(&ids);
        self.push(value, Op::Concat(ids, axis), rg)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Borrow of the forward value.
    pub fn value_ref(&self) -> Ref<'t, ArrayD<T>> {
        Ref::map(self.tape.nodes.borrow(), |nodes| &nodes[self.id].value)
    }

    /// Owned copy of the forward value.
    pub fn value(&self) -> ArrayD<T> {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Gradient accumulated by the last backward pass, if any.
    pub fn grad(&self) -> Option<ArrayD<T>> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    /// Scalar value of a rank-0/size-1 tensor.
    pub fn scalar_value(&self) -> T {
        let v = self.value_ref();
        assert_eq!(v.len(), 1, "scalar_value on tensor of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    fn unary(
        &self,
        value: ArrayD<T>,
        op: impl FnOnce(NodeId) -> Op<T>,
    ) -> Var<'t, T> {
        let rg = self.requires_grad();
        self.tape.push(value, op(self.id), rg)
    }

    fn binary_same_shape(&self, other: Var<'t, T>, opname: &str) {
        let a = self.value_ref();
        let b = other.value_ref();
        assert_eq!(
            a.shape(),
            b.shape(),
            "{opname}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
    }

    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        self.binary_same_shape(other, "add");
        let value = &*self.value_ref() + &*other.value_ref();
        let rg = self.tape.requires_grad_of(&[self.id, other.id]);
        self.tape.push(value, Op::Add(self.id, other.id), rg)
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        self.binary_same_shape(other, "sub");
        let value = &*self.value_ref() - &*other.value_ref();
        let rg = self.tape.requires_grad_of(&[self.id, other.id]);
        self.tape.push(value, Op::Sub(self.id, other.id), rg)
    }

    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        self.binary_same_shape(other, "mul");
        let value = &*self.value_ref() * &*other.value_ref();
        let rg = self.tape.requires_grad_of(&[self.id, other.id]);
        self.tape.push(value, Op::Mul(self.id, other.id), rg)
    }

    pub fn div(self, other: Var<'t, T>) -> Var<'t, T> {
        self.binary_same_shape(other, "div");
        let value = &*self.value_ref() / &*other.value_ref();
        let rg = self.tape.requires_grad_of(&[self.id, other.id]);
        self.tape.push(value, Op::Div(self.id, other.id), rg)
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let value = self.value_ref().mapv(|x| x + c);
        self.unary(value, |id| Op::AddScalar(id))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let value = self.value_ref().mapv(|x| x * c);
        self.unary(value, |id| Op::Scale(id, c))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(T::cast(-1.0))
    }

    /// 2-D matrix product.
    pub fn matmul(self, other: Var<'t, T>) -> Var<'t, T> {
        let value = {
            let a = self.value_ref();
            let b = other.value_ref();
            let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul lhs 2-D");
            let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul rhs 2-D");
            assert_eq!(
                a2.ncols(),
                b2.nrows(),
                "matmul: shape mismatch {:?} vs {:?}",
                a.shape(),
                b.shape()
            );
            a2.dot(&b2).into_dyn()
        };
        let rg = self.tape.requires_grad_of(&[self.id, other.id]);
        self.tape.push(value, Op::Matmul(self.id, other.id), rg)
    }

    /// x[d, N] * S[N, N] with a constant sparse matrix.
    pub fn spmm_right(self, s: &Arc<Csr<T>>) -> Var<'t, T> {
        let value = {
            let x = self.value_ref();
            let x2 = x.view().into_dimensionality::<Ix2>().expect("spmm lhs 2-D");
            assert_eq!(
                x2.ncols(),
                s.n_rows(),
                "sparse_dense_matmul: dense {:?} vs sparse {}x{}",
                x.shape(),
                s.n_rows(),
                s.n_cols()
            );
            spmm_right_value(&x2, s).into_dyn()
        };
        self.unary(value, |id| Op::SpmmRight(id, Arc::clone(s)))
    }

    pub fn relu(self) -> Var<'t, T> {
        let value = self.value_ref().mapv(|x| x.max(T::zero()));
        self.unary(value, Op::Relu)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let one = T::one();
        let value = self.value_ref().mapv(|x| one / (one + (-x).exp()));
        self.unary(value, Op::Sigmoid)
    }

    pub fn ln(self) -> Var<'t, T> {
        let value = self.value_ref().mapv(|x| x.ln());
        self.unary(value, Op::Ln)
    }

    /// Element-wise x^e for a scalar exponent.
    pub fn pow_scalar(self, e: T) -> Var<'t, T> {
        let value = self.value_ref().mapv(|x| x.powf(e));
        self.unary(value, |id| Op::PowScalar(id, e))
    }

    pub fn abs(self) -> Var<'t, T> {
        let value = self.value_ref().mapv(|x| x.abs());
        self.unary(value, Op::Abs)
    }

    /// max(x, c); gradient passes where x >= c.
    pub fn clamp_min(self, c: T) -> Var<'t, T> {
        let value = self.value_ref().mapv(|x| x.max(c));
        self.unary(value, |id| Op::ClampMin(id, c))
    }

    /// Reduction to a rank-0 scalar; accumulation is sequential in memory
    /// order so results do not depend on thread count.
    pub fn sum(self) -> Var<'t, T> {
        let total: T = self.value_ref().iter().copied().sum();
        let value = ArrayD::from_elem(IxDyn(&[]), total);
        self.unary(value, Op::Sum)
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value_ref().len();
        assert!(n > 0, "mean of empty tensor");
        let total: T = self.value_ref().iter().copied().sum();
        let value = ArrayD::from_elem(IxDyn(&[]), total / T::cast(n as f64));
        self.unary(value, Op::Mean)
    }

    /// Sum over one axis (axis removed from the shape).
    pub fn sum_axis(self, axis: usize) -> Var<'t, T> {
        let value = self.value_ref().sum_axis(Axis(axis));
        self.unary(value, |id| Op::SumAxis(id, axis))
    }

    /// Columns a..b of a [d, N] matrix.
    pub fn slice_cols(self, a: usize, b: usize) -> Var<'t, T> {
        let value = self
            .value_ref()
            .slice_axis(Axis(1), Slice::from(a..b))
            .to_owned();
        self.unary(value, |id| Op::SliceCols(id, a, b))
    }

    /// out[:, i] = x[:, idx[i]] for a [d, N] matrix.
    pub fn gather_cols(self, idx: &Arc<Vec<usize>>) -> Var<'t, T> {
        let value = {
            let x = self.value_ref();
            let x2 = x.view().into_dimensionality::<Ix2>().expect("gather_cols 2-D");
            let mut out = ndarray::Array2::<T>::zeros((x2.nrows(), idx.len()));
            for (i, &j) in idx.iter().enumerate() {
                out.column_mut(i).assign(&x2.column(j));
            }
            out.into_dyn()
        };
        self.unary(value, |id| Op::GatherCols(id, Arc::clone(idx)))
    }

    /// 2-D transpose.
    pub fn transpose(self) -> Var<'t, T> {
        let value = {
            let x = self.value_ref();
            let x2 = x.view().into_dimensionality::<Ix2>().expect("transpose 2-D");
            x2.t().to_owned().into_dyn()
        };
        self.unary(value, Op::Transpose)
    }

    /// 3-D convolution with zero "same" padding: output spatial dims are
    /// ceil(input/stride). Input [C_in, D, H, W], kernel
    /// [C_out, C_in, k, k, k].
    pub fn conv3d(self, kernel: Var<'t, T>, stride: usize) -> Var<'t, T> {
        let value = {
            let x = self.value_ref();
            let k = kernel.value_ref();
            conv::conv3d_forward(&x, &k, stride)
        };
        let rg = self.tape.requires_grad_of(&[self.id, kernel.id]);
        self.tape.push(
            value,
            Op::Conv3d {
                input: self.id,
                kernel: kernel.id,
                stride,
            },
            rg,
        )
    }

    /// x[C, ...] + b[C], broadcasting b over the trailing axes.
    pub fn channel_bias(self, bias: Var<'t, T>) -> Var<'t, T> {
        let value = {
            let x = self.value_ref();
            let b = bias.value_ref();
            assert_eq!(b.ndim(), 1, "channel_bias: bias must be 1-D");
            assert_eq!(
                x.shape()[0],
                b.len(),
                "channel_bias: {:?} vs bias of {}",
                x.shape(),
                b.len()
            );
            let mut out = x.clone();
            for (c, mut lane) in out.axis_iter_mut(Axis(0)).enumerate() {
                let bc = b[c];
                lane.mapv_inplace(|v| v + bc);
            }
            out
        };
        let rg = self.tape.requires_grad_of(&[self.id, bias.id]);
        self.tape.push(value, Op::ChannelBias(self.id, bias.id), rg)
    }

    /// Nearest-neighbor x2 upsampling of [C, D, H, W].
    pub fn upsample2x(self) -> Var<'t, T> {
        let value = {
            let x = self.value_ref();
            let s = x.shape();
            assert_eq!(s.len(), 4, "upsample2x expects [C, D, H, W]");
            let (c, d, h, w) = (s[0], s[1], s[2], s[3]);
            let mut out = ArrayD::<T>::zeros(IxDyn(&[c, 2 * d, 2 * h, 2 * w]));
            for ci in 0..c {
                for z in 0..2 * d {
                    for y in 0..2 * h {
                        for xidx in 0..2 * w {
                            out[[ci, z, y, xidx]] = x[[ci, z / 2, y / 2, xidx / 2]];
                        }
                    }
                }
            }
            out
        };
        self.unary(value, Op::Upsample2x)
    }

    /// Inverted dropout: in training mode each element is kept with
    /// probability 1-rate and scaled by 1/(1-rate); in eval mode this is the
    /// identity. The mask comes from the caller's seeded stream.
    pub fn dropout(self, rate: f64, train: bool, rng: &mut impl rand::Rng) -> Var<'t, T> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if !train || rate == 0.0 {
            return self;
        }
        let keep = 1.0 - rate;
        let scale = T::cast(1.0 / keep);
        let shape = self.shape();
        let mask_vec: Vec<T> = (0..shape.iter().product::<usize>())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let mask = Arc::new(ArrayD::from_shape_vec(IxDyn(&shape), mask_vec).unwrap());
        let value = &*self.value_ref() * &*mask;
        self.unary(value, |id| Op::Dropout(id, mask))
    }

    /// Interpolate feature vectors of `self` = [C, D0, D1, D2] at continuous
    /// grid positions `points` [N, 3] (axis order). Positions clamp to the
    /// boundary; the result is [N, C].
    pub fn trilinear_gather(self, points: Var<'t, T>) -> Var<'t, T> {
        let value = {
            let f = self.value_ref();
            let p = points.value_ref();
            trilinear_forward(&f, &p)
        };
        let rg = self.tape.requires_grad_of(&[self.id, points.id]);
        self.tape.push(
            value,
            Op::TrilinearGather {
                feats: self.id,
                points: points.id,
            },
            rg,
        )
    }

    /// Column-wise cross product of [3, N] matrices.
    pub fn cross_cols(self, other: Var<'t, T>) -> Var<'t, T> {
        self.binary_same_shape(other, "cross_cols");
        let value = {
            let a = self.value_ref();
            let b = other.value_ref();
            assert_eq!(a.shape()[0], 3, "cross_cols expects [3, N]");
            cross_cols_value(&a, &b)
        };
        let rg = self.tape.requires_grad_of(&[self.id, other.id]);
        self.tape.push(value, Op::CrossCols(self.id, other.id), rg)
    }

    /// Scale every column of [d, N] to unit length.
    pub fn normalize_cols(self) -> Var<'t, T> {
        let value = {
            let x = self.value_ref();
            let x2 = x.view().into_dimensionality::<Ix2>().expect("normalize_cols 2-D");
            let mut out = x2.to_owned();
            for mut col in out.columns_mut() {
                let n = col.iter().map(|v| *v * *v).sum::<T>().sqrt();
                let inv = T::one() / n;
                col.mapv_inplace(|v| v * inv);
            }
            out.into_dyn()
        };
        self.unary(value, Op::NormalizeCols)
    }

    /// Reverse pass from a scalar loss: fills `grad` for every node that
    /// requires gradient. Calling it twice without recording new forward work
    /// is an error.
    pub fn backward(self) -> crate::error::Result<()> {
        if self.tape.backward_run.get() {
            return Err(crate::numeric_err!(
                "backward called twice without re-running the forward pass"
            ));
        }
        {
            let nodes = self.tape.nodes.borrow();
            let loss = &nodes[self.id];
            assert_eq!(
                loss.value.len(),
                1,
                "backward expects a scalar loss, got shape {:?}",
                loss.value.shape()
            );
            if !loss.requires_grad {
                return Err(crate::numeric_err!(
                    "loss does not depend on any parameter (requires_grad = false)"
                ));
            }
        }
        let mut nodes = self.tape.nodes.borrow_mut();
        for n in nodes.iter_mut() {
            n.grad = None;
        }
        let seed_shape = nodes[self.id].value.raw_dim();
        nodes[self.id].grad = Some(ArrayD::from_elem(seed_shape, T::one()));

        for i in (0..=self.id).rev() {
            if !nodes[i].requires_grad || nodes[i].grad.is_none() {
                continue;
            }
            backprop_node(&mut nodes, i);
        }
        self.tape.backward_run.set(true);
        Ok(())
    }
}

impl<'t, T: Scalar> std::ops::Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs)
    }
}

impl<'t, T: Scalar> std::ops::Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs)
    }
}

impl<'t, T: Scalar> std::ops::Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs)
    }
}

impl<'t, T: Scalar> std::ops::Div for Var<'t, T> {
    type Output = Var<'t, T>;
    fn div(self, rhs: Self) -> Self::Output {
        Var::div(self, rhs)
    }
}

/// x[d, N] * S -> [d, M], iterating sparse entries row-major.
fn spmm_right_value<T: Scalar>(x: &ndarray::ArrayView2<T>, s: &Csr<T>) -> ndarray::Array2<T> {
    let d = x.nrows();
    let mut out = ndarray::Array2::<T>::zeros((d, s.n_cols()));
    for (i, j, v) in s.iter_entries() {
        for r in 0..d {
            out[[r, j]] += v * x[[r, i]];
        }
    }
    out
}

/// g[d, M] * S^T -> [d, N]: out[:, i] += S[i, j] * g[:, j].
fn spmm_right_transposed<T: Scalar>(g: &ndarray::ArrayView2<T>, s: &Csr<T>) -> ndarray::Array2<T> {
    let d = g.nrows();
    let mut out = ndarray::Array2::<T>::zeros((d, s.n_rows()));
    for (i, j, v) in s.iter_entries() {
        for r in 0..d {
            out[[r, i]] += v * g[[r, j]];
        }
    }
    out
}

fn cross_cols_value<T: Scalar>(a: &ArrayD<T>, b: &ArrayD<T>) -> ArrayD<T> {
    let n = a.shape()[1];
    let mut out = ArrayD::<T>::zeros(IxDyn(&[3, n]));
    for i in 0..n {
        let (a0, a1, a2) = (a[[0, i]], a[[1, i]], a[[2, i]]);
        let (b0, b1, b2) = (b[[0, i]], b[[1, i]], b[[2, i]]);
        out[[0, i]] = a1 * b2 - a2 * b1;
        out[[1, i]] = a2 * b0 - a0 * b2;
        out[[2, i]] = a0 * b1 - a1 * b0;
    }
    out
}

/// Shared clamp logic for the trilinear kernel: returns (i0, frac, inside)
/// for one coordinate against an axis of extent `n`; `inside` is false when
/// the coordinate was clamped (gradient w.r.t. the coordinate is zero there).
fn trilinear_cell<T: Scalar>(coord: T, n: usize) -> (usize, T, bool) {
    let max = T::cast((n - 1) as f64);
    let inside = coord > T::zero() && coord < max;
    let c = coord.max(T::zero()).min(max);
    let mut i0 = c.floor().as_f64() as usize;
    if i0 >= n - 1 {
        i0 = n.saturating_sub(2);
    }
    let frac = c - T::cast(i0 as f64);
    (i0, frac, inside)
}

fn trilinear_forward<T: Scalar>(feats: &ArrayD<T>, points: &ArrayD<T>) -> ArrayD<T> {
    let fs = feats.shape();
    assert_eq!(fs.len(), 4, "trilinear_gather: feats must be [C, D0, D1, D2]");
    let ps = points.shape();
    assert_eq!(ps.len(), 2, "trilinear_gather: points must be [N, 3]");
    assert_eq!(ps[1], 3, "trilinear_gather: points must be [N, 3]");
    let (c, d0, d1, d2) = (fs[0], fs[1], fs[2], fs[3]);
    assert!(d0 >= 2 && d1 >= 2 && d2 >= 2, "feature grid too small");
    let n = ps[0];
    let mut out = ArrayD::<T>::zeros(IxDyn(&[n, c]));
    let one = T::one();
    for i in 0..n {
        let (i0, f0, _) = trilinear_cell(points[[i, 0]], d0);
        let (i1, f1, _) = trilinear_cell(points[[i, 1]], d1);
        let (i2, f2, _) = trilinear_cell(points[[i, 2]], d2);
        for (da, wa) in [(0usize, one - f0), (1, f0)] {
            for (db, wb) in [(0usize, one - f1), (1, f1)] {
                for (dc, wc) in [(0usize, one - f2), (1, f2)] {
                    let w = wa * wb * wc;
                    for ch in 0..c {
                        out[[i, ch]] += w * feats[[ch, i0 + da, i1 + db, i2 + dc]];
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the trilinear gather w.r.t. features and point coordinates.
fn trilinear_backward<T: Scalar>(
    feats: &ArrayD<T>,
    points: &ArrayD<T>,
    g: &ArrayD<T>,
) -> (ArrayD<T>, ArrayD<T>) {
    let fs = feats.shape();
    let (c, d0, d1, d2) = (fs[0], fs[1], fs[2], fs[3]);
    let n = points.shape()[0];
    let mut gf = ArrayD::<T>::zeros(IxDyn(&[c, d0, d1, d2]));
    let mut gp = ArrayD::<T>::zeros(IxDyn(&[n, 3]));
    let one = T::one();
    for i in 0..n {
        let (i0, f0, in0) = trilinear_cell(points[[i, 0]], d0);
        let (i1, f1, in1) = trilinear_cell(points[[i, 1]], d1);
        let (i2, f2, in2) = trilinear_cell(points[[i, 2]], d2);
        let mut acc = [T::zero(); 3];
        for (da, wa, dwa) in [(0usize, one - f0, -one), (1, f0, one)] {
            for (db, wb, dwb) in [(0usize, one - f1, -one), (1, f1, one)] {
                for (dc, wc, dwc) in [(0usize, one - f2, -one), (1, f2, one)] {
                    let w = wa * wb * wc;
                    for ch in 0..c {
                        let gout = g[[i, ch]];
                        let fval = feats[[ch, i0 + da, i1 + db, i2 + dc]];
                        gf[[ch, i0 + da, i1 + db, i2 + dc]] += w * gout;
                        acc[0] += gout * fval * dwa * wb * wc;
                        acc[1] += gout * fval * wa * dwb * wc;
                        acc[2] += gout * fval * wa * wb * dwc;
                    }
                }
            }
        }
        // Clamped coordinates stop the gradient.
        gp[[i, 0]] = if in0 { acc[0] } else { T::zero() };
        gp[[i, 1]] = if in1 { acc[1] } else { T::zero() };
        gp[[i, 2]] = if in2 { acc[2] } else { T::zero() };
    }
    (gf, gp)
}

fn accumulate<T: Scalar>(slot: &mut Option<ArrayD<T>>, delta: ArrayD<T>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

/// Apply the backward rule of node `i`, accumulating into its inputs' grads.
fn backprop_node<T: Scalar>(nodes: &mut Vec<Node<T>>, i: usize) {
    let g = nodes[i].grad.clone().expect("grad present");
    // Collect (input id, delta) pairs first, then accumulate, so the borrow
    // of node i's saved data ends before we write into input slots.
    let mut deltas: Vec<(NodeId, ArrayD<T>)> = Vec::new();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            deltas.push((*a, g.clone()));
            deltas.push((*b, g));
        }
        Op::Sub(a, b) => {
            deltas.push((*a, g.clone()));
            deltas.push((*b, g.mapv(|v| -v)));
        }
        Op::Mul(a, b) => {
            deltas.push((*a, &g * &nodes[*b].value));
            deltas.push((*b, &g * &nodes[*a].value));
        }
        Op::Div(a, b) => {
            let bv = &nodes[*b].value;
            deltas.push((*a, &g / bv));
            let av = &nodes[*a].value;
            deltas.push((*b, g.mapv(|v| -v) * av / (bv * bv)));
        }
        Op::AddScalar(a) => deltas.push((*a, g)),
        Op::Scale(a, c) => deltas.push((*a, g.mapv(|v| v * *c))),
        Op::Matmul(a, b) => {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let av = nodes[*a].value.view().into_dimensionality::<Ix2>().unwrap();
            let bv = nodes[*b].value.view().into_dimensionality::<Ix2>().unwrap();
            deltas.push((*a, g2.dot(&bv.t()).into_dyn()));
            deltas.push((*b, av.t().dot(&g2).into_dyn()));
        }
        Op::SpmmRight(a, s) => {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            deltas.push((*a, spmm_right_transposed(&g2, s).into_dyn()));
        }
        Op::Relu(a) => {
            let xv = &nodes[*a].value;
            let mut d = g;
            d.zip_mut_with(xv, |gv, x| {
                if *x <= T::zero() {
                    *gv = T::zero();
                }
            });
            deltas.push((*a, d));
        }
        Op::Sigmoid(a) => {
            let y = &nodes[i].value;
            let one = T::one();
            let mut d = g;
            d.zip_mut_with(y, |gv, yv| *gv = *gv * *yv * (one - *yv));
            deltas.push((*a, d));
        }
        Op::Ln(a) => {
            let xv = &nodes[*a].value;
            deltas.push((*a, &g / xv));
        }
        Op::PowScalar(a, e) => {
            let xv = &nodes[*a].value;
            let em1 = *e - T::one();
            let mut d = g;
            d.zip_mut_with(xv, |gv, x| *gv = *gv * *e * x.powf(em1));
            deltas.push((*a, d));
        }
        Op::Abs(a) => {
            let xv = &nodes[*a].value;
            let mut d = g;
            d.zip_mut_with(xv, |gv, x| {
                *gv = if *x > T::zero() {
                    *gv
                } else if *x < T::zero() {
                    -*gv
                } else {
                    T::zero()
                }
            });
            deltas.push((*a, d));
        }
        Op::ClampMin(a, c) => {
            let xv = &nodes[*a].value;
            let mut d = g;
            d.zip_mut_with(xv, |gv, x| {
                if *x < *c {
                    *gv = T::zero();
                }
            });
            deltas.push((*a, d));
        }
        Op::Sum(a) => {
            let gs = *g.iter().next().unwrap();
            let shape = nodes[*a].value.raw_dim();
            deltas.push((*a, ArrayD::from_elem(shape, gs)));
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.len();
            let gs = *g.iter().next().unwrap() / T::cast(n as f64);
            let shape = nodes[*a].value.raw_dim();
            deltas.push((*a, ArrayD::from_elem(shape, gs)));
        }
        Op::SumAxis(a, ax) => {
            let shape = nodes[*a].value.raw_dim();
            let expanded = g.insert_axis(Axis(*ax));
            let d = expanded.broadcast(shape.clone()).unwrap().to_owned();
            deltas.push((*a, d));
        }
        Op::Concat(ids, axis) => {
            let ids = ids.clone();
            let axis = *axis;
            let mut offset = 0;
            for id in ids {
                let extent = nodes[id].value.shape()[axis];
                let piece = g
                    .slice_axis(Axis(axis), Slice::from(offset..offset + extent))
                    .to_owned();
                deltas.push((id, piece));
                offset += extent;
            }
        }
        Op::SliceCols(a, lo, hi) => {
            let shape = nodes[*a].value.raw_dim();
            let mut d = ArrayD::<T>::zeros(shape);
            d.slice_axis_mut(Axis(1), Slice::from(*lo..*hi))
                .assign(&g);
            deltas.push((*a, d));
        }
        Op::GatherCols(a, idx) => {
            let shape = nodes[*a].value.raw_dim();
            let mut d = ArrayD::<T>::zeros(shape);
            {
                let mut d2 = d.view_mut().into_dimensionality::<Ix2>().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                for (col, &j) in idx.iter().enumerate() {
                    let gcol = g2.column(col);
                    let mut dcol = d2.column_mut(j);
                    dcol += &gcol;
                }
            }
            deltas.push((*a, d));
        }
        Op::Transpose(a) => {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            deltas.push((*a, g2.t().to_owned().into_dyn()));
        }
        Op::Conv3d {
            input,
            kernel,
            stride,
        } => {
            let (gi, gk) = conv::conv3d_backward(
                &nodes[*input].value,
                &nodes[*kernel].value,
                &g,
                *stride,
            );
            deltas.push((*input, gi));
            deltas.push((*kernel, gk));
        }
        Op::ChannelBias(a, b) => {
            deltas.push((*a, g.clone()));
            let c = nodes[*b].value.len();
            let mut gb = ndarray::Array1::<T>::zeros(c);
            for (ch, lane) in g.axis_iter(Axis(0)).enumerate() {
                gb[ch] = lane.iter().copied().sum();
            }
            deltas.push((*b, gb.into_dyn()));
        }
        Op::Upsample2x(a) => {
            let s = nodes[*a].value.shape().to_vec();
            let (c, d, h, w) = (s[0], s[1], s[2], s[3]);
            let mut d_arr = ArrayD::<T>::zeros(IxDyn(&s));
            for ci in 0..c {
                for z in 0..2 * d {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            d_arr[[ci, z / 2, y / 2, xx / 2]] += g[[ci, z, y, xx]];
                        }
                    }
                }
            }
            deltas.push((*a, d_arr));
        }
        Op::Dropout(a, mask) => {
            deltas.push((*a, &g * &**mask));
        }
        Op::TrilinearGather { feats, points } => {
            let (gf, gp) = trilinear_backward(&nodes[*feats].value, &nodes[*points].value, &g);
            deltas.push((*feats, gf));
            deltas.push((*points, gp));
        }
        Op::CrossCols(a, b) => {
            // grad_a = b x g, grad_b = g x a (column-wise)
            let ga = cross_cols_value(&nodes[*b].value, &g);
            let gb = cross_cols_value(&g, &nodes[*a].value);
            deltas.push((*a, ga));
            deltas.push((*b, gb));
        }
        Op::NormalizeCols(a) => {
            let x = nodes[*a].value.view().into_dimensionality::<Ix2>().unwrap();
            let y = nodes[i].value.view().into_dimensionality::<Ix2>().unwrap();
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let (d, n) = (x.nrows(), x.ncols());
            let mut out = ndarray::Array2::<T>::zeros((d, n));
            for col in 0..n {
                let norm = x.column(col).iter().map(|v| *v * *v).sum::<T>().sqrt();
                let ycol = y.column(col);
                let gcol = g2.column(col);
                let dotprod: T = ycol.iter().zip(gcol.iter()).map(|(a, b)| *a * *b).sum();
                for r in 0..d {
                    out[[r, col]] = (gcol[r] - ycol[r] * dotprod) / norm;
                }
            }
            deltas.push((*a, out.into_dyn()));
        }
    }
    for (id, delta) in deltas {
        if nodes[id].requires_grad {
            accumulate(&mut nodes[id].grad, delta);
        }
    }
}
