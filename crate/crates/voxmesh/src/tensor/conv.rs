//! 3-D convolution kernels: im2col + GEMM forward, col2im backward.
//!
//! Padding is zero "same" padding: output spatial extent is
//! ceil(input/stride), with the total pad split low/high as
//! (pad/2, pad - pad/2). The im2col matrix is recomputed in the backward pass
//! instead of being saved on the tape; it is cheap next to the GEMM.

use super::Scalar;
use ndarray::{Array2, ArrayD, Ix2, Ix4, Ix5, IxDyn};

/// Output spatial dims and low-side padding for one axis.
fn axis_geometry(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let pad_total = ((out - 1) * stride + k).saturating_sub(input);
    (out, pad_total / 2)
}

/// Output spatial shape of a same-padded conv3d.
pub fn conv3d_output_shape(input: [usize; 3], k: usize, stride: usize) -> [usize; 3] {
    [
        axis_geometry(input[0], k, stride).0,
        axis_geometry(input[1], k, stride).0,
        axis_geometry(input[2], k, stride).0,
    ]
}

/// im2col with rows = output positions and columns = (ci, dz, dy, dx).
fn im2col<T: Scalar>(
    x: &ndarray::ArrayView4<T>,
    k: usize,
    stride: usize,
) -> (Array2<T>, [usize; 3]) {
    let (cin, d, h, w) = x.dim();
    let (od, pz) = axis_geometry(d, k, stride);
    let (oh, py) = axis_geometry(h, k, stride);
    let (ow, px) = axis_geometry(w, k, stride);
    let ck = cin * k * k * k;
    let mut cols = Array2::<T>::zeros((od * oh * ow, ck));
    for oz in 0..od {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (oz * oh + oy) * ow + ox;
                let z0 = (oz * stride) as isize - pz as isize;
                let y0 = (oy * stride) as isize - py as isize;
                let x0 = (ox * stride) as isize - px as isize;
                let mut col = 0;
                for ci in 0..cin {
                    for dz in 0..k {
                        let z = z0 + dz as isize;
                        for dy in 0..k {
                            let y = y0 + dy as isize;
                            for dx in 0..k {
                                let xx = x0 + dx as isize;
                                if z >= 0
                                    && (z as usize) < d
                                    && y >= 0
                                    && (y as usize) < h
                                    && xx >= 0
                                    && (xx as usize) < w
                                {
                                    cols[[row, col]] = x[[ci, z as usize, y as usize, xx as usize]];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    (cols, [od, oh, ow])
}

pub fn conv3d_forward<T: Scalar>(x: &ArrayD<T>, kernel: &ArrayD<T>, stride: usize) -> ArrayD<T> {
    let x4 = x
        .view()
        .into_dimensionality::<Ix4>()
        .expect("conv3d input must be [C_in, D, H, W]");
    let k5 = kernel
        .view()
        .into_dimensionality::<Ix5>()
        .expect("conv3d kernel must be [C_out, C_in, k, k, k]");
    let (cout, cin_k, kd, kh, kw) = k5.dim();
    assert!(
        kd == kh && kh == kw,
        "conv3d: only cubic kernels supported, got {kd}x{kh}x{kw}"
    );
    assert_eq!(
        x4.dim().0,
        cin_k,
        "conv3d: input channels {:?} vs kernel {:?}",
        x.shape(),
        kernel.shape()
    );
    assert!(stride >= 1, "conv3d: stride must be >= 1");
    let k = kd;
    let (cols, out_dims) = im2col(&x4, k, stride);
    let ck = cin_k * k * k * k;
    let kmat = k5
        .into_shape_with_order((cout, ck))
        .expect("kernel reshape");
    // [C_out, ck] x [ck, on]
    let out_mat = kmat.dot(&cols.t());
    out_mat
        .into_shape_with_order(IxDyn(&[cout, out_dims[0], out_dims[1], out_dims[2]]))
        .expect("conv output reshape")
}

pub fn conv3d_backward<T: Scalar>(
    x: &ArrayD<T>,
    kernel: &ArrayD<T>,
    g: &ArrayD<T>,
    stride: usize,
) -> (ArrayD<T>, ArrayD<T>) {
    let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
    let k5 = kernel.view().into_dimensionality::<Ix5>().unwrap();
    let (cout, cin, k, _, _) = k5.dim();
    let (_, d, h, w) = x4.dim();
    let ck = cin * k * k * k;

    let (cols, out_dims) = im2col(&x4, k, stride);
    let on = out_dims[0] * out_dims[1] * out_dims[2];
    let g_std = g.as_standard_layout();
    let gmat = g_std
        .view()
        .into_shape_with_order((cout, on))
        .expect("grad reshape")
        .into_dimensionality::<Ix2>()
        .unwrap();

    // d kernel = g [C_out, on] x cols [on, ck]
    let gk = gmat.dot(&cols);
    let gk = gk
        .into_shape_with_order(IxDyn(&[cout, cin, k, k, k]))
        .expect("kernel grad reshape");

    // d cols = g^T [on, C_out] x kmat [C_out, ck]
    let kmat = k5.into_shape_with_order((cout, ck)).expect("kernel reshape");
    let gcols = gmat.t().dot(&kmat);

    // col2im scatter-add
    let (od, oh, ow) = (out_dims[0], out_dims[1], out_dims[2]);
    let (_, pz) = (0, axis_geometry(d, k, stride).1);
    let py = axis_geometry(h, k, stride).1;
    let px = axis_geometry(w, k, stride).1;
    let mut gx = ndarray::Array4::<T>::zeros((cin, d, h, w));
    for oz in 0..od {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (oz * oh + oy) * ow + ox;
                let z0 = (oz * stride) as isize - pz as isize;
                let y0 = (oy * stride) as isize - py as isize;
                let x0 = (ox * stride) as isize - px as isize;
                let mut col = 0;
                for ci in 0..cin {
                    for dz in 0..k {
                        let z = z0 + dz as isize;
                        for dy in 0..k {
                            let y = y0 + dy as isize;
                            for dx in 0..k {
                                let xx = x0 + dx as isize;
                                if z >= 0
                                    && (z as usize) < d
                                    && y >= 0
                                    && (y as usize) < h
                                    && xx >= 0
                                    && (xx as usize) < w
                                {
                                    gx[[ci, z as usize, y as usize, xx as usize]] +=
                                        gcols[[row, col]];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx.into_dyn(), gk)
}
