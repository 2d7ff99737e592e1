use super::gradcheck::assert_gradients;
use super::*;
use crate::rng::substream;
use crate::sparse::Csr;
use approx::assert_relative_eq;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use std::sync::Arc;

fn rand_arr(shape: &[usize], seed: u64, lo: f64, hi: f64) -> ArrayD<f64> {
    let mut rng = substream(seed, "tensor-tests");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Direct 7-loop convolution, the oracle for the im2col path.
fn conv3d_direct(x: &ArrayD<f64>, k: &ArrayD<f64>, stride: usize) -> ArrayD<f64> {
    let (cin, d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kk) = (k.shape()[0], k.shape()[2]);
    let out_dims = conv3d_output_shape([d, h, w], kk, stride);
    let pad = |n: usize, o: usize| -> usize { (((o - 1) * stride + kk).saturating_sub(n)) / 2 };
    let (pz, py, px) = (pad(d, out_dims[0]), pad(h, out_dims[1]), pad(w, out_dims[2]));
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[cout, out_dims[0], out_dims[1], out_dims[2]]));
    for co in 0..cout {
        for oz in 0..out_dims[0] {
            for oy in 0..out_dims[1] {
                for ox in 0..out_dims[2] {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for dz in 0..kk {
                            for dy in 0..kk {
                                for dx in 0..kk {
                                    let z = (oz * stride + dz) as isize - pz as isize;
                                    let y = (oy * stride + dy) as isize - py as isize;
                                    let xx = (ox * stride + dx) as isize - px as isize;
                                    if z >= 0
                                        && (z as usize) < d
                                        && y >= 0
                                        && (y as usize) < h
                                        && xx >= 0
                                        && (xx as usize) < w
                                    {
                                        acc += x[[ci, z as usize, y as usize, xx as usize]]
                                            * k[[co, ci, dz, dy, dx]];
                                    }
                                }
                            }
                        }
                    }
                    out[[co, oz, oy, ox]] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn relu_matches_example() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(ArrayD::from_shape_vec(IxDyn(&[3]), vec![-1.0, 0.0, 2.0]).unwrap());
    let y = x.relu();
    assert_eq!(y.value().as_slice().unwrap(), &[0.0, 0.0, 2.0]);
}

#[test]
fn spmm_identity_is_identity() {
    let n = 4;
    let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
    let ident = Arc::new(Csr::from_rows(n, &rows));
    let tape = Tape::<f64>::new();
    let x = tape.constant(rand_arr(&[3, n], 1, -2.0, 2.0));
    let y = x.spmm_right(&ident);
    assert_eq!(x.value(), y.value());
}

#[test]
fn conv3d_matches_direct_oracle() {
    for (seed, stride) in [(10u64, 1usize), (11, 2), (12, 1), (13, 2)] {
        let x = rand_arr(&[2, 5, 4, 6], seed, -1.0, 1.0);
        let k = rand_arr(&[3, 2, 3, 3, 3], seed + 100, -1.0, 1.0);
        let tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(k.clone());
        let y = xv.conv3d(kv, stride);
        let want = conv3d_direct(&x, &k, stride);
        assert_eq!(y.shape(), want.shape().to_vec());
        for (a, b) in y.value().iter().zip(want.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn conv3d_constant_volume_sum_one_kernel() {
    // A sum-1 kernel over a constant field reproduces the constant away from
    // the zero-padded border.
    let c = 0.7;
    let x = ArrayD::from_elem(IxDyn(&[1, 6, 6, 6]), c);
    let mut k = rand_arr(&[1, 1, 3, 3, 3], 5, 0.1, 1.0);
    let total: f64 = k.iter().sum();
    k.mapv_inplace(|v| v / total);
    let tape = Tape::<f64>::new();
    let y = tape.constant(x).conv3d(tape.constant(k), 1);
    let yv = y.value();
    for z in 1..5 {
        for yy in 1..5 {
            for xx in 1..5 {
                assert_relative_eq!(yv[[0, z, yy, xx]], c, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn backward_of_linear_form_is_outer_product_structure() {
    // loss = sum(W x): dW[r, c] = sum of row c of x.
    let w0 = rand_arr(&[3, 4], 2, -1.0, 1.0);
    let x0 = rand_arr(&[4, 2], 3, -1.0, 1.0);
    let tape = Tape::<f64>::new();
    let w = tape.leaf(w0, true);
    let x = tape.constant(x0.clone());
    let loss = w.matmul(x).sum();
    loss.backward().unwrap();
    let gw = w.grad().unwrap();
    let x2 = x0.view().into_dimensionality::<ndarray::Ix2>().unwrap();
    for r in 0..3 {
        for c in 0..4 {
            let expect: f64 = x2.row(c).sum();
            assert_relative_eq!(gw[[r, c]], expect, epsilon = 1e-12);
        }
    }
}

#[test]
fn grad_of_unused_parameter_is_absent() {
    let tape = Tape::<f64>::new();
    let used = tape.leaf(rand_arr(&[3], 4, -1.0, 1.0), true);
    let unused = tape.leaf(rand_arr(&[3], 5, -1.0, 1.0), true);
    let loss = used.mul(used).sum();
    loss.backward().unwrap();
    assert!(used.grad().is_some());
    assert!(unused.grad().is_none());
}

#[test]
fn backward_twice_without_reforward_errors() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(rand_arr(&[3], 6, -1.0, 1.0), true);
    let loss = x.sum();
    loss.backward().unwrap();
    assert!(loss.backward().is_err());
    // New forward work re-arms it.
    let loss2 = x.mul(x).sum();
    loss2.backward().unwrap();
}

#[test]
fn backward_is_linear() {
    // grad(a f + b g) = a grad(f) + b grad(g)
    let x0 = rand_arr(&[4], 7, 0.5, 2.0);
    let (a, b) = (2.5, -1.25);

    let grad_of = |build: &dyn for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>| -> ArrayD<f64> {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(x0.clone(), true);
        build(x).backward().unwrap();
        x.grad().unwrap()
    };
    let gf = grad_of(&|x| x.mul(x).sum());
    let gg = grad_of(&|x| x.ln().sum());
    let gsum = grad_of(&|x| {
        let f = x.mul(x).sum().scale(a);
        let g = x.ln().sum().scale(b);
        f.add(g)
    });
    for i in 0..4 {
        assert_relative_eq!(gsum[[i]], a * gf[[i]] + b * gg[[i]], epsilon = 1e-12);
    }
}

#[test]
fn dropout_eval_mode_is_identity() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(rand_arr(&[10], 8, -1.0, 1.0));
    let mut rng = substream(0, "dropout");
    let y = x.dropout(0.5, false, &mut rng);
    assert_eq!(x.id(), y.id(), "eval-mode dropout must be a no-op");
}

#[test]
fn dropout_train_mode_scales_kept_elements() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(ArrayD::from_elem(IxDyn(&[1000]), 1.0));
    let mut rng = substream(1, "dropout");
    let y = x.dropout(0.25, true, &mut rng);
    let yv = y.value();
    for v in yv.iter() {
        assert!(*v == 0.0 || (*v - 1.0 / 0.75).abs() < 1e-12);
    }
    let kept = yv.iter().filter(|v| **v != 0.0).count();
    assert!((650..850).contains(&kept), "kept {kept} of 1000 at rate 0.25");
}

#[test]
#[should_panic(expected = "matmul: shape mismatch")]
fn matmul_shape_mismatch_names_shapes() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(rand_arr(&[3, 4], 9, -1.0, 1.0));
    let b = tape.constant(rand_arr(&[3, 4], 10, -1.0, 1.0));
    let _ = a.matmul(b);
}

#[test]
fn checkpoint_roundtrip_preserves_bits_and_extra() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.vckp");
    let mut store = ParamStore::<f32>::new();
    let mut rng = substream(3, "ckpt");
    store.add_glorot("enc.w", &[4, 3], 3, 4, &mut rng);
    store.add_zeros("enc.b", &[4]);
    let extra = serde_json::json!({"levels": 3, "filters": [8, 16, 32]});
    write_checkpoint(&path, &store, &extra).unwrap();
    let back = read_checkpoint::<f32>(&path).unwrap();
    assert_eq!(back.extra, extra);
    assert_eq!(back.params.len(), 2);
    for ((n0, a0), (n1, a1)) in store.iter().zip(back.params.iter()) {
        assert_eq!(n0, n1);
        assert_eq!(a0, a1);
    }
    // Wrong precision is refused.
    assert!(read_checkpoint::<f64>(&path).is_err());
}

// ---- finite-difference sweeps -------------------------------------------

#[test]
fn fd_elementwise_and_reductions() {
    for seed in 0..5u64 {
        let x = rand_arr(&[3, 4], 20 + seed, 0.3, 2.0);
        let y = rand_arr(&[3, 4], 40 + seed, 0.3, 2.0);
        assert_gradients(&[x.clone(), y.clone()], |_, v| v[0].add(v[1]).sum());
        assert_gradients(&[x.clone(), y.clone()], |_, v| v[0].sub(v[1]).mean());
        assert_gradients(&[x.clone(), y.clone()], |_, v| v[0].mul(v[1]).sum());
        assert_gradients(&[x.clone(), y.clone()], |_, v| v[0].div(v[1]).sum());
        assert_gradients(&[x.clone()], |_, v| v[0].scale(1.7).add_scalar(0.3).sum());
        assert_gradients(&[x.clone()], |_, v| v[0].ln().sum());
        assert_gradients(&[x.clone()], |_, v| v[0].sigmoid().sum());
        assert_gradients(&[x.clone()], |_, v| v[0].pow_scalar(1.3).sum());
        assert_gradients(&[x.clone()], |_, v| v[0].sum_axis(0).pow_scalar(2.0).sum());
        assert_gradients(&[x.clone()], |_, v| v[0].sum_axis(1).mean());
        // relu / abs / clamp_min away from their kinks
        let z = rand_arr(&[3, 4], 60 + seed, 0.2, 1.0);
        let zneg = rand_arr(&[3, 4], 80 + seed, -1.0, -0.2);
        assert_gradients(&[z.clone()], |_, v| v[0].relu().sum());
        assert_gradients(&[zneg.clone()], |_, v| v[0].relu().sum());
        assert_gradients(&[zneg.clone()], |_, v| v[0].abs().sum());
        assert_gradients(&[z.clone()], |_, v| v[0].clamp_min(0.1).sum());
        assert_gradients(&[zneg], |_, v| v[0].clamp_min(0.1).sum());
    }
}

#[test]
fn fd_matmul_concat_gather_slice_transpose() {
    for seed in 0..5u64 {
        let a = rand_arr(&[3, 4], 100 + seed, -1.0, 1.0);
        let b = rand_arr(&[4, 2], 120 + seed, -1.0, 1.0);
        assert_gradients(&[a.clone(), b.clone()], |_, v| v[0].matmul(v[1]).sum());
        let c = rand_arr(&[3, 4], 140 + seed, -1.0, 1.0);
        assert_gradients(&[a.clone(), c.clone()], |t, v| {
            t.concat(&[v[0], v[1]], 1).pow_scalar(2.0).sum()
        });
        assert_gradients(&[a.clone(), c.clone()], |t, v| {
            t.concat(&[v[0], v[1]], 0).pow_scalar(2.0).sum()
        });
        let idx = Arc::new(vec![0usize, 2, 2, 3, 1]);
        assert_gradients(&[a.clone()], |_, v| {
            v[0].gather_cols(&idx).pow_scalar(2.0).sum()
        });
        assert_gradients(&[a.clone()], |_, v| v[0].slice_cols(1, 3).pow_scalar(2.0).sum());
        assert_gradients(&[a.clone()], |_, v| v[0].transpose().pow_scalar(3.0).sum());
    }
}

#[test]
fn fd_sparse_dense_matmul() {
    // Random sparse 6x6 operators, deliberately asymmetric.
    for seed in 0..5u64 {
        let mut rng = substream(200 + seed, "spmm");
        let rows: Vec<Vec<(usize, f64)>> = (0..6)
            .map(|_| {
                let mut row = Vec::new();
                for c in 0..6 {
                    if rng.random::<f64>() < 0.4 {
                        row.push((c, rng.random_range(-1.0..1.0)));
                    }
                }
                row
            })
            .collect();
        let s = Arc::new(Csr::from_rows(6, &rows));
        let x = rand_arr(&[3, 6], 220 + seed, -1.0, 1.0);
        assert_gradients(&[x], |_, v| v[0].spmm_right(&s).pow_scalar(2.0).sum());
    }
}

#[test]
fn fd_conv3d_bias_upsample() {
    for seed in 0..5u64 {
        let x = rand_arr(&[2, 4, 4, 4], 300 + seed, -1.0, 1.0);
        let k = rand_arr(&[3, 2, 3, 3, 3], 320 + seed, -0.5, 0.5);
        let b = rand_arr(&[3], 340 + seed, -0.5, 0.5);
        for stride in [1usize, 2] {
            assert_gradients(&[x.clone(), k.clone(), b.clone()], |_, v| {
                v[0].conv3d(v[1], stride)
                    .channel_bias(v[2])
                    .pow_scalar(2.0)
                    .sum()
            });
        }
        assert_gradients(&[x.clone()], |_, v| v[0].upsample2x().pow_scalar(2.0).sum());
        // 1x1x1 kernels (decoder path)
        let k1 = rand_arr(&[4, 2, 1, 1, 1], 360 + seed, -0.5, 0.5);
        assert_gradients(&[x, k1], |_, v| v[0].conv3d(v[1], 1).pow_scalar(2.0).sum());
    }
}

#[test]
fn fd_dropout_with_replayed_mask() {
    for seed in 0..5u64 {
        let x = rand_arr(&[4, 5], 400 + seed, -1.0, 1.0);
        assert_gradients(&[x], |_, v| {
            // The mask stream restarts identically on every evaluation, so
            // analytic and numeric passes see the same mask.
            let mut rng = substream(68 + seed, "fd-dropout");
            v[0].dropout(0.3, true, &mut rng).pow_scalar(2.0).sum()
        });
    }
}

#[test]
fn fd_trilinear_gather() {
    for seed in 0..5u64 {
        let feats = rand_arr(&[2, 4, 5, 4], 500 + seed, -1.0, 1.0);
        // Interior points with fractional parts away from cell boundaries.
        let mut rng = substream(520 + seed, "points");
        let n = 6;
        let mut pts = Vec::with_capacity(n * 3);
        for _ in 0..n {
            for extent in [4usize, 5, 4] {
                let cell = rng.random_range(0..extent - 1) as f64;
                pts.push(cell + rng.random_range(0.2..0.8));
            }
        }
        let points = ArrayD::from_shape_vec(IxDyn(&[n, 3]), pts).unwrap();
        assert_gradients(&[feats, points], |_, v| {
            v[0].trilinear_gather(v[1]).pow_scalar(2.0).sum()
        });
    }
}

#[test]
fn fd_cross_and_normalize() {
    for seed in 0..5u64 {
        let a = rand_arr(&[3, 5], 600 + seed, 0.5, 1.5);
        let b = rand_arr(&[3, 5], 620 + seed, -1.5, -0.5);
        assert_gradients(&[a.clone(), b.clone()], |_, v| {
            v[0].cross_cols(v[1]).pow_scalar(2.0).sum()
        });
        assert_gradients(&[a.clone()], |_, v| {
            v[0].normalize_cols().pow_scalar(2.0).sum()
        });
        // Through the full normal pipeline: normalize(cross(a, b)).
        assert_gradients(&[a, b], |_, v| {
            v[0].cross_cols(v[1]).normalize_cols().pow_scalar(2.0).sum()
        });
    }
}

#[test]
fn trilinear_gather_examples() {
    let feats = rand_arr(&[3, 4, 4, 4], 700, -1.0, 1.0);
    let tape = Tape::<f64>::new();
    let f = tape.constant(feats.clone());
    // Exactly at a voxel center.
    let p = tape.constant(ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![2.0, 1.0, 3.0]).unwrap());
    let out = f.trilinear_gather(p).value();
    for c in 0..3 {
        assert_relative_eq!(out[[0, c]], feats[[c, 2, 1, 3]], epsilon = 1e-12);
    }
    // Midpoint of two adjacent centers.
    let p = tape.constant(ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![1.5, 2.0, 2.0]).unwrap());
    let out = f.trilinear_gather(p).value();
    for c in 0..3 {
        let avg = 0.5 * (feats[[c, 1, 2, 2]] + feats[[c, 2, 2, 2]]);
        assert_relative_eq!(out[[0, c]], avg, epsilon = 1e-12);
    }
    // Far outside clamps to the boundary value.
    let p = tape.constant(ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![-10.0, 50.0, 1.0]).unwrap());
    let out = f.trilinear_gather(p).value();
    for c in 0..3 {
        assert_relative_eq!(out[[0, c]], feats[[c, 0, 3, 1]], epsilon = 1e-12);
    }
}

#[test]
fn fd_composite_graph_conv_like_expression() {
    // sigma(W0 f + W1 (f Lscaled)) in one expression, the shape the GCN uses.
    let lap = {
        let mesh = crate::mesh::icosphere(0, [0.0; 3], 1.0, 0).unwrap();
        let op =
            crate::mesh::build_graph_operator(&mesh, crate::mesh::LambdaMode::FixedTwo).unwrap();
        Arc::new(op.laplacian_scaled().map_values(|v| v))
    };
    for seed in 0..3u64 {
        let f = rand_arr(&[2, 12], 800 + seed, -1.0, 1.0);
        let w0 = rand_arr(&[3, 2], 820 + seed, -1.0, 1.0);
        let w1 = rand_arr(&[3, 2], 840 + seed, -1.0, 1.0);
        assert_gradients(&[f, w0, w1], |_, v| {
            let spread = v[0].spmm_right(&lap);
            v[1].matmul(v[0]).add(v[2].matmul(spread)).sigmoid().sum()
        });
    }
}
