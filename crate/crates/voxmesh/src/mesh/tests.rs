use super::*;
use crate::geom;
use approx::assert_relative_eq;
use rand::Rng;

fn single_triangle() -> TriMesh {
    TriMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[0, 1, 2]],
        0,
    )
    .unwrap()
}

/// Dense symmetric eigenvalues, sorted ascending. Oracle only.
fn dense_eigenvalues(m: &ndarray::Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let mut eigs: Vec<f64> = dm.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

#[test]
fn path_graph_combinatorial_laplacian() {
    let op = GraphOperator::from_neighbor_lists(&[vec![1], vec![0]], LambdaMode::FixedTwo).unwrap();
    let l = op.laplacian_combinatorial().to_dense();
    assert_eq!(l[[0, 0]], 1.0);
    assert_eq!(l[[0, 1]], -1.0);
    assert_eq!(l[[1, 0]], -1.0);
    assert_eq!(l[[1, 1]], 1.0);
}

#[test]
fn triangle_laplacian_rows_sum_to_zero() {
    let op = build_graph_operator(&single_triangle(), LambdaMode::FixedTwo).unwrap();
    let l = op.laplacian_combinatorial().to_dense();
    for i in 0..3 {
        assert_relative_eq!(l.row(i).sum(), 0.0, epsilon = 1e-15);
    }
}

#[test]
fn complete_graph_3_normalized_spectrum() {
    // K3 = single triangle; oracle eigenvalues of the 3x3 L_norm.
    let op = build_graph_operator(&single_triangle(), LambdaMode::FixedTwo).unwrap();
    let eigs = dense_eigenvalues(&op.laplacian_normalized().to_dense());
    assert_relative_eq!(eigs[0], 0.0, epsilon = 1e-12);
    assert_relative_eq!(eigs[1], 1.5, epsilon = 1e-12);
    assert_relative_eq!(eigs[2], 1.5, epsilon = 1e-12);
}

#[test]
fn fixed_two_lambda_is_exactly_two() {
    let mesh = icosphere(1, [0.0; 3], 1.0, 0).unwrap();
    let op = build_graph_operator(&mesh, LambdaMode::FixedTwo).unwrap();
    assert_eq!(op.lambda_max(), 2.0);
}

#[test]
fn power_iteration_close_to_dense_top_eigenvalue() {
    // The top of the sphere-graph spectrum is clustered, so plain power
    // iteration converges slowly; 1e-3 relative is plenty for scaling.
    let mesh = icosphere(1, [0.0; 3], 1.0, 0).unwrap();
    let op = build_graph_operator(&mesh, LambdaMode::PowerIteration).unwrap();
    let eigs = dense_eigenvalues(&op.laplacian_normalized().to_dense());
    let top = eigs.last().unwrap();
    assert_relative_eq!(op.lambda_max(), *top, max_relative = 1e-3);
    assert!(op.lambda_max() <= 2.0 + 1e-9);
}

#[test]
fn operator_invariants_on_small_meshes() {
    for s in 0..3u32 {
        let mesh = icosphere(s, [0.0; 3], 1.0, 0).unwrap();
        assert!(mesh.vertex_count() <= 200);
        let op = build_graph_operator(&mesh, LambdaMode::FixedTwo).unwrap();
        let a = op.adjacency().to_dense();
        let lnorm = op.laplacian_normalized().to_dense();
        let lscaled = op.laplacian_scaled().to_dense();
        let n = mesh.vertex_count();
        for i in 0..n {
            assert_eq!(a[[i, i]], 0.0);
            for j in 0..n {
                assert_eq!(a[[i, j]], a[[j, i]]);
                assert_relative_eq!(lnorm[[i, j]], lnorm[[j, i]], epsilon = 1e-15);
                assert_relative_eq!(lscaled[[i, j]], lscaled[[j, i]], epsilon = 1e-15);
                // scaled = 2/lambda * lnorm - I, entrywise
                let expect = 2.0 / op.lambda_max() * lnorm[[i, j]] - if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(lscaled[[i, j]], expect, epsilon = 1e-15);
            }
            // D_ii = sum_j A_ji
            assert_eq!(op.degree()[i], a.column(i).sum());
        }
        let eigs = dense_eigenvalues(&lnorm);
        assert!(eigs[0] >= -1e-9, "spectrum below 0: {}", eigs[0]);
        assert!(
            *eigs.last().unwrap() <= 2.0 + 1e-9,
            "spectrum above 2: {}",
            eigs.last().unwrap()
        );
    }
}

#[test]
fn disconnected_graph_reports_component_count() {
    let err = GraphOperator::from_neighbor_lists(
        &[vec![1], vec![0], vec![3], vec![2]],
        LambdaMode::FixedTwo,
    )
    .unwrap_err();
    assert!(err.to_string().contains("2 components"), "{err}");
}

#[test]
fn isolated_vertex_is_an_error() {
    let err = GraphOperator::from_neighbor_lists(
        &[vec![1], vec![0], vec![]],
        LambdaMode::FixedTwo,
    )
    .unwrap_err();
    assert!(err.to_string().contains("isolated"), "{err}");
}

#[test]
fn icosphere_counts_and_topology() {
    let ico = icosphere(0, [0.0; 3], 1.0, 0).unwrap();
    assert_eq!(ico.vertex_count(), 12);
    assert_eq!(ico.face_count(), 20);
    for s in [0u32, 1, 2, 3] {
        let m = icosphere(s, [0.0; 3], 1.0, 0).unwrap();
        assert_eq!(m.vertex_count(), 10 * 4usize.pow(s) + 2);
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0, "orientation must be outward CCW");
    }
    let m5 = icosphere(5, [0.0; 3], 1.0, 0).unwrap();
    assert_eq!(m5.vertex_count(), 10242);
}

#[test]
fn icosphere_vertices_on_sphere() {
    let c = [1.0, -2.0, 0.5];
    let r = 3.7;
    let m = icosphere(3, c, r, 0).unwrap();
    for v in m.vertices() {
        assert_relative_eq!(geom::dist(*v, c), r, max_relative = 1e-9);
    }
}

#[test]
fn icosphere_rejects_bad_arguments() {
    assert!(icosphere(0, [0.0; 3], 0.0, 0).is_err());
    assert!(icosphere(0, [0.0; 3], -1.0, 0).is_err());
    assert!(icosphere(8, [0.0; 3], 1.0, 0).is_err());
}

#[test]
fn sphere_normals_are_radial() {
    // Pointwise normal estimates on irregular rings are O(h) in Euclidean
    // distance (measured 1.2e-2 at this resolution); agreement is asserted in
    // the normal-error metric 1 - <n, v>, where it is far below 1e-3.
    let m = icosphere(3, [0.0; 3], 1.0, 0).unwrap();
    let normals = m.vertex_normals().unwrap();
    for (v, n) in m.vertices().iter().zip(&normals) {
        assert_relative_eq!(geom::norm(*n), 1.0, epsilon = 1e-9);
        assert!(
            1.0 - geom::dot(*v, *n) < 1e-3,
            "normal/position mismatch: 1-dot = {}",
            1.0 - geom::dot(*v, *n)
        );
    }
}

#[test]
fn planar_triangle_normals_point_up() {
    let normals = single_triangle().vertex_normals().unwrap();
    for n in normals {
        assert_relative_eq!(n[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(n[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(n[2], 1.0, epsilon = 1e-15);
    }
}

#[test]
fn normals_scale_invariant() {
    let a = icosphere(2, [0.0; 3], 1.0, 0).unwrap();
    let b = icosphere(2, [0.0; 3], 5.0, 0).unwrap();
    let na = a.vertex_normals().unwrap();
    let nb = b.vertex_normals().unwrap();
    for (x, y) in na.iter().zip(&nb) {
        assert!(geom::dist(*x, *y) < 1e-12);
    }
}

#[test]
fn normals_rotation_equivariant() {
    // Rotation about z by 0.7 rad, then about x by -0.3 rad.
    let rot = |p: geom::Vec3| -> geom::Vec3 {
        let (s1, c1) = 0.7f64.sin_cos();
        let q = [c1 * p[0] - s1 * p[1], s1 * p[0] + c1 * p[1], p[2]];
        let (s2, c2) = (-0.3f64).sin_cos();
        [q[0], c2 * q[1] - s2 * q[2], s2 * q[1] + c2 * q[2]]
    };
    let m = icosphere(2, [0.0; 3], 1.0, 0).unwrap();
    let rotated = m.map_vertices(rot);
    let n0 = m.vertex_normals().unwrap();
    let n1 = rotated.vertex_normals().unwrap();
    for (a, b) in n0.iter().zip(&n1) {
        assert!(geom::dist(rot(*a), *b) < 1e-9);
    }
}

#[test]
fn zero_area_face_contributes_nothing() {
    // Vertices 0, 3, 4 are collinear, so face [0,3,4] has zero area. Every
    // vertex also touches a non-degenerate +z face, so all normals are
    // defined and the sliver must not perturb them.
    let m = TriMesh::new(
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [2.5, -1.0, 0.0],
        ],
        vec![[0, 1, 2], [0, 3, 4], [4, 3, 5]],
        0,
    )
    .unwrap();
    let normals = m.vertex_normals().unwrap();
    for n in &normals {
        assert_relative_eq!(n[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(n[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(n[2], 1.0, epsilon = 1e-15);
    }
}

#[test]
fn all_degenerate_faces_error() {
    let m = TriMesh::new(
        vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        vec![[0, 1, 2]],
        0,
    )
    .unwrap();
    assert!(m.vertex_normals().is_err());
}

#[test]
fn one_ring_degrees() {
    let ico = icosphere(0, [0.0; 3], 1.0, 0).unwrap();
    for v in 0..ico.vertex_count() {
        assert_eq!(ico.one_ring(v).len(), 5);
    }
    let tri = single_triangle();
    assert_eq!(tri.one_ring(0), &[1, 2]);
    // Vertices introduced by subdivision have degree 6.
    let m = icosphere(2, [0.0; 3], 1.0, 0).unwrap();
    for v in 12..m.vertex_count() {
        assert_eq!(m.one_ring(v).len(), 6, "vertex {v}");
    }
}

#[test]
fn one_ring_symmetry() {
    let m = icosphere(2, [0.0; 3], 1.0, 0).unwrap();
    for i in 0..m.vertex_count() {
        for &j in m.one_ring(i) {
            assert!(m.one_ring(j).contains(&i));
        }
    }
}

#[test]
fn smooth_zero_iterations_is_identity() {
    let m = icosphere(2, [0.0; 3], 1.0, 0).unwrap();
    let s = laplacian_smooth(&m, 0, 1.0);
    assert_eq!(m.vertices(), s.vertices());
}

#[test]
fn smooth_icosahedron_shrinks_uniformly() {
    // All 12 icosahedron vertices are one symmetry orbit, so full-step
    // smoothing keeps every radius identical while the sphere shrinks.
    let m = icosphere(0, [0.0; 3], 1.0, 0).unwrap();
    let s = laplacian_smooth(&m, 50, 1.0);
    let radii: Vec<f64> = s.vertices().iter().map(|v| geom::norm(*v)).collect();
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    assert!(mean > 0.0 && mean < 1.0);
    for r in &radii {
        assert!((r - mean).abs() <= 1e-6 * mean, "radius {r} vs mean {mean}");
    }
    // Movement is purely radial: directions are preserved.
    for (a, b) in m.vertices().iter().zip(s.vertices()) {
        let da = geom::normalize(*a).unwrap();
        let db = geom::normalize(*b).unwrap();
        assert!(geom::dist(da, db) < 1e-9);
    }
    assert_eq!(m.faces(), s.faces());
}

#[test]
fn smooth_subdivided_sphere_stays_round() {
    // Degree-5 and degree-6 vertex classes shrink at slightly different
    // rates, so equality is only approximate on subdivided spheres.
    let m = icosphere(2, [0.0; 3], 1.0, 0).unwrap();
    let s = laplacian_smooth(&m, 50, 1.0);
    let radii: Vec<f64> = s.vertices().iter().map(|v| geom::norm(*v)).collect();
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    for r in &radii {
        assert!((r - mean).abs() < 0.05 * mean, "radius {r} vs mean {mean}");
    }
}

#[test]
fn smooth_reduces_radial_variance_of_noisy_sphere() {
    let mut rng = crate::rng::substream(11, "mesh-tests/noise");
    let m = icosphere(2, [0.0; 3], 1.0, 0).unwrap();
    let noisy = m.map_vertices(|v| {
        let r: f64 = 1.0 + 0.05 * rng.random_range(-1.0..1.0);
        geom::scale(geom::normalize(v).unwrap(), r)
    });
    let radial_var = |mesh: &TriMesh| {
        let radii: Vec<f64> = mesh.vertices().iter().map(|v| geom::norm(*v)).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        radii.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / radii.len() as f64
    };
    let mut prev = radial_var(&noisy);
    let mut mesh = noisy;
    for _ in 0..8 {
        mesh = laplacian_smooth(&mesh, 1, 1.0);
        let var = radial_var(&mesh);
        assert!(var < prev, "variance must strictly decrease: {var} vs {prev}");
        prev = var;
    }
}

#[test]
fn trimesh_rejects_bad_faces() {
    assert!(TriMesh::new(vec![[0.0; 3]; 2], vec![[0, 1, 2]], 0).is_err());
    assert!(TriMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]], 0).is_err());
    // Same directed edge twice -> inconsistent orientation.
    assert!(TriMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        vec![[0, 1, 2], [0, 1, 3]],
        0
    )
    .is_err());
}

#[test]
fn obj_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("template_s3.obj");
    let m = icosphere(1, [0.3, -1.25, 8.0], 2.5, 3).unwrap();
    write_obj(&m, &path).unwrap();
    let back = read_obj(&path).unwrap();
    assert_eq!(back.structure_id(), 3);
    assert_eq!(back.faces(), m.faces());
    for (a, b) in m.vertices().iter().zip(back.vertices()) {
        assert!(geom::dist(*a, *b) < 1e-7);
    }
}

#[test]
fn structure_id_parsing() {
    use std::path::Path;
    assert_eq!(structure_id_from_path(Path::new("a/gt_s2.obj")), Some(2));
    assert_eq!(structure_id_from_path(Path::new("pred_b3_s11.obj")), Some(11));
    assert_eq!(structure_id_from_path(Path::new("mesh.obj")), None);
}
