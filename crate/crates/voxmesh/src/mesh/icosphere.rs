//! Icosphere templates.
//!
//! Icospheres give near-uniform vertex degree (5 or 6), which keeps the graph
//! operators well conditioned; vertex count is 10*4^s + 2 at subdivision s.

use super::TriMesh;
use crate::error::Result;
use crate::geom::{self, Vec3};
use crate::usage_err;
use std::collections::BTreeMap;

const MAX_SUBDIVISIONS: u32 = 7;

/// Subdivided icosahedron with the given center and radius.
pub fn icosphere(subdivisions: u32, center: Vec3, radius: f64, structure_id: u32) -> Result<TriMesh> {
    if radius <= 0.0 {
        return Err(usage_err!("icosphere radius must be positive, got {radius}"));
    }
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(usage_err!(
            "icosphere subdivisions must be <= {MAX_SUBDIVISIONS}, got {subdivisions}"
        ));
    }

    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut dirs: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&v| geom::normalize(v).unwrap())
    .collect();

    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0usize; 3];
            for (k, &(a, b)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].iter().enumerate() {
                let key = (a.min(b), a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = geom::normalize(geom::add(dirs[a], dirs[b])).unwrap();
                    dirs.push(m);
                    dirs.len() - 1
                });
            }
            next_faces.push([f[0], mids[0], mids[2]]);
            next_faces.push([f[1], mids[1], mids[0]]);
            next_faces.push([f[2], mids[2], mids[1]]);
            next_faces.push([mids[0], mids[1], mids[2]]);
        }
        faces = next_faces;
    }

    let vertices = dirs
        .into_iter()
        .map(|d| geom::add(center, geom::scale(d, radius)))
        .collect();
    TriMesh::new(vertices, faces, structure_id)
}
