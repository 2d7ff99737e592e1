//! Iso-surface extraction.

use super::mc_tables::{case_table, CORNERS, EDGES};
use super::VoxelVolume;
use crate::error::Result;
use crate::mesh::TriMesh;
use crate::numeric_err;
use std::collections::HashMap;

/// Extract the iso-surface of a scalar volume as a triangle mesh in world
/// coordinates. Vertices lie on grid edges at linearly interpolated
/// crossings; triangle normals point toward values above `iso`, so a signed
/// distance field (inside negative) yields an outward-oriented surface.
///
/// Corner values exactly equal to `iso` are nudged up by 1e-9 (relative to
/// the value scale) so no cell configuration is ambiguous about equality.
pub fn marching_cubes(vol: &VoxelVolume, iso: f64, structure_id: u32) -> Result<TriMesh> {
    let dims = vol.dims();
    let (mn, mx) = vol.min_max();
    let nudge = 1e-9 * (1.0f64).max(iso.abs());
    let adj = |v: f32| -> f64 {
        let v = v as f64;
        if v == iso {
            iso + nudge
        } else {
            v
        }
    };
    if (adj(mn) < iso) == (adj(mx) < iso) {
        return Err(numeric_err!(
            "empty iso-surface: volume range [{mn}, {mx}] does not cross iso {iso}"
        ));
    }

    let table = case_table();
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    // Global edge key: (axis, x, y, z) of the edge start voxel.
    let mut edge_vertex: HashMap<(u8, usize, usize, usize), usize> = HashMap::new();

    let global_edge_key = |cell: [usize; 3], e: usize| -> (u8, usize, usize, usize) {
        let (a, b) = EDGES[e];
        let ca = CORNERS[a];
        let cb = CORNERS[b];
        let axis = (0..3).find(|&k| ca[k] != cb[k]).unwrap();
        let start = [
            cell[0] + ca[0].min(cb[0]),
            cell[1] + ca[1].min(cb[1]),
            cell[2] + ca[2].min(cb[2]),
        ];
        (axis as u8, start[0], start[1], start[2])
    };

    for z in 0..dims[2] - 1 {
        for y in 0..dims[1] - 1 {
            for x in 0..dims[0] - 1 {
                let cell = [x, y, z];
                let mut vals = [0.0f64; 8];
                let mut config = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    let v = adj(vol.get(x + off[0], y + off[1], z + off[2]));
                    vals[c] = v;
                    if v < iso {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                for tri in &table.triangles[config] {
                    let mut ids = [0usize; 3];
                    for (k, &e) in tri.iter().enumerate() {
                        let key = global_edge_key(cell, e);
                        let id = *edge_vertex.entry(key).or_insert_with(|| {
                            let (a, b) = EDGES[e];
                            let va = vals[a];
                            let vb = vals[b];
                            let t = (iso - va) / (vb - va);
                            let pa = CORNERS[a];
                            let pb = CORNERS[b];
                            let p = [
                                (x + pa[0]) as f64 + t * (pb[0] as f64 - pa[0] as f64),
                                (y + pa[1]) as f64 + t * (pb[1] as f64 - pa[1] as f64),
                                (z + pa[2]) as f64 + t * (pb[2] as f64 - pa[2] as f64),
                            ];
                            vertices.push(vol.voxel_to_world(p));
                            vertices.len() - 1
                        });
                        ids[k] = id;
                    }
                    // Degenerate triangles can appear when a crossing sits
                    // numerically on a corner shared by two edges; drop them.
                    if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                        faces.push(ids);
                    }
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(numeric_err!("empty iso-surface: no cell crosses iso {iso}"));
    }
    TriMesh::new(vertices, faces, structure_id)
}
