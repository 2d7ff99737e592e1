//! Marching-cubes case table.
//!
//! The 256-entry table is generated once at first use instead of being
//! transcribed. For every sign configuration the crossed cube edges are
//! linked into loops face by face: on each face, the crossings delimiting a
//! maximal arc of inside corners are connected. The pairing rule depends only
//! on the face's own corner signs, so two cells sharing a face always agree
//! and the extracted surface is crack-free, including on the ambiguous
//! configurations that the classic table resolves arbitrarily.
//!
//! Loops are fan-triangulated and oriented so triangle normals point from the
//! inside region (value below iso) toward the outside.

use std::sync::OnceLock;

/// Corner positions of the unit cell, index 0..7.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cell edges as corner pairs, index 0..11.
pub const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Per configuration: flat list of edge-id triples.
pub struct CaseTable {
    pub triangles: Vec<Vec<[usize; 3]>>,
}

static TABLE: OnceLock<CaseTable> = OnceLock::new();

pub fn case_table() -> &'static CaseTable {
    TABLE.get_or_init(build_table)
}

/// The six faces as corner cycles, ordered counterclockwise in the global
/// (u, v) axis pair of the face plane. The cycle for a face plane is the same
/// no matter which cell looks at it.
fn face_cycles() -> Vec<[usize; 4]> {
    let mut faces = Vec::new();
    for axis in 0..3usize {
        for side in 0..2usize {
            let mut ids: Vec<usize> = (0..8).filter(|&c| CORNERS[c][axis] == side).collect();
            let (u, v) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            // Counterclockwise in (u, v) around the face center (0.5, 0.5).
            ids.sort_by(|&a, &b| {
                let ang = |c: usize| {
                    let du = CORNERS[c][u] as f64 - 0.5;
                    let dv = CORNERS[c][v] as f64 - 0.5;
                    dv.atan2(du)
                };
                ang(a).partial_cmp(&ang(b)).unwrap()
            });
            faces.push([ids[0], ids[1], ids[2], ids[3]]);
        }
    }
    faces
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(p, q)| (p, q) == (a, b) || (p, q) == (b, a))
        .expect("corner pair is a cell edge")
}

fn build_table() -> CaseTable {
    let faces = face_cycles();
    let mut triangles = Vec::with_capacity(256);
    for config in 0..256usize {
        let inside = |c: usize| config & (1 << c) != 0;
        // Face-by-face segments between crossings.
        let mut segments: Vec<(usize, usize)> = Vec::new();
        for cycle in &faces {
            for start in 0..4 {
                // Maximal arcs of inside corners, each delimited by two
                // crossed edges.
                if !inside(cycle[start]) || inside(cycle[(start + 3) % 4]) {
                    continue; // not the first corner of an arc
                }
                let mut end = start;
                while inside(cycle[(end + 1) % 4]) {
                    end = (end + 1) % 4;
                }
                let enter = edge_between(cycle[(start + 3) % 4], cycle[start]);
                let leave = edge_between(cycle[end], cycle[(end + 1) % 4]);
                segments.push((enter, leave));
            }
        }
        // Each crossed edge appears in exactly two segments; walk the loops.
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 12];
        for &(a, b) in &segments {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut used = [false; 12];
        let mut tris = Vec::new();
        for start in 0..12 {
            if adj[start].is_empty() || used[start] {
                continue;
            }
            let mut ring = vec![start];
            used[start] = true;
            let mut cur = start;
            loop {
                let next = adj[cur]
                    .iter()
                    .copied()
                    .find(|&e| !used[e])
                    .unwrap_or(start);
                if next == start {
                    break;
                }
                used[next] = true;
                ring.push(next);
                cur = next;
            }
            debug_assert!(ring.len() >= 3);
            orient_ring(&mut ring, config);
            for i in 1..ring.len() - 1 {
                tris.push([ring[0], ring[i], ring[i + 1]]);
            }
        }
        triangles.push(tris);
    }
    CaseTable { triangles }
}

/// Flip the ring if its Newell normal (edge midpoints) points toward the
/// inside corners instead of away from them.
fn orient_ring(ring: &mut Vec<usize>, config: usize) {
    let mid = |e: usize| -> [f64; 3] {
        let (a, b) = EDGES[e];
        [
            (CORNERS[a][0] + CORNERS[b][0]) as f64 * 0.5,
            (CORNERS[a][1] + CORNERS[b][1]) as f64 * 0.5,
            (CORNERS[a][2] + CORNERS[b][2]) as f64 * 0.5,
        ]
    };
    let mut normal = [0.0f64; 3];
    for i in 0..ring.len() {
        let p = mid(ring[i]);
        let q = mid(ring[(i + 1) % ring.len()]);
        normal[0] += (p[1] - q[1]) * (p[2] + q[2]);
        normal[1] += (p[2] - q[2]) * (p[0] + q[0]);
        normal[2] += (p[0] - q[0]) * (p[1] + q[1]);
    }
    let mut inside_c = [0.0f64; 3];
    let mut outside_c = [0.0f64; 3];
    let (mut n_in, mut n_out) = (0.0, 0.0);
    for c in 0..8 {
        let p = [CORNERS[c][0] as f64, CORNERS[c][1] as f64, CORNERS[c][2] as f64];
        if config & (1 << c) != 0 {
            for k in 0..3 {
                inside_c[k] += p[k];
            }
            n_in += 1.0;
        } else {
            for k in 0..3 {
                outside_c[k] += p[k];
            }
            n_out += 1.0;
        }
    }
    let mut dir = [0.0f64; 3];
    for k in 0..3 {
        dir[k] = outside_c[k] / n_out - inside_c[k] / n_in;
    }
    let dot: f64 = normal.iter().zip(&dir).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        ring.reverse();
    }
}
