//! Triangle meshes and their graph operators.
//!
//! A [`TriMesh`] is an indexed triangle surface: vertex coordinates in world
//! units (millimeters for the synthetic scenes), counter-clockwise faces and
//! the adjacency derived from them. Meshes are immutable after construction;
//! every constructor validates the topology invariants, so downstream code can
//! rely on well-formed input.

mod graph;
mod icosphere;
mod obj;

pub use graph::{build_graph_operator, Csr, GraphOperator, LambdaMode};
pub use icosphere::icosphere;
pub use obj::{read_obj, structure_id_from_path, write_obj};

use crate::error::Result;
use crate::geom::{self, Vec3};
use crate::{data_err, numeric_err};

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    structure_id: u32,
    /// One-ring neighborhoods, sorted ascending. Built once at construction.
    neighbors: Vec<Vec<usize>>,
}

impl TriMesh {
    /// Build a mesh and check the topology invariants: in-bounds indices, no
    /// combinatorially degenerate face, and consistent orientation (no
    /// undirected edge used twice in the same direction or by more than two
    /// faces). Open meshes are allowed; watertightness is a separate query.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, structure_id: u32) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f[0] >= n || f[1] >= n || f[2] >= n {
                return Err(data_err!(
                    "face {fi} {f:?} references a vertex out of bounds (vertex count {n})"
                ));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(data_err!("face {fi} {f:?} is degenerate (repeated index)"));
            }
        }
        // Directed edge multiplicity: each (a,b) at most once.
        let mut directed: Vec<(usize, usize)> = Vec::with_capacity(faces.len() * 3);
        for f in &faces {
            directed.push((f[0], f[1]));
            directed.push((f[1], f[2]));
            directed.push((f[2], f[0]));
        }
        directed.sort_unstable();
        for w in directed.windows(2) {
            if w[0] == w[1] {
                return Err(data_err!(
                    "inconsistent orientation: directed edge {:?} appears twice",
                    w[0]
                ));
            }
        }
        // Neighbor sets are symmetric by construction: every face edge
        // contributes both directions, whether or not the mesh is closed.
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &directed {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for (v, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            nb.dedup();
            debug_assert!(!nb.contains(&v));
        }
        Ok(Self {
            vertices,
            faces,
            structure_id,
            neighbors,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn structure_id(&self) -> u32 {
        self.structure_id
    }

    /// Indices adjacent to `vertex` through any face edge, sorted ascending.
    pub fn one_ring(&self, vertex: usize) -> &[usize] {
        &self.neighbors[vertex]
    }

    /// Every directed edge (i, j); each undirected edge appears in both
    /// directions, matching the double sums in the edge-length objective.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                out.push((i, j));
            }
        }
        out
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(|n| n.len()).sum::<usize>() / 2
    }

    /// V - E + F; 2 for sphere-topology surfaces.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }

    /// Number of connected components of the vertex graph.
    pub fn connected_components(&self) -> usize {
        let n = self.vertex_count();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in self.one_ring(v) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        components
    }

    /// True when every undirected edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        let mut count: std::collections::BTreeMap<(usize, usize), u32> =
            std::collections::BTreeMap::new();
        for f in &self.faces {
            for &(a, b) in &[(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (a.min(b), a.max(b));
                *count.entry(key).or_insert(0) += 1;
            }
        }
        count.values().all(|&c| c == 2)
    }

    /// For each vertex, the lowest-index face containing it. Errors when some
    /// vertex has no incident face.
    pub fn lowest_incident_face(&self) -> Result<Vec<usize>> {
        let mut out = vec![usize::MAX; self.vertex_count()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if out[v] == usize::MAX {
                    out[v] = fi;
                }
            }
        }
        if let Some(v) = out.iter().position(|&f| f == usize::MAX) {
            return Err(data_err!("vertex {v} has no incident face"));
        }
        Ok(out)
    }

    /// Area-weighted vertex normals, unit length, outward for
    /// counter-clockwise closed meshes. Zero-area faces contribute nothing; a
    /// vertex whose incident faces are all degenerate is an error.
    pub fn vertex_normals(&self) -> Result<Vec<Vec3>> {
        let mut acc = vec![[0.0f64; 3]; self.vertex_count()];
        let mut has_face = vec![false; self.vertex_count()];
        for f in &self.faces {
            let [a, b, c] = *f;
            let cr = geom::cross(
                geom::sub(self.vertices[b], self.vertices[a]),
                geom::sub(self.vertices[c], self.vertices[a]),
            );
            for &v in f {
                has_face[v] = true;
                acc[v] = geom::add(acc[v], cr);
            }
        }
        let mut out = Vec::with_capacity(acc.len());
        for (v, a) in acc.iter().enumerate() {
            if !has_face[v] {
                return Err(data_err!("vertex {v} has no incident face"));
            }
            match geom::normalize(*a) {
                Some(n) => out.push(n),
                None => {
                    return Err(numeric_err!(
                        "vertex {v}: all incident faces degenerate, normal undefined"
                    ))
                }
            }
        }
        Ok(out)
    }

    /// Total surface area.
    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let cr = geom::cross(
                    geom::sub(self.vertices[f[1]], self.vertices[f[0]]),
                    geom::sub(self.vertices[f[2]], self.vertices[f[0]]),
                );
                0.5 * geom::norm(cr)
            })
            .sum()
    }

    /// Mean of the vertex positions.
    pub fn centroid(&self) -> Vec3 {
        let mut c = [0.0; 3];
        for v in &self.vertices {
            c = geom::add(c, *v);
        }
        geom::scale(c, 1.0 / self.vertices.len() as f64)
    }

    /// Mean edge length over undirected edges.
    pub fn mean_edge_length(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                if j > i {
                    total += geom::dist(self.vertices[i], self.vertices[j]);
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    /// Signed volume via the divergence theorem; positive for outward CCW
    /// orientation of a closed mesh.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let a = self.vertices[f[0]];
                let b = self.vertices[f[1]];
                let c = self.vertices[f[2]];
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Same topology, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        Self {
            vertices,
            faces: self.faces.clone(),
            structure_id: self.structure_id,
            neighbors: self.neighbors.clone(),
        }
    }

    /// Apply a point map to every vertex, keeping topology.
    pub fn map_vertices(&self, mut f: impl FnMut(Vec3) -> Vec3) -> Self {
        self.with_vertices(self.vertices.iter().map(|&v| f(v)).collect())
    }
}

/// Uniform-weight Laplacian smoothing: each iteration moves every vertex
/// toward the mean of its one-ring by `step`, updating all vertices
/// simultaneously. Topology is unchanged.
pub fn laplacian_smooth(mesh: &TriMesh, iterations: usize, step: f64) -> TriMesh {
    assert!(step > 0.0 && step <= 1.0, "step must be in (0, 1]");
    let mut pos = mesh.vertices.to_vec();
    for _ in 0..iterations {
        let mut next = pos.clone();
        for (i, nb) in mesh.neighbors.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let mut mean = [0.0; 3];
            for &j in nb {
                mean = geom::add(mean, pos[j]);
            }
            mean = geom::scale(mean, 1.0 / nb.len() as f64);
            next[i] = geom::add(pos[i], geom::scale(geom::sub(mean, pos[i]), step));
        }
        pos = next;
    }
    mesh.with_vertices(pos)
}

#[cfg(test)]
mod tests;
