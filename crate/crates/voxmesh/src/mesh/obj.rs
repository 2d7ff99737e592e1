//! Wavefront OBJ serialization: `v` and `f` records only, 1-based indices,
//! 9 significant digits. The structure id is carried by the filename suffix
//! `_s<k>.obj`.

use super::TriMesh;
use crate::data_err;
use crate::error::Result;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for v in mesh.vertices() {
        // {:.8e} prints 9 significant digits.
        writeln!(w, "v {:.8e} {:.8e} {:.8e}", v[0], v[1], v[2])?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse `_s<k>.obj` filename suffixes; e.g. `gt_s2.obj` -> 2.
pub fn structure_id_from_path(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?;
    let idx = stem.rfind("_s")?;
    stem[idx + 2..].parse().ok()
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let structure_id = structure_id_from_path(path).unwrap_or(0);
    let file = std::fs::File::open(path)
        .map_err(|e| data_err!("cannot open {}: {e}", path.display()))?;
    let reader = std::io::BufReader::new(file);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut v = [0.0f64; 3];
                for c in &mut v {
                    *c = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| data_err!("{}:{}: bad vertex", path.display(), ln + 1))?;
                }
                vertices.push(v);
            }
            Some("f") => {
                let mut f = [0usize; 3];
                for c in &mut f {
                    // Tolerate v/vt/vn references; only the vertex index is kept.
                    let field = tok
                        .next()
                        .ok_or_else(|| data_err!("{}:{}: bad face", path.display(), ln + 1))?;
                    let first = field.split('/').next().unwrap_or(field);
                    let idx: i64 = first
                        .parse()
                        .map_err(|_| data_err!("{}:{}: bad face index", path.display(), ln + 1))?;
                    if idx < 1 {
                        return Err(data_err!(
                            "{}:{}: only positive 1-based indices supported",
                            path.display(),
                            ln + 1
                        ));
                    }
                    *c = (idx - 1) as usize;
                }
                if tok.next().is_some() {
                    return Err(data_err!(
                        "{}:{}: only triangle faces supported",
                        path.display(),
                        ln + 1
                    ));
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces, structure_id)
}
