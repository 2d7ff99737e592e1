//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size     content
//! 0       6        magic b"VCKP1\n"
//! 6       8        u64 manifest byte length M
//! 14      M        manifest, UTF-8 JSON:
//!                    {"dtype":"f32"|"f64",
//!                     "params":[{"name":...,"shape":[...]}, ...],
//!                     "extra":{...}}
//! 14+M    ...      raw parameter buffers, concatenated in manifest order,
//!                  little-endian scalars, row-major (C order)
//! ```
//!
//! `extra` carries model hyperparameters so a checkpoint is self-describing.

use super::{ParamStore, Scalar};
use crate::error::Result;
use crate::{data_err, numeric_err};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"VCKP1\n";

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    params: Vec<ManifestEntry>,
    extra: serde_json::Value,
}

pub struct CheckpointData<T: Scalar> {
    pub params: ParamStore<T>,
    pub extra: serde_json::Value,
}

pub fn write_checkpoint<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    extra: &serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        dtype: T::DTYPE.name().to_string(),
        params: store
            .iter()
            .map(|(name, arr)| ManifestEntry {
                name: name.to_string(),
                shape: arr.shape().to_vec(),
            })
            .collect(),
        extra: extra.clone(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, arr) in store.iter() {
        let std_arr = arr.as_standard_layout();
        for v in std_arr.iter() {
            w.write_all(&v.to_le_bytes_vec())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<CheckpointData<T>> {
    let mut r = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| data_err!("cannot open {}: {e}", path.display()))?,
    );
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(data_err!("{}: not a checkpoint file", path.display()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let mlen = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; mlen];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| data_err!("{}: bad manifest: {e}", path.display()))?;
    if manifest.dtype != T::DTYPE.name() {
        return Err(numeric_err!(
            "{}: checkpoint dtype {} does not match requested {}",
            path.display(),
            manifest.dtype,
            T::DTYPE.name()
        ));
    }
    let mut params = ParamStore::new();
    let elem = T::DTYPE.size_bytes();
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * elem];
        r.read_exact(&mut buf)
            .map_err(|e| data_err!("{}: truncated buffer for {}: {e}", path.display(), entry.name))?;
        let data: Vec<T> = buf.chunks_exact(elem).map(T::from_le_slice).collect();
        params.add(
            &entry.name,
            ArrayD::from_shape_vec(IxDyn(&entry.shape), data).unwrap(),
        );
    }
    Ok(CheckpointData {
        params,
        extra: manifest.extra,
    })
}
