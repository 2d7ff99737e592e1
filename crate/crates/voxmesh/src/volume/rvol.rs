//! RVOL volume file format.
//!
//! ```text
//! RVOL1\n
//! dims dx dy dz\n
//! spacing sx sy sz\n
//! origin ox oy oz\n
//! dtype f32|u8\n
//! \n
//! <raw little-endian data, x fastest>
//! ```

use super::VoxelVolume;
use crate::data_err;
use crate::error::Result;
use std::io::{BufRead, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RvolDtype {
    F32,
    U8,
}

pub fn write_rvol(vol: &VoxelVolume, dtype: RvolDtype, path: &Path) -> Result<()> {
    if dtype == RvolDtype::U8 && !vol.is_binary() {
        return Err(data_err!("u8 volumes must be binary (0/1)"));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = vol.dims();
    let s = vol.spacing();
    let o = vol.origin();
    write!(w, "RVOL1\n")?;
    write!(w, "dims {} {} {}\n", d[0], d[1], d[2])?;
    write!(w, "spacing {} {} {}\n", s[0], s[1], s[2])?;
    write!(w, "origin {} {} {}\n", o[0], o[1], o[2])?;
    write!(
        w,
        "dtype {}\n",
        match dtype {
            RvolDtype::F32 => "f32",
            RvolDtype::U8 => "u8",
        }
    )?;
    write!(w, "\n")?;
    match dtype {
        RvolDtype::F32 => {
            for &v in vol.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        RvolDtype::U8 => {
            for &v in vol.data() {
                w.write_all(&[v as u8])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_rvol(path: &Path) -> Result<VoxelVolume> {
    let file =
        std::fs::File::open(path).map_err(|e| data_err!("cannot open {}: {e}", path.display()))?;
    let mut r = std::io::BufReader::new(file);
    let mut line = String::new();

    let mut read_line = |r: &mut std::io::BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line)?;
        Ok(line.trim_end_matches('\n').to_string())
    };

    let magic = read_line(&mut r)?;
    if magic != "RVOL1" {
        return Err(data_err!("{}: not an RVOL file", path.display()));
    }
    let parse3 = |l: &str, key: &str| -> Result<[f64; 3]> {
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(data_err!("{}: expected `{key}` line, got `{l}`", path.display()));
        }
        let mut out = [0.0; 3];
        for o in &mut out {
            *o = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| data_err!("{}: bad `{key}` line", path.display()))?;
        }
        Ok(out)
    };
    let dims_f = parse3(&read_line(&mut r)?, "dims")?;
    let spacing = parse3(&read_line(&mut r)?, "spacing")?;
    let origin = parse3(&read_line(&mut r)?, "origin")?;
    let dtype_line = read_line(&mut r)?;
    let dtype = match dtype_line.as_str() {
        "dtype f32" => RvolDtype::F32,
        "dtype u8" => RvolDtype::U8,
        other => return Err(data_err!("{}: bad dtype line `{other}`", path.display())),
    };
    let blank = read_line(&mut r)?;
    if !blank.is_empty() {
        return Err(data_err!("{}: expected blank line before data", path.display()));
    }

    let dims = [dims_f[0] as usize, dims_f[1] as usize, dims_f[2] as usize];
    let n = dims[0] * dims[1] * dims[2];
    let data = match dtype {
        RvolDtype::F32 => {
            let mut buf = vec![0u8; 4 * n];
            r.read_exact(&mut buf)
                .map_err(|e| data_err!("{}: truncated data: {e}", path.display()))?;
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        RvolDtype::U8 => {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)
                .map_err(|e| data_err!("{}: truncated data: {e}", path.display()))?;
            buf.into_iter().map(|b| b as f32).collect()
        }
    };
    VoxelVolume::new(dims, spacing, origin, data)
}
