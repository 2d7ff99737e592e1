//! Voxel grids: representation, intensity pre-processing, resampling,
//! continuous sampling, iso-surface extraction and mesh voxelization.
//!
//! Data is stored x-fastest: `index = x + nx * (y + ny * z)`. World
//! coordinates follow the crate-wide convention `world = origin +
//! index * spacing`, with the continuous voxel coordinate 0 at the center of
//! voxel 0.

mod marching;
mod mc_tables;
mod rvol;
mod voxelize;

pub use marching::marching_cubes;
pub use rvol::{read_rvol, write_rvol, RvolDtype};
pub use voxelize::voxelize;

use crate::error::Result;
use crate::geom::Vec3;
use crate::tensor::Scalar;
use crate::{data_err, usage_err};
use ndarray::{ArrayD, IxDyn};

#[derive(Debug, Clone)]
pub struct VoxelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
}

impl VoxelVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if spacing.iter().any(|&s| s <= 0.0) {
            return Err(data_err!("spacing must be positive, got {spacing:?}"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(data_err!(
                "data length {} does not match dims {dims:?} ({n})",
                data.len()
            ));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        Self {
            dims,
            spacing,
            origin,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn voxel_to_world(&self, v: Vec3) -> Vec3 {
        [
            self.origin[0] + v[0] * self.spacing[0],
            self.origin[1] + v[1] * self.spacing[1],
            self.origin[2] + v[2] * self.spacing[2],
        ]
    }

    pub fn world_to_voxel(&self, w: Vec3) -> Vec3 {
        [
            (w[0] - self.origin[0]) / self.spacing[0],
            (w[1] - self.origin[1]) / self.spacing[1],
            (w[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut mn = f32::INFINITY;
        let mut mx = f32::NEG_INFINITY;
        for &v in &self.data {
            mn = mn.min(v);
            mx = mx.max(v);
        }
        (mn, mx)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Trilinear sample at a continuous voxel coordinate, clamped to the grid.
    pub fn sample_voxel(&self, v: Vec3) -> f64 {
        let cell = |c: f64, n: usize| -> (usize, f64) {
            let c = c.clamp(0.0, (n - 1) as f64);
            let mut i = c.floor() as usize;
            if i >= n - 1 {
                i = n.saturating_sub(2);
            }
            (i, c - i as f64)
        };
        let (x0, fx) = cell(v[0], self.dims[0]);
        let (y0, fy) = cell(v[1], self.dims[1]);
        let (z0, fz) = cell(v[2], self.dims[2]);
        let mut acc = 0.0;
        for (dz, wz) in [(0usize, 1.0 - fz), (1, fz)] {
            for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                    acc += wz * wy * wx * self.get(x0 + dx, y0 + dy, z0 + dz) as f64;
                }
            }
        }
        acc
    }

    /// Trilinear sample at a world position.
    pub fn sample_world(&self, w: Vec3) -> f64 {
        self.sample_voxel(self.world_to_voxel(w))
    }

    /// View as a [1, nz, ny, nx] tensor (x fastest matches the last axis).
    pub fn to_tensor<T: Scalar>(&self) -> ArrayD<T> {
        let data: Vec<T> = self.data.iter().map(|&v| T::cast(v as f64)).collect();
        ArrayD::from_shape_vec(
            IxDyn(&[1, self.dims[2], self.dims[1], self.dims[0]]),
            data,
        )
        .unwrap()
    }

    /// Rebuild from a [1, nz, ny, nx] tensor, reusing this volume's geometry.
    pub fn from_tensor<T: Scalar>(&self, t: &ArrayD<T>) -> VoxelVolume {
        assert_eq!(
            t.shape(),
            &[1, self.dims[2], self.dims[1], self.dims[0]],
            "tensor shape does not match volume dims"
        );
        let std = t.as_standard_layout();
        let data: Vec<f32> = std.iter().map(|v| v.as_f64() as f32).collect();
        VoxelVolume {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            data,
        }
    }

    /// Binarize at a threshold: 1 where value >= t.
    pub fn threshold(&self, t: f32) -> VoxelVolume {
        VoxelVolume {
            dims: self.dims,
            spacing: self.spacing,
            origin: self.origin,
            data: self.data.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Linear map of the intensities onto [-1, 1].
pub fn normalize_intensity(vol: &VoxelVolume) -> Result<VoxelVolume> {
    let (mn, mx) = vol.min_max();
    if mx <= mn {
        return Err(data_err!("constant volume cannot be normalized"));
    }
    let scale = 2.0 / (mx - mn) as f64;
    let data = vol
        .data
        .iter()
        .map(|&v| ((v - mn) as f64 * scale - 1.0) as f32)
        .collect();
    Ok(VoxelVolume {
        dims: vol.dims,
        spacing: vol.spacing,
        origin: vol.origin,
        data,
    })
}

/// Trilinear resize. Vertex-centered: voxel 0 and voxel n-1 map to the ends
/// of the source grid, so the world extent measured center-to-center is
/// preserved and affine fields are reproduced exactly.
pub fn resample(vol: &VoxelVolume, new_dims: [usize; 3]) -> Result<VoxelVolume> {
    if new_dims.iter().any(|&d| d < 2) {
        return Err(usage_err!("resample dims must be >= 2, got {new_dims:?}"));
    }
    if vol.dims.iter().any(|&d| d < 2) {
        return Err(data_err!("resample source dims must be >= 2"));
    }
    let ratio = [
        (vol.dims[0] - 1) as f64 / (new_dims[0] - 1) as f64,
        (vol.dims[1] - 1) as f64 / (new_dims[1] - 1) as f64,
        (vol.dims[2] - 1) as f64 / (new_dims[2] - 1) as f64,
    ];
    let mut out = VoxelVolume {
        dims: new_dims,
        spacing: [
            vol.spacing[0] * ratio[0],
            vol.spacing[1] * ratio[1],
            vol.spacing[2] * ratio[2],
        ],
        origin: vol.origin,
        data: vec![0.0; new_dims[0] * new_dims[1] * new_dims[2]],
    };
    for z in 0..new_dims[2] {
        for y in 0..new_dims[1] {
            for x in 0..new_dims[0] {
                let src = [x as f64 * ratio[0], y as f64 * ratio[1], z as f64 * ratio[2]];
                let v = vol.sample_voxel(src) as f32;
                out.set(x, y, z, v);
            }
        }
    }
    Ok(out)
}

/// Slice-thickness degradation: keep every k-th slice along `axis`
/// (k = round(thickness/spacing)), then linearly re-interpolate the kept
/// slices back to the original dims.
pub fn downsample_slices(
    vol: &VoxelVolume,
    axis: usize,
    slice_thickness_mm: f64,
) -> Result<VoxelVolume> {
    assert!(axis < 3, "axis must be 0, 1 or 2");
    let sp = vol.spacing[axis];
    if slice_thickness_mm < sp {
        return Err(usage_err!(
            "slice thickness {slice_thickness_mm} mm below voxel spacing {sp} mm"
        ));
    }
    let extent = vol.dims[axis] as f64 * sp;
    if slice_thickness_mm > extent {
        return Err(usage_err!(
            "slice thickness {slice_thickness_mm} mm exceeds volume extent {extent} mm"
        ));
    }
    let k = (slice_thickness_mm / sp).round() as usize;
    if k <= 1 {
        return Ok(vol.clone());
    }
    let n = vol.dims[axis];
    // Retained slice indices: 0, k, 2k, ... (= ceil(n/k) slices).
    let retained: Vec<usize> = (0..n).step_by(k).collect();
    let mut out = vol.clone();
    let last = *retained.last().unwrap();
    for s in 0..n {
        let (lo, t) = if s >= last {
            (last, 0.0)
        } else {
            let j = s / k;
            (j * k, (s - j * k) as f64 / k as f64)
        };
        let hi = (lo + k).min(last);
        copy_interpolated_slice(vol, &mut out, axis, s, lo, hi, t);
    }
    Ok(out)
}

fn copy_interpolated_slice(
    src: &VoxelVolume,
    dst: &mut VoxelVolume,
    axis: usize,
    s: usize,
    lo: usize,
    hi: usize,
    t: f64,
) {
    let dims = src.dims;
    let mut idx = [0usize; 3];
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for i in 0..dims[a1] {
        for j in 0..dims[a2] {
            idx[a1] = i;
            idx[a2] = j;
            idx[axis] = lo;
            let vlo = src.get(idx[0], idx[1], idx[2]) as f64;
            idx[axis] = hi;
            let vhi = src.get(idx[0], idx[1], idx[2]) as f64;
            idx[axis] = s;
            let v = (vlo * (1.0 - t) + vhi * t) as f32;
            dst.set(idx[0], idx[1], idx[2], v);
        }
    }
}

/// Number of retained slices for a given thickness (exposed for tests).
pub fn retained_slice_count(dims: usize, spacing: f64, thickness: f64) -> usize {
    let k = (thickness / spacing).round() as usize;
    dims.div_ceil(k)
}
