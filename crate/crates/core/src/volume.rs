//! Voxel volumes and their slice-wise collapse to scene light fields.

use serde::{Deserialize, Serialize};

use crate::camera::scene_to_angular;
use crate::error::{check_len, Error, Result};
use crate::lightfield::{LightFieldCoeffs, PlaneGeometry};

/// Voxel lattice centered on the origin; axis 0 = x varies fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub n: [usize; 3],
    pub delta: [f64; 3],
}

impl VolumeGrid {
    pub fn new(n: [usize; 3], delta: [f64; 3]) -> Result<Self> {
        if n.iter().any(|&v| v == 0) {
            return Err(Error::InvalidGeometry(format!("empty volume {n:?}")));
        }
        if delta.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidGeometry(format!("voxel sizes must be positive, got {delta:?}")));
        }
        Ok(VolumeGrid { n, delta })
    }

    pub fn cube(n: usize, delta: f64) -> Result<Self> {
        Self::new([n; 3], [delta; 3])
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: [usize; 3]) -> usize {
        (i[2] * self.n[1] + i[1]) * self.n[0] + i[0]
    }

    /// Voxel center coordinate along `axis`.
    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        (i as f64 - (self.n[axis] as f64 - 1.0) * 0.5) * self.delta[axis]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.delta[0] * self.delta[1] * self.delta[2]
    }

    /// Physical half-extent along each axis.
    pub fn half_extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 0.5 * self.n[a] as f64 * self.delta[a])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelVolume {
    pub grid: VolumeGrid,
    pub data: Vec<f32>,
}

impl VoxelVolume {
    pub fn zeros(grid: VolumeGrid) -> Self {
        VoxelVolume {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_data(grid: VolumeGrid, data: Vec<f32>) -> Result<Self> {
        check_len(grid.len(), data.len())?;
        Ok(VoxelVolume { grid, data })
    }

    /// Samples `f(x, y, z)` at voxel centers.
    pub fn from_fn(grid: VolumeGrid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for iz in 0..grid.n[2] {
            for iy in 0..grid.n[1] {
                for ix in 0..grid.n[0] {
                    data.push(f(grid.coord(0, ix), grid.coord(1, iy), grid.coord(2, iz)) as f32);
                }
            }
        }
        VoxelVolume { grid, data }
    }

    pub fn get(&self, i: [usize; 3]) -> f32 {
        self.data[self.grid.index(i)]
    }

    pub fn set(&mut self, i: [usize; 3], v: f32) {
        let k = self.grid.index(i);
        self.data[k] = v;
    }

    pub fn slice(&self, iz: usize) -> &[f32] {
        let n = self.grid.n[0] * self.grid.n[1];
        &self.data[iz * n..(iz + 1) * n]
    }
}

/// Scene plane of slice `iz` for a camera whose main lens is `distance` from
/// the volume center; `z` points away from the camera.
pub fn slice_plane(grid: &VolumeGrid, iz: usize, focal_main: f64, distance: f64) -> Result<PlaneGeometry> {
    if iz >= grid.n[2] {
        return Err(Error::OutOfRange(format!("slice {iz} of {}", grid.n[2])));
    }
    let d = distance + grid.coord(2, iz);
    if d <= 0.0 {
        return Err(Error::InvalidGeometry(format!("slice {iz} lies behind the main lens")));
    }
    PlaneGeometry::new(
        grid.n[0],
        grid.n[1],
        grid.delta[0],
        grid.delta[1],
        scene_to_angular(focal_main, d)?,
    )
}

pub fn slice_planes(grid: &VolumeGrid, focal_main: f64, distance: f64) -> Result<Vec<PlaneGeometry>> {
    (0..grid.n[2]).map(|iz| slice_plane(grid, iz, focal_main, distance)).collect()
}

/// Shared per-view scene coefficients `w^s = Δz x^s` of slice `iz`.
pub fn collapse_slice(vol: &VoxelVolume, iz: usize) -> Result<Vec<f32>> {
    if iz >= vol.grid.n[2] {
        return Err(Error::OutOfRange(format!("slice {iz} of {}", vol.grid.n[2])));
    }
    let dz = vol.grid.delta[2] as f32;
    Ok(vol.slice(iz).iter().map(|v| v * dz).collect())
}

/// The same collapse materialized as a light field with `views` copies.
pub fn collapse_slice_field(
    vol: &VoxelVolume,
    iz: usize,
    plane: PlaneGeometry,
    views: usize,
) -> Result<LightFieldCoeffs> {
    let w = collapse_slice(vol, iz)?;
    check_len(plane.len(), w.len())?;
    let mut data = Vec::with_capacity(views * w.len());
    for _ in 0..views {
        data.extend_from_slice(&w);
    }
    LightFieldCoeffs::from_data(plane, views, data)
}

/// Adjoint of [`collapse_slice_field`]: `Δz Σ_k f_k`.
pub fn collapse_slice_adjoint(field: &LightFieldCoeffs, delta_z: f64) -> Vec<f32> {
    let mut out = vec![0.0f32; field.plane.len()];
    for k in 0..field.views {
        for (o, v) in out.iter_mut().zip(field.view(k)) {
            *o += v;
        }
    }
    let dz = delta_z as f32;
    out.iter_mut().for_each(|v| *v *= dz);
    out
}
