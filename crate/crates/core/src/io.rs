//! Raw little-endian f32 buffers with JSON sidecars (`<path>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lightfield::AngularBasis;
use crate::volume::{VolumeGrid, VoxelVolume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub delta_x_mm: f64,
    pub delta_y_mm: f64,
    pub delta_z_mm: f64,
}

impl From<VolumeGrid> for VolumeMeta {
    fn from(g: VolumeGrid) -> Self {
        VolumeMeta {
            n_x: g.n[0],
            n_y: g.n[1],
            n_z: g.n[2],
            delta_x_mm: g.delta[0],
            delta_y_mm: g.delta[1],
            delta_z_mm: g.delta[2],
        }
    }
}

impl VolumeMeta {
    pub fn grid(&self) -> Result<VolumeGrid> {
        VolumeGrid::new(
            [self.n_x, self.n_y, self.n_z],
            [self.delta_x_mm, self.delta_y_mm, self.delta_z_mm],
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub n_s: usize,
    pub n_t: usize,
    pub pitch_mm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightFieldMeta {
    pub k_s: usize,
    pub k_t: usize,
    pub n_s: usize,
    pub n_t: usize,
    pub delta_s: f64,
    pub delta_t: f64,
    pub delta_s0: f64,
    pub delta_t0: f64,
    pub basis: AngularBasis,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_raw_f32(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * data.len());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_raw_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, "length is not a multiple of 4"),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_sidecar<T: Serialize>(path: &Path, meta: &T) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).map_err(|source| Error::Sidecar {
        path: side.display().to_string(),
        source,
    })?;
    fs::write(&side, text).map_err(io_err(&side))
}

pub fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    serde_json::from_str(&text).map_err(|source| Error::Sidecar {
        path: side.display().to_string(),
        source,
    })
}

pub fn save_volume(path: &Path, vol: &VoxelVolume) -> Result<()> {
    write_raw_f32(path, &vol.data)?;
    write_sidecar(path, &VolumeMeta::from(vol.grid))
}

pub fn load_volume(path: &Path) -> Result<VoxelVolume> {
    let meta: VolumeMeta = read_sidecar(path)?;
    let data = read_raw_f32(path)?;
    VoxelVolume::from_data(meta.grid()?, data)
}

pub fn save_image(path: &Path, meta: &ImageMeta, data: &[f32]) -> Result<()> {
    check_len(meta.n_s * meta.n_t, data.len())?;
    write_raw_f32(path, data)?;
    write_sidecar(path, meta)
}

pub fn load_image(path: &Path) -> Result<(ImageMeta, Vec<f32>)> {
    let meta: ImageMeta = read_sidecar(path)?;
    let data = read_raw_f32(path)?;
    check_len(meta.n_s * meta.n_t, data.len())?;
    Ok((meta, data))
}

pub fn save_lightfield(path: &Path, meta: &LightFieldMeta, data: &[f32]) -> Result<()> {
    check_len(meta.k_s * meta.k_t * meta.n_s * meta.n_t, data.len())?;
    write_raw_f32(path, data)?;
    write_sidecar(path, meta)
}

pub fn load_lightfield(path: &Path) -> Result<(LightFieldMeta, Vec<f32>)> {
    let meta: LightFieldMeta = read_sidecar(path)?;
    let data = read_raw_f32(path)?;
    check_len(meta.k_s * meta.k_t * meta.n_s * meta.n_t, data.len())?;
    Ok((meta, data))
}

/// 8-bit binary PGM with min-max scaling; display only.
pub fn write_pgm(path: &Path, data: &[f32], width: usize, height: usize) -> Result<()> {
    check_len(width * height, data.len())?;
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(data.iter().map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8));
    fs::write(path, bytes).map_err(io_err(path))
}
