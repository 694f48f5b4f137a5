//! Image and volume comparison metrics.

use crate::error::{check_len, Error, Result};
use crate::volume::VoxelVolume;

/// `‖test − ref‖² / ‖ref‖²`.
pub fn nsd(reference: &[f32], test: &[f32]) -> Result<f64> {
    check_len(reference.len(), test.len())?;
    let den: f64 = reference.iter().map(|v| (*v as f64).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::Numerical("reference has zero norm".into()));
    }
    let num: f64 = reference
        .iter()
        .zip(test)
        .map(|(r, t)| (*t as f64 - *r as f64).powi(2))
        .sum();
    Ok(num / den)
}

pub fn nrmse(reference: &[f32], test: &[f32]) -> Result<f64> {
    nsd(reference, test).map(f64::sqrt)
}

/// Full width at half maximum of a sampled profile, in samples. Crossings
/// are linearly interpolated on both sides of the peak.
pub fn fwhm(profile: &[f64]) -> Option<f64> {
    let (peak, &max) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    if !(max > 0.0) {
        return None;
    }
    let half = 0.5 * max;
    let mut left = 0.0;
    let mut i = peak;
    while i > 0 && profile[i - 1] > half {
        i -= 1;
    }
    if i > 0 {
        let (a, b) = (profile[i - 1], profile[i]);
        left = (i - 1) as f64 + (half - a) / (b - a);
    }
    let mut right = (profile.len() - 1) as f64;
    let mut j = peak;
    while j + 1 < profile.len() && profile[j + 1] > half {
        j += 1;
    }
    if j + 1 < profile.len() {
        let (a, b) = (profile[j], profile[j + 1]);
        right = j as f64 + (a - half) / (a - b);
    }
    Some(right - left)
}

/// Profile along `axis` through voxel `through`.
pub fn line_profile(vol: &VoxelVolume, axis: usize, through: [usize; 3]) -> Vec<f64> {
    (0..vol.grid.n[axis])
        .map(|i| {
            let mut q = through;
            q[axis] = i;
            vol.get(q) as f64
        })
        .collect()
}

/// Voxel holding the largest value.
pub fn argmax(vol: &VoxelVolume) -> [usize; 3] {
    let (k, _) = vol
        .data
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
    let [nx, ny, _] = vol.grid.n;
    [k % nx, (k / nx) % ny, k / (nx * ny)]
}

/// Sum of the volume projected onto one axis.
pub fn axis_marginal(vol: &VoxelVolume, axis: usize) -> Vec<f64> {
    let [nx, ny, nz] = vol.grid.n;
    let mut out = vec![0.0; vol.grid.n[axis]];
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let q = [ix, iy, iz];
                out[q[axis]] += vol.get(q) as f64;
            }
        }
    }
    out
}
