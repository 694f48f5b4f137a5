//! Parametric emission phantoms rasterized with supersampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{VolumeGrid, VoxelVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisName {
    X,
    Y,
    Z,
}

impl AxisName {
    fn index(self) -> usize {
        match self {
            AxisName::X => 0,
            AxisName::Y => 1,
            AxisName::Z => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere {
        center_mm: [f64; 3],
        radius_mm: f64,
        intensity: f64,
    },
    Cylinder {
        center_mm: [f64; 3],
        radius_mm: f64,
        half_length_mm: f64,
        axis: AxisName,
        intensity: f64,
    },
    /// Central column along `y` with `prongs` arms leaving its top and
    /// spreading outward and upward, loosely like a multi-jet flame.
    Pronged {
        center_mm: [f64; 3],
        core_radius_mm: f64,
        core_half_length_mm: f64,
        prongs: usize,
        prong_radius_mm: f64,
        prong_length_mm: f64,
        /// Elevation of the arms above the horizontal plane.
        prong_elevation_deg: f64,
        intensity: f64,
    },
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab.iter().map(|v| v * v).sum::<f64>();
    let t = if len2 > 0.0 {
        (ap.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (0..3).map(|i| (ap[i] - t * ab[i]).powi(2)).sum::<f64>().sqrt()
}

impl Shape {
    pub fn intensity(&self) -> f64 {
        match self {
            Shape::Sphere { intensity, .. } | Shape::Cylinder { intensity, .. } | Shape::Pronged { intensity, .. } => {
                *intensity
            }
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Shape::Sphere { center_mm: c, radius_mm: r, .. } => {
                (0..3).map(|i| (p[i] - c[i]).powi(2)).sum::<f64>() <= r * r
            }
            Shape::Cylinder { center_mm: c, radius_mm: r, half_length_mm: h, axis, .. } => {
                let a = axis.index();
                let radial: f64 = (0..3).filter(|&i| i != a).map(|i| (p[i] - c[i]).powi(2)).sum();
                radial <= r * r && (p[a] - c[a]).abs() <= *h
            }
            Shape::Pronged {
                center_mm: c,
                core_radius_mm,
                core_half_length_mm,
                prongs,
                prong_radius_mm,
                prong_length_mm,
                prong_elevation_deg,
                ..
            } => {
                let core = Shape::Cylinder {
                    center_mm: *c,
                    radius_mm: *core_radius_mm,
                    half_length_mm: *core_half_length_mm,
                    axis: AxisName::Y,
                    intensity: 1.0,
                };
                if core.contains(p) {
                    return true;
                }
                let root = [c[0], c[1] + core_half_length_mm, c[2]];
                let (se, ce) = prong_elevation_deg.to_radians().sin_cos();
                (0..*prongs).any(|i| {
                    let phi = std::f64::consts::TAU * (i as f64 + 0.5) / *prongs as f64;
                    let tip = [
                        root[0] + prong_length_mm * ce * phi.cos(),
                        root[1] + prong_length_mm * se,
                        root[2] + prong_length_mm * ce * phi.sin(),
                    ];
                    segment_distance(p, root, tip) <= *prong_radius_mm
                })
            }
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Sphere { center_mm: c, radius_mm: r, .. } => (c.map(|v| v - r), c.map(|v| v + r)),
            Shape::Cylinder { center_mm: c, radius_mm: r, half_length_mm: h, axis, .. } => {
                let mut lo = c.map(|v| v - r);
                let mut hi = c.map(|v| v + r);
                let a = axis.index();
                lo[a] = c[a] - h;
                hi[a] = c[a] + h;
                (lo, hi)
            }
            Shape::Pronged {
                center_mm: c,
                core_radius_mm,
                core_half_length_mm,
                prong_radius_mm,
                prong_length_mm,
                prong_elevation_deg,
                ..
            } => {
                let (se, ce) = prong_elevation_deg.to_radians().sin_cos();
                let reach = (prong_length_mm * ce.abs() + prong_radius_mm).max(*core_radius_mm);
                let top = c[1] + core_half_length_mm + (prong_length_mm * se).max(0.0) + prong_radius_mm;
                let bottom = (c[1] - core_half_length_mm)
                    .min(c[1] + core_half_length_mm + (prong_length_mm * se).min(0.0) - prong_radius_mm);
                ([c[0] - reach, bottom, c[2] - reach], [c[0] + reach, top, c[2] + reach])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(default)]
    pub shapes: Vec<Shape>,
    #[serde(default = "default_supersample")]
    pub supersample: usize,
}

fn default_supersample() -> usize {
    2
}

impl PhantomSpec {
    /// The pronged test object scaled to fill most of `grid`.
    pub fn pronged_for(grid: &VolumeGrid) -> Self {
        let half = grid.half_extent();
        let s = half[0].min(half[1]).min(half[2]);
        PhantomSpec {
            shapes: vec![Shape::Pronged {
                center_mm: [0.0, -0.3 * s, 0.0],
                core_radius_mm: 0.16 * s,
                core_half_length_mm: 0.3 * s,
                prongs: 4,
                prong_radius_mm: 0.11 * s,
                prong_length_mm: 0.62 * s,
                prong_elevation_deg: 35.0,
                intensity: 1.0,
            }],
            supersample: 2,
        }
    }
}

/// Sums every shape's supersampled indicator onto the grid.
pub fn rasterize(spec: &PhantomSpec, grid: &VolumeGrid) -> Result<VoxelVolume> {
    if spec.supersample == 0 {
        return Err(Error::InvalidParameter("supersample factor must be at least 1".into()));
    }
    let half = grid.half_extent();
    for (i, sh) in spec.shapes.iter().enumerate() {
        let (lo, hi) = sh.bounds();
        if (0..3).any(|a| lo[a] < -half[a] - 1e-9 || hi[a] > half[a] + 1e-9) {
            return Err(Error::InvalidGeometry(format!("shape {i} extends outside the volume")));
        }
    }
    let ss = spec.supersample;
    let inv = 1.0 / (ss * ss * ss) as f64;
    let sub = |a: usize, i: usize, m: usize| grid.coord(a, i) + ((m as f64 + 0.5) / ss as f64 - 0.5) * grid.delta[a];
    let mut vol = VoxelVolume::zeros(*grid);
    for sh in &spec.shapes {
        let (lo, hi) = sh.bounds();
        let range = |a: usize| {
            let first = ((lo[a] + half[a]) / grid.delta[a]).floor().max(0.0) as usize;
            let last = (((hi[a] + half[a]) / grid.delta[a]).ceil() as usize).min(grid.n[a]);
            first..last
        };
        let intensity = sh.intensity();
        for iz in range(2) {
            for iy in range(1) {
                for ix in range(0) {
                    let mut hits = 0usize;
                    for mz in 0..ss {
                        for my in 0..ss {
                            for mx in 0..ss {
                                if sh.contains([sub(0, ix, mx), sub(1, iy, my), sub(2, iz, mz)]) {
                                    hits += 1;
                                }
                            }
                        }
                    }
                    if hits > 0 {
                        let k = grid.index([ix, iy, iz]);
                        vol.data[k] += (intensity * hits as f64 * inv) as f32;
                    }
                }
            }
        }
    }
    Ok(vol)
}
