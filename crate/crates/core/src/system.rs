//! End-to-end system operator of one posed camera: volume coefficients to
//! detector pixels.

use crate::camera::{Camera, CameraChain, PlenopticOrder, SceneInput};
use crate::config::{CameraConfig, Pose};
use crate::error::{check_len, Error, Result};
use crate::rotation::{decompose_rotation, rotate_volume, RotationPlan};
use crate::transport::Direction;
use crate::volume::{collapse_slice, slice_planes, VolumeGrid, VoxelVolume};

#[derive(Clone, Debug)]
pub struct SystemOperator {
    pub grid: VolumeGrid,
    pub pose: Pose,
    /// `None` for cameras looking straight down the volume z axis.
    pub rotation: Option<RotationPlan>,
    /// Grid of the volume in camera coordinates.
    pub camera_grid: VolumeGrid,
    pub chain: CameraChain,
}

impl SystemOperator {
    pub fn new(camera: Camera, pose: Pose, grid: VolumeGrid) -> Result<Self> {
        if !(pose.distance_mm > 0.0 && pose.distance_mm.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "camera distance must be positive, got {}",
                pose.distance_mm
            )));
        }
        let rotation = if pose.is_axis_aligned() {
            None
        } else {
            Some(decompose_rotation(pose.yaw_deg, pose.pitch_deg, pose.roll_deg)?)
        };
        let camera_grid = match &rotation {
            Some(p) => p.output_grid(&grid),
            None => grid,
        };
        let planes = slice_planes(&camera_grid, camera.focal_main(), pose.distance_mm)?;
        let chain = CameraChain::new(camera, planes)?;
        Ok(SystemOperator {
            grid,
            pose,
            rotation,
            camera_grid,
            chain,
        })
    }

    pub fn from_config(cfg: &CameraConfig, grid: VolumeGrid) -> Result<Self> {
        Self::new(Camera::from_config(cfg)?, cfg.pose, grid)
    }

    pub fn with_order(mut self, order: PlenopticOrder) -> Self {
        self.chain = self.chain.with_order(order);
        self
    }

    pub fn views(&self) -> usize {
        self.chain.views()
    }

    pub fn all_views(&self) -> Vec<usize> {
        self.chain.all_views()
    }

    pub fn image_len(&self) -> usize {
        self.chain.detector_len()
    }

    pub fn volume_len(&self) -> usize {
        self.grid.len()
    }

    fn to_camera_frame(&self, x: &[f32]) -> Result<VoxelVolume> {
        let vol = VoxelVolume::from_data(self.grid, x.to_vec())?;
        match &self.rotation {
            Some(p) => rotate_volume(p, &vol, Direction::Forward),
            None => Ok(vol),
        }
    }

    /// `A x` restricted to the given views.
    pub fn forward_views(&self, x: &[f32], views: &[usize]) -> Result<Vec<f32>> {
        check_len(self.grid.len(), x.len())?;
        let vol = self.to_camera_frame(x)?;
        let slices: Vec<Vec<f32>> = (0..vol.grid.n[2])
            .map(|iz| collapse_slice(&vol, iz))
            .collect::<Result<_>>()?;
        self.chain.forward(SceneInput::Shared(&slices), views)
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.forward_views(x, &self.all_views())
    }

    /// `A^T y` restricted to the given views.
    pub fn adjoint_views(&self, y: &[f32], views: &[usize]) -> Result<Vec<f32>> {
        check_len(self.image_len(), y.len())?;
        let slices = self.chain.adjoint_view_sum(y, views)?;
        let dz = self.camera_grid.delta[2] as f32;
        let mut data = Vec::with_capacity(self.camera_grid.len());
        for s in &slices {
            data.extend(s.iter().map(|v| v * dz));
        }
        let vol = VoxelVolume::from_data(self.camera_grid, data)?;
        let back = match &self.rotation {
            Some(p) => rotate_volume(p, &vol, Direction::Adjoint)?,
            None => vol,
        };
        Ok(back.data)
    }

    pub fn adjoint(&self, y: &[f32]) -> Result<Vec<f32>> {
        self.adjoint_views(y, &self.all_views())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AngularConfig, CameraKind, DetectorConfig};
    use crate::lightfield::AngularBasis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(yaw: f64) -> CameraConfig {
        CameraConfig {
            kind: CameraKind::Single,
            focal_main_mm: 50.0,
            detector_distance_mm: Some(60.0),
            array_distance_mm: None,
            array_to_detector_mm: None,
            focal_micro_mm: None,
            lens_layout: None,
            detector: DetectorConfig { n_s: 16, n_t: 16, pitch_mm: 0.1 },
            angular: AngularConfig { k_s: 2, k_t: 2, basis: AngularBasis::Pillbox, aperture_mm: 10.0 },
            pose: Pose { yaw_deg: yaw, pitch_deg: 0.0, roll_deg: 0.0, distance_mm: 300.0 },
            array_grid: None,
        }
    }

    #[test]
    fn zero_volume_zero_image() {
        let g = VolumeGrid::cube(6, 1.0).unwrap();
        let a = SystemOperator::from_config(&single(20.0), g).unwrap();
        assert!(a.forward(&vec![0.0; g.len()]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn posed_adjoint_dot() {
        let g = VolumeGrid::cube(6, 1.0).unwrap();
        let a = SystemOperator::from_config(&single(20.0), g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f32> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f32> = (0..a.image_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ax = a.forward(&x).unwrap();
        let aty = a.adjoint(&y).unwrap();
        let d = |u: &[f32], v: &[f32]| u.iter().zip(v).map(|(p, q)| *p as f64 * *q as f64).sum::<f64>();
        let lhs = d(&ax, &y);
        let rhs = d(&x, &aty);
        assert!((lhs - rhs).abs() <= 1e-4 * d(&ax, &ax).sqrt() * d(&y, &y).sqrt());
    }
}
