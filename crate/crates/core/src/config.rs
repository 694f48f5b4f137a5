//! Declarative camera and reconstruction configuration (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::AngularBasis;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraKind {
    Single,
    Plenoptic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutKind {
    Rect,
    Hex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LensLayoutConfig {
    pub kind: LayoutKind,
    pub pitch_mm: f64,
    /// Columns and rows of lenslets.
    pub counts: [usize; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub n_s: usize,
    pub n_t: usize,
    pub pitch_mm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularConfig {
    pub k_s: usize,
    pub k_t: usize,
    pub basis: AngularBasis,
    pub aperture_mm: f64,
}

/// Camera orientation relative to the volume and distance from the volume
/// center to the main lens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
    pub distance_mm: f64,
}

impl Pose {
    pub fn facing(distance_mm: f64) -> Self {
        Pose {
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            roll_deg: 0.0,
            distance_mm,
        }
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.yaw_deg == 0.0 && self.pitch_deg == 0.0 && self.roll_deg == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    #[serde(rename = "type")]
    pub kind: CameraKind,
    pub focal_main_mm: f64,
    /// Main lens to detector (single-lens cameras).
    #[serde(rename = "D_mm", default, skip_serializing_if = "Option::is_none")]
    pub detector_distance_mm: Option<f64>,
    /// Main lens to microlens array.
    #[serde(rename = "D_mu_m_mm", default, skip_serializing_if = "Option::is_none")]
    pub array_distance_mm: Option<f64>,
    /// Microlens array to detector.
    #[serde(rename = "D_d_mu_mm", default, skip_serializing_if = "Option::is_none")]
    pub array_to_detector_mm: Option<f64>,
    #[serde(rename = "f_mu_mm", default, skip_serializing_if = "Option::is_none")]
    pub focal_micro_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lens_layout: Option<LensLayoutConfig>,
    pub detector: DetectorConfig,
    pub angular: AngularConfig,
    pub pose: Pose,
    /// Sampling of the light field on the microlens array plane. Defaults to
    /// the detector grid seen through the main lens center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub array_grid: Option<DetectorConfig>,
}

impl CameraConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinCamera {
    /// Detector equals the volume, one pixel per voxel.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraRef {
    Inline(Box<CameraConfig>),
    Builtin(BuiltinCamera),
    Path(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconCamera {
    pub camera: CameraRef,
    /// Overrides the pose stored in the camera config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    pub data_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitConfig {
    Constant(f32),
    Path(PathBuf),
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Constant(0.0)
    }
}

/// Volume grid definition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub delta_x_mm: f64,
    pub delta_y_mm: f64,
    pub delta_z_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub cameras: Vec<ReconCamera>,
    pub grid: GridConfig,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "one")]
    pub n_subset: usize,
    pub iters: usize,
    #[serde(default)]
    pub init: InitConfig,
    pub output_path: PathBuf,
    #[serde(default = "one")]
    pub log_every: usize,
}

fn one() -> usize {
    1
}

impl ReconConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_and_plenoptic() {
        let single = r#"{
            "type": "single", "focal_main_mm": 50, "D_mm": 60,
            "detector": {"n_s": 32, "n_t": 32, "pitch_mm": 0.05},
            "angular": {"k_s": 4, "k_t": 4, "basis": "pillbox", "aperture_mm": 10},
            "pose": {"yaw_deg": 30, "distance_mm": 300}
        }"#;
        let c = CameraConfig::from_json(single).unwrap();
        assert_eq!(c.kind, CameraKind::Single);
        assert_eq!(c.detector_distance_mm, Some(60.0));
        assert_eq!(c.pose.yaw_deg, 30.0);
        assert_eq!(c.pose.pitch_deg, 0.0);

        let pleno = r#"{
            "type": "plenoptic", "focal_main_mm": 50,
            "D_mu_m_mm": 62, "D_d_mu_mm": 1.5, "f_mu_mm": 1.2,
            "lens_layout": {"kind": "hex", "pitch_mm": 0.4, "counts": [8, 8]},
            "detector": {"n_s": 64, "n_t": 64, "pitch_mm": 0.05},
            "angular": {"k_s": 8, "k_t": 8, "basis": "dirac", "aperture_mm": 10},
            "pose": {"distance_mm": 300}
        }"#;
        let c = CameraConfig::from_json(pleno).unwrap();
        assert_eq!(c.lens_layout.as_ref().unwrap().kind, LayoutKind::Hex);
        assert_eq!(c.angular.basis, AngularBasis::Dirac);
        let round = CameraConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn recon_camera_refs() {
        let text = r#"{
            "cameras": [
                {"camera": "identity", "data_path": "a.raw"},
                {"camera": "cams/left.json", "data_path": "b.raw", "weights_path": "w.raw"}
            ],
            "grid": {"n_x": 4, "n_y": 4, "n_z": 2, "delta_x_mm": 1, "delta_y_mm": 1, "delta_z_mm": 1},
            "iters": 10,
            "output_path": "out.raw"
        }"#;
        let c: ReconConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.cameras[0].camera, CameraRef::Builtin(BuiltinCamera::Identity));
        assert_eq!(c.cameras[1].camera, CameraRef::Path("cams/left.json".into()));
        assert_eq!((c.n_subset, c.log_every, c.beta), (1, 1, 0.0));
        assert_eq!(c.init, InitConfig::Constant(0.0));
    }

    #[test]
    fn malformed_is_config_error() {
        assert!(matches!(CameraConfig::from_json("{\"type\": \"pinhole\"}"), Err(Error::Config(_))));
    }
}
