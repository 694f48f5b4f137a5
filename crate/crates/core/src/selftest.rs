//! Built-in consistency checks on tiny configurations.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::{scene_to_angular, Camera, CameraChain, SceneInput};
use crate::config::{AngularConfig, CameraConfig, CameraKind, DetectorConfig, LayoutKind, LensLayoutConfig, Pose};
use crate::error::Result;
use crate::lightfield::{AngularBasis, LightFieldCoeffs, PlaneGeometry};
use crate::recon::{absorb_weights, regularizer_gradient, DenseViewsOp, ReconProblem};
use crate::rotation::{decompose_rotation, frobenius_diff, rotate_volume, ShearOp};
use crate::system::SystemOperator;
use crate::transport::{Direction, OpStats, TransportOp};
use crate::volume::{slice_planes, VolumeGrid, VoxelVolume};

pub const ADJOINT_TOL: f64 = 1e-4;
pub const DENSE_TOL: f64 = 1e-5;
pub const MAJORIZER_TOL: f64 = 1e-6;
pub const DECOMPOSITION_TOL: f64 = 1e-12;
pub const ROTATION_TOL: f64 = 0.05;

/// Single-lens camera focused at 300 mm with a 0.1 mm pixel detector.
pub fn tiny_single_config(n: usize, k: usize, basis: AngularBasis) -> CameraConfig {
    CameraConfig {
        kind: CameraKind::Single,
        focal_main_mm: 50.0,
        detector_distance_mm: Some(60.0),
        array_distance_mm: None,
        array_to_detector_mm: None,
        focal_micro_mm: None,
        lens_layout: None,
        detector: DetectorConfig { n_s: n, n_t: n, pitch_mm: 0.1 },
        angular: AngularConfig { k_s: k, k_t: k, basis, aperture_mm: 10.0 },
        pose: Pose::facing(300.0),
        array_grid: None,
    }
}

/// Plenoptic camera with 0.8 mm rectangular lenslets 2 mm past the main
/// lens image plane.
pub fn tiny_plenoptic_config(counts: [usize; 2], n: usize, k: usize, basis: AngularBasis) -> CameraConfig {
    CameraConfig {
        kind: CameraKind::Plenoptic,
        focal_main_mm: 50.0,
        detector_distance_mm: None,
        array_distance_mm: Some(62.0),
        array_to_detector_mm: Some(2.0),
        focal_micro_mm: Some(1.5),
        lens_layout: Some(LensLayoutConfig { kind: LayoutKind::Rect, pitch_mm: 0.8, counts }),
        detector: DetectorConfig { n_s: n, n_t: n, pitch_mm: 0.1 },
        angular: AngularConfig { k_s: k, k_t: k, basis, aperture_mm: 10.0 },
        pose: Pose::facing(300.0),
        array_grid: None,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Shifts one transport kernel after the dense reference is assembled.
    CorruptKernel,
}

#[derive(Clone, Copy, Debug)]
pub struct SelftestOptions {
    pub seeds: u64,
    pub base_seed: u64,
    pub fault: Fault,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions { seeds: 10, base_seed: 0, fault: Fault::None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, max_error: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<4} {:<28} max error {:.3e} (tolerance {:.1e})",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.max_error,
                c.tolerance
            )?;
        }
        Ok(())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// `|<Ax, y> - <x, A^T y>|` relative to the larger of `‖Ax‖‖y‖`, `‖x‖‖A^T y‖`.
pub fn adjoint_mismatch(x: &[f32], ax: &[f32], y: &[f32], aty: &[f32]) -> f64 {
    let lhs = dot(ax, y);
    let rhs = dot(x, aty);
    let scale = (dot(ax, ax) * dot(y, y)).sqrt().max((dot(x, x) * dot(aty, aty)).sqrt());
    if scale == 0.0 {
        return 0.0;
    }
    (lhs - rhs).abs() / scale
}

fn worst_over_seeds(opts: &SelftestOptions, mut one: impl FnMut(&mut ChaCha8Rng) -> Result<f64>) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in 0..opts.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.base_seed.wrapping_add(s));
        worst = worst.max(one(&mut rng)?);
    }
    Ok(worst)
}

/// Adjoint test of a camera chain acting on per-slice light fields.
pub fn chain_adjoint_error(chain: &CameraChain, planes: &[PlaneGeometry], rng: &mut ChaCha8Rng) -> Result<f64> {
    let views = chain.all_views();
    let fields: Vec<LightFieldCoeffs> = planes
        .iter()
        .map(|p| LightFieldCoeffs::from_data(*p, chain.views(), random_vec(rng, p.len() * chain.views())))
        .collect::<Result<_>>()?;
    let ax = chain.forward(SceneInput::Fields(&fields), &views)?;
    let y = random_vec(rng, ax.len());
    let back = chain.adjoint(&y, &views)?;
    let x: Vec<f32> = fields.iter().flat_map(|f| f.data.iter().copied()).collect();
    let aty: Vec<f32> = back.iter().flat_map(|f| f.data.iter().copied()).collect();
    Ok(adjoint_mismatch(&x, &ax, &y, &aty))
}

fn chain_for(cfg: &CameraConfig, grid: &VolumeGrid) -> Result<(CameraChain, Vec<PlaneGeometry>)> {
    let cam = Camera::from_config(cfg)?;
    let planes = slice_planes(grid, cam.focal_main(), cfg.pose.distance_mm)?;
    Ok((CameraChain::new(cam, planes.clone())?, planes))
}

/// Adjoint test of any volume-to-volume map.
pub fn volume_adjoint_error(
    grid: VolumeGrid,
    rng: &mut ChaCha8Rng,
    apply: impl Fn(&VoxelVolume, Direction) -> Result<VoxelVolume>,
) -> Result<f64> {
    let x = VoxelVolume::from_data(grid, random_vec(rng, grid.len()))?;
    let ax = apply(&x, Direction::Forward)?;
    let y = VoxelVolume::from_data(ax.grid, random_vec(rng, ax.data.len()))?;
    let aty = apply(&y, Direction::Adjoint)?;
    Ok(adjoint_mismatch(&x.data, &ax.data, &y.data, &aty.data))
}

pub fn system_adjoint_error(op: &SystemOperator, rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random_vec(rng, op.volume_len());
    let y = random_vec(rng, op.image_len());
    let ax = op.forward(&x)?;
    let aty = op.adjoint(&y)?;
    Ok(adjoint_mismatch(&x, &ax, &y, &aty))
}

/// Largest entry-wise gap between the matrix-free transport (forward and
/// adjoint, every view) and its assembled matrix, probed column by column.
pub fn transport_dense_error(op: &TransportOp, fault: Fault) -> Result<f64> {
    let dense: Vec<Vec<f64>> = (0..op.views()).map(|k| op.dense_view(k)).collect();
    let mut op = op.clone();
    if fault == Fault::CorruptKernel {
        let spacing = op.src.grid(crate::optics::Axis::S).spacing;
        op.specs[0].0.shift += 0.5 * spacing;
    }
    let (n_in, n_out) = (op.src.len(), op.dst.len());
    let mut worst = 0.0f64;
    for (k, m) in dense.iter().enumerate() {
        let mut e = vec![0.0f32; n_in];
        for j in 0..n_in {
            e[j] = 1.0;
            let col = op.forward_view(k, &e)?;
            for i in 0..n_out {
                worst = worst.max((col[i] as f64 - m[i * n_in + j]).abs());
            }
            e[j] = 0.0;
        }
        let mut e = vec![0.0f32; n_out];
        for i in 0..n_out {
            e[i] = 1.0;
            let row = op.adjoint_view(k, &e)?;
            for j in 0..n_in {
                worst = worst.max((row[j] as f64 - m[i * n_in + j]).abs());
            }
            e[i] = 0.0;
        }
    }
    Ok(worst)
}

/// Dense Hessian of the data term plus quadratic regularizer.
pub fn dense_hessian(problem: &ReconProblem) -> Result<Vec<f64>> {
    let n = problem.len();
    let mut h = vec![0.0f64; n * n];
    let mut e = vec![0.0f32; n];
    for j in 0..n {
        e[j] = 1.0;
        let mut col = regularizer_gradient(&problem.grid, &e, problem.beta)
            .into_iter()
            .map(f64::from)
            .collect::<Vec<_>>();
        for cam in &problem.cameras {
            let views = cam.op.all_views();
            let p = cam.forward(&e, &views)?;
            for (c, v) in col.iter_mut().zip(cam.adjoint(&p, &views)?) {
                *c += v as f64;
            }
        }
        for i in 0..n {
            h[i * n + j] = col[i];
        }
        e[j] = 0.0;
    }
    Ok(h)
}

/// Largest `(x^T H x - x^T diag(d) x) / x^T diag(d) x` over random `x`;
/// nonpositive when `d` dominates.
pub fn majorizer_violation(h: &[f64], d: &[f32], trials: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = d.len();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut xhx = 0.0;
        for i in 0..n {
            let row = &h[i * n..(i + 1) * n];
            xhx += x[i] * row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        let xdx: f64 = x.iter().zip(d).map(|(v, w)| v * v * *w as f64).sum();
        worst = worst.max((xhx - xdx) / xdx);
    }
    worst
}

fn toy_problem(grid: VolumeGrid, cams: usize, beta: f64, rng: &mut ChaCha8Rng) -> Result<ReconProblem> {
    let cols = grid.len();
    let mut list = Vec::with_capacity(cams);
    for _ in 0..cams {
        let rows = 20;
        let blocks = (0..2)
            .map(|_| (0..rows * cols).map(|_| rng.gen_range(0.0f32..0.5)).collect())
            .collect();
        let op = DenseViewsOp::new(rows, cols, blocks)?;
        let y: Vec<f32> = (0..rows).map(|_| rng.gen_range(0.1f32..1.0)).collect();
        list.push(absorb_weights(Box::new(op), &y, None)?);
    }
    ReconProblem::new(list, grid, beta, 0.0, 1)
}

/// Anisotropic off-center Gaussian sized relative to `extent`, optionally
/// sampled at `theta q`.
pub fn gaussian_blob(grid: &VolumeGrid, extent: f64, theta: Option<&crate::rotation::Mat3>) -> VoxelVolume {
    let sig = [0.11, 0.08, 0.065].map(|s| s * extent);
    let c = [0.08, -0.05, 0.04].map(|s| s * extent);
    VoxelVolume::from_fn(*grid, |x, y, z| {
        let q = [x, y, z];
        let p = match theta {
            Some(t) => [0, 1, 2].map(|r| (0..3).map(|c| t[r][c] * q[c]).sum::<f64>()),
            None => q,
        };
        (0..3).map(|a| -((p[a] - c[a]) / sig[a]).powi(2) / 2.0).sum::<f64>().exp()
    })
}

/// Rotates a smooth off-center Gaussian with the shear pipeline and compares
/// against the analytically rotated one; returns the NRMSE.
pub fn rotation_nrmse(n: usize, yaw: f64, pitch: f64, roll: f64) -> Result<f64> {
    let grid = VolumeGrid::cube(n, 1.0)?;
    let plan = decompose_rotation(yaw, pitch, roll)?;
    let extent = n as f64;
    let rotated = rotate_volume(&plan, &gaussian_blob(&grid, extent, None), Direction::Forward)?;
    let exact = gaussian_blob(&rotated.grid, extent, Some(&plan.theta));
    crate::metrics::nrmse(&exact.data, &rotated.data)
}

pub fn run_selftest(opts: &SelftestOptions) -> Result<SelftestReport> {
    let mut report = SelftestReport::default();
    let grid = VolumeGrid::cube(6, 1.0)?;

    let single = tiny_single_config(16, 2, AngularBasis::Pillbox);
    let (chain, planes) = chain_for(&single, &grid)?;
    let e = worst_over_seeds(opts, |rng| chain_adjoint_error(&chain, &planes, rng))?;
    report.checks.push(CheckResult::new("adjoint/single-lens", e, ADJOINT_TOL));

    let pleno = tiny_plenoptic_config([3, 3], 24, 2, AngularBasis::Pillbox);
    let (chain, planes) = chain_for(&pleno, &grid)?;
    let e = worst_over_seeds(opts, |rng| chain_adjoint_error(&chain, &planes, rng))?;
    report.checks.push(CheckResult::new("adjoint/plenoptic", e, ADJOINT_TOL));

    let shear = ShearOp::new(0, [0.0, 0.3, -0.2])?;
    let e = worst_over_seeds(opts, |rng| volume_adjoint_error(grid, rng, |v, d| shear.apply(v, d)))?;
    report.checks.push(CheckResult::new("adjoint/shear", e, ADJOINT_TOL));

    let plan = decompose_rotation(25.0, -10.0, 5.0)?;
    let e = worst_over_seeds(opts, |rng| volume_adjoint_error(grid, rng, |v, d| rotate_volume(&plan, v, d)))?;
    report.checks.push(CheckResult::new("adjoint/rotation", e, ADJOINT_TOL));

    let mut posed = single.clone();
    posed.pose.yaw_deg = 30.0;
    let sys = SystemOperator::from_config(&posed, grid)?;
    let e = worst_over_seeds(opts, |rng| system_adjoint_error(&sys, rng))?;
    report.checks.push(CheckResult::new("adjoint/system", e, ADJOINT_TOL));

    // scene plane 8x8 at 1 mm, detector 10x10 at 0.1 mm: 6400 entries per view
    let scene = PlaneGeometry::new(8, 8, 1.0, 1.0, scene_to_angular(50.0, 320.0)?)?;
    let cam = Camera::from_config(&tiny_single_config(10, 2, AngularBasis::Pillbox))?;
    let op = TransportOp::new(scene, *cam.detector(), cam.angular().clone(), OpStats::new())?;
    let e = transport_dense_error(&op, opts.fault)?;
    report.checks.push(CheckResult::new("dense-oracle/transport", e, DENSE_TOL));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.base_seed ^ 0x5eed);
    let problem = toy_problem(VolumeGrid::new([4, 4, 3], [1.0; 3])?, 2, 0.5, &mut rng)?;
    let h = dense_hessian(&problem)?;
    let d = problem.majorizer_diag()?;
    let v = majorizer_violation(&h, &d, 200, &mut rng);
    report.checks.push(CheckResult::new("majorizer/domination", v.max(0.0), MAJORIZER_TOL));

    let e = frobenius_diff(&plan.product(), &plan.theta);
    report.checks.push(CheckResult::new("rotation/decomposition", e, DECOMPOSITION_TOL));
    let e = rotation_nrmse(32, 20.0, 10.0, 5.0)?;
    report.checks.push(CheckResult::new("rotation/gaussian-nrmse", e, ROTATION_TOL));

    Ok(report)
}
