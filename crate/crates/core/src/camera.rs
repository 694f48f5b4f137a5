//! Single-lens and plenoptic camera models.
//!
//! Coordinates: the main lens sits at `z = 0` with light travelling toward the
//! detector. The angular plane is the main lens (just after refraction).

use std::sync::Arc;

use rayon::prelude::*;

use crate::config::{CameraConfig, CameraKind, LayoutKind};
use crate::error::{check_len, Error, Result};
use crate::lightfield::{AngularPlane, LightFieldCoeffs, PlaneGeometry};
use crate::optics::{Axis, SeparableAffineTransform};
use crate::transport::{readout_scale, OpStats, OccluderMask, TransportOp};

/// Ray map from a scene plane at `distance` in front of the main lens to the
/// angular plane.
pub fn scene_to_angular(focal_main: f64, distance: f64) -> Result<SeparableAffineTransform> {
    Ok(SeparableAffineTransform::translation(distance).then(&SeparableAffineTransform::refraction(
        focal_main, 0.0, 0.0,
    )?))
}

#[derive(Clone, Debug)]
pub struct SingleLensCamera {
    pub focal_main: f64,
    pub detector_distance: f64,
    pub detector: PlaneGeometry,
    pub angular: AngularPlane,
}

#[derive(Clone, Debug)]
pub struct Lenslet {
    pub center: (f64, f64),
    /// Aperture window on the array plane and its per-pixel transmission.
    pub src: PlaneGeometry,
    pub src_origin: (usize, usize),
    pub src_mask: Vec<f32>,
    /// Detector region this lenslet writes to.
    pub dst: PlaneGeometry,
    pub dst_origin: (usize, usize),
    pub dst_mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct PlenopticCamera {
    pub focal_main: f64,
    pub array_distance: f64,
    pub array_to_detector: f64,
    pub focal_micro: f64,
    pub pitch: f64,
    pub layout: LayoutKind,
    pub detector: PlaneGeometry,
    pub array: PlaneGeometry,
    pub angular: AngularPlane,
    pub lenses: Vec<Lenslet>,
    /// Union of all lenslet apertures on the array plane.
    pub mask: OccluderMask,
    /// Fraction of light through the central lenslet that lands outside its
    /// detector region and is dropped.
    pub crosstalk_fraction: f64,
}

#[derive(Clone, Debug)]
pub enum Camera {
    Single(SingleLensCamera),
    Plenoptic(PlenopticCamera),
}

impl Camera {
    pub fn from_config(cfg: &CameraConfig) -> Result<Camera> {
        match cfg.kind {
            CameraKind::Single => build_single_lens(cfg).map(Camera::Single),
            CameraKind::Plenoptic => build_plenoptic(cfg).map(Camera::Plenoptic),
        }
    }

    pub fn angular(&self) -> &AngularPlane {
        match self {
            Camera::Single(c) => &c.angular,
            Camera::Plenoptic(c) => &c.angular,
        }
    }

    pub fn focal_main(&self) -> f64 {
        match self {
            Camera::Single(c) => c.focal_main,
            Camera::Plenoptic(c) => c.focal_main,
        }
    }

    /// Sensor sampling (the detector plane without its per-lenslet maps).
    pub fn detector(&self) -> &PlaneGeometry {
        match self {
            Camera::Single(c) => &c.detector,
            Camera::Plenoptic(c) => &c.detector,
        }
    }
}

fn positive(name: &str, v: Option<f64>) -> Result<f64> {
    match v {
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(Error::InvalidGeometry(format!("{name} must be positive, got {x}"))),
        None => Err(Error::Config(format!("missing {name}"))),
    }
}

fn angular_from(cfg: &CameraConfig) -> Result<AngularPlane> {
    let a = &cfg.angular;
    AngularPlane::over_aperture(a.k_s, a.k_t, a.aperture_mm, a.aperture_mm, a.basis)
}

pub fn build_single_lens(cfg: &CameraConfig) -> Result<SingleLensCamera> {
    let focal_main = positive("focal_main_mm", Some(cfg.focal_main_mm))?;
    let d = positive("D_mm", cfg.detector_distance_mm)?;
    let det = &cfg.detector;
    let detector = PlaneGeometry::new(
        det.n_s,
        det.n_t,
        det.pitch_mm,
        det.pitch_mm,
        SeparableAffineTransform::translation(-d),
    )?;
    Ok(SingleLensCamera {
        focal_main,
        detector_distance: d,
        detector,
        angular: angular_from(cfg)?,
    })
}

/// Lenslet centers on the array plane, row by row.
pub fn lenslet_centers(layout: LayoutKind, pitch: f64, counts: [usize; 2]) -> Vec<(f64, f64)> {
    let [nx, ny] = counts;
    let mut out = Vec::with_capacity(nx * ny);
    match layout {
        LayoutKind::Rect => {
            for j in 0..ny {
                for i in 0..nx {
                    out.push((
                        (i as f64 - (nx as f64 - 1.0) / 2.0) * pitch,
                        (j as f64 - (ny as f64 - 1.0) / 2.0) * pitch,
                    ));
                }
            }
        }
        LayoutKind::Hex => {
            let row = pitch * 3f64.sqrt() / 2.0;
            for j in 0..ny {
                let shift = if j % 2 == 1 { 0.25 * pitch } else { -0.25 * pitch };
                for i in 0..nx {
                    out.push((
                        (i as f64 - (nx as f64 - 1.0) / 2.0) * pitch + shift,
                        (j as f64 - (ny as f64 - 1.0) / 2.0) * row,
                    ));
                }
            }
        }
    }
    out
}

fn nearest(points: &[(f64, f64)], s: f64, t: f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &(x, y)) in points.iter().enumerate() {
        let d = (s - x).powi(2) + (t - y).powi(2);
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// Ray map from the detector side of lenslet `center` to the angular plane.
fn lenslet_detector_map(
    array_distance: f64,
    array_to_detector: f64,
    focal_micro: f64,
    center: (f64, f64),
) -> Result<SeparableAffineTransform> {
    // undo detector propagation, undo microlens refraction, back to the main lens
    let undo_lens = SeparableAffineTransform::refraction(-focal_micro, center.0, center.1)?;
    Ok(SeparableAffineTransform::translation(-array_to_detector)
        .then(&undo_lens)
        .then(&SeparableAffineTransform::translation(-array_distance)))
}

struct Bbox {
    s0: usize,
    t0: usize,
    s1: usize,
    t1: usize,
}

impl Bbox {
    fn empty() -> Self {
        Bbox { s0: usize::MAX, t0: usize::MAX, s1: 0, t1: 0 }
    }
    fn add(&mut self, s: usize, t: usize) {
        self.s0 = self.s0.min(s);
        self.t0 = self.t0.min(t);
        self.s1 = self.s1.max(s);
        self.t1 = self.t1.max(t);
    }
    fn is_empty(&self) -> bool {
        self.s0 == usize::MAX
    }
}

pub fn build_plenoptic(cfg: &CameraConfig) -> Result<PlenopticCamera> {
    let focal_main = positive("focal_main_mm", Some(cfg.focal_main_mm))?;
    let d_mu_m = positive("D_mu_m_mm", cfg.array_distance_mm)?;
    let d_d_mu = positive("D_d_mu_mm", cfg.array_to_detector_mm)?;
    let f_mu = positive("f_mu_mm", cfg.focal_micro_mm)?;
    let layout = cfg
        .lens_layout
        .as_ref()
        .ok_or_else(|| Error::Config("missing lens_layout".into()))?;
    let pitch = positive("lens pitch", Some(layout.pitch_mm))?;
    if layout.counts[0] == 0 || layout.counts[1] == 0 {
        return Err(Error::InvalidGeometry("lens layout needs at least one lenslet".into()));
    }
    let angular = angular_from(cfg)?;
    let det = &cfg.detector;
    let detector = PlaneGeometry::new(
        det.n_s,
        det.n_t,
        det.pitch_mm,
        det.pitch_mm,
        SeparableAffineTransform::translation(-(d_mu_m + d_d_mu)),
    )?;
    let to_array = SeparableAffineTransform::translation(-d_mu_m);
    let array = match &cfg.array_grid {
        Some(g) => PlaneGeometry::new(g.n_s, g.n_t, g.pitch_mm, g.pitch_mm, to_array)?,
        None => {
            let sp = det.pitch_mm * d_mu_m / (d_mu_m + d_d_mu);
            PlaneGeometry::new(det.n_s, det.n_t, sp, sp, to_array)?
        }
    };

    let centers = lenslet_centers(layout.kind, pitch, layout.counts);
    let image_scale = (d_mu_m + d_d_mu) / d_mu_m;
    let image_centers: Vec<(f64, f64)> =
        centers.iter().map(|&(x, y)| (x * image_scale, y * image_scale)).collect();

    // aperture ownership on the array plane
    let (ags, agt) = (array.grid(Axis::S), array.grid(Axis::T));
    let mut src_owner = vec![usize::MAX; array.len()];
    let mut src_boxes: Vec<Bbox> = centers.iter().map(|_| Bbox::empty()).collect();
    for it in 0..array.n_t {
        for is in 0..array.n_s {
            let (s, t) = (ags.sample(is), agt.sample(it));
            let (mu, dist) = nearest(&centers, s, t);
            let (cx, cy) = centers[mu];
            let inside = match layout.kind {
                LayoutKind::Hex => dist <= 0.5 * pitch,
                LayoutKind::Rect => (s - cx).abs() <= 0.5 * pitch && (t - cy).abs() <= 0.5 * pitch,
            };
            if inside {
                src_owner[it * array.n_s + is] = mu;
                src_boxes[mu].add(is, it);
            }
        }
    }
    // nearest-lenslet partition of the detector
    let (dgs, dgt) = (detector.grid(Axis::S), detector.grid(Axis::T));
    let mut dst_owner = vec![0usize; detector.len()];
    let mut dst_boxes: Vec<Bbox> = centers.iter().map(|_| Bbox::empty()).collect();
    for it in 0..detector.n_t {
        for is in 0..detector.n_s {
            let (mu, _) = nearest(&image_centers, dgs.sample(is), dgt.sample(it));
            dst_owner[it * detector.n_s + is] = mu;
            dst_boxes[mu].add(is, it);
        }
    }

    let mut lenses = Vec::with_capacity(centers.len());
    for (mu, &center) in centers.iter().enumerate() {
        let sb = &src_boxes[mu];
        let db = &dst_boxes[mu];
        if sb.is_empty() {
            return Err(Error::InvalidGeometry(format!(
                "lenslet {mu} covers no array-plane samples; refine the array grid"
            )));
        }
        if db.is_empty() {
            return Err(Error::InvalidGeometry(format!("lenslet {mu} owns no detector pixels")));
        }
        let src = array.window(sb.s0, sb.t0, sb.s1 - sb.s0 + 1, sb.t1 - sb.t0 + 1)?;
        let mut src_mask = Vec::with_capacity(src.len());
        for it in sb.t0..=sb.t1 {
            for is in sb.s0..=sb.s1 {
                src_mask.push(if src_owner[it * array.n_s + is] == mu { 1.0 } else { 0.0 });
            }
        }
        let map = lenslet_detector_map(d_mu_m, d_d_mu, f_mu, center)?;
        let mut dst = detector.window(db.s0, db.t0, db.s1 - db.s0 + 1, db.t1 - db.t0 + 1)?;
        dst.to_angular = map;
        let mut dst_mask = Vec::with_capacity(dst.len());
        for it in db.t0..=db.t1 {
            for is in db.s0..=db.s1 {
                dst_mask.push(dst_owner[it * detector.n_s + is] == mu);
            }
        }
        lenses.push(Lenslet {
            center,
            src,
            src_origin: (sb.s0, sb.t0),
            src_mask,
            dst,
            dst_origin: (db.s0, db.t0),
            dst_mask,
        });
    }
    let mask = OccluderMask::new(
        array,
        src_owner.iter().map(|&o| if o == usize::MAX { 0.0 } else { 1.0 }).collect(),
    )?;
    let mut cam = PlenopticCamera {
        focal_main,
        array_distance: d_mu_m,
        array_to_detector: d_d_mu,
        focal_micro: f_mu,
        pitch,
        layout: layout.kind,
        detector,
        array,
        angular,
        lenses,
        mask,
        crosstalk_fraction: 0.0,
    };
    cam.crosstalk_fraction = crosstalk(&cam)?;
    Ok(cam)
}

/// Light from the lenslet nearest the axis that misses its own region.
fn crosstalk(cam: &PlenopticCamera) -> Result<f64> {
    let (mu, _) = nearest(&cam.lenses.iter().map(|l| l.center).collect::<Vec<_>>(), 0.0, 0.0);
    let lens = &cam.lenses[mu];
    let (w_s, w_t) = (lens.dst.n_s, lens.dst.n_t);
    let (o_s, o_t) = lens.dst_origin;
    let s0 = o_s.saturating_sub(w_s);
    let t0 = o_t.saturating_sub(w_t);
    let s1 = (o_s + 2 * w_s).min(cam.detector.n_s);
    let t1 = (o_t + 2 * w_t).min(cam.detector.n_t);
    let mut wide = cam.detector.window(s0, t0, s1 - s0, t1 - t0)?;
    wide.to_angular = lens.dst.to_angular;
    let op = TransportOp::new(lens.src, wide, cam.angular, OpStats::new())?;
    let (mut inside, mut total) = (0.0f64, 0.0f64);
    for k in 0..cam.angular.len() {
        let out = op.forward_view(k, &lens.src_mask)?;
        for it in 0..wide.n_t {
            for is in 0..wide.n_s {
                let v = out[it * wide.n_s + is] as f64;
                total += v;
                let (gs, gt) = (s0 + is, t0 + it);
                if gs >= o_s && gs < o_s + w_s && gt >= o_t && gt < o_t + w_t {
                    let local = (gt - o_t) * w_s + (gs - o_s);
                    if lens.dst_mask[local] {
                        inside += v;
                    }
                }
            }
        }
    }
    Ok(if total > 0.0 { (1.0 - inside / total).max(0.0) } else { 0.0 })
}

/// Scene light fields handed to a camera chain, one entry per slice.
#[derive(Clone, Copy)]
pub enum SceneInput<'a> {
    /// Independent coefficients for every view.
    Fields(&'a [LightFieldCoeffs]),
    /// One spatial buffer per slice shared by all views.
    Shared(&'a [Vec<f32>]),
}

impl<'a> SceneInput<'a> {
    fn slices(&self) -> usize {
        match self {
            SceneInput::Fields(f) => f.len(),
            SceneInput::Shared(s) => s.len(),
        }
    }

    fn view(&self, slice: usize, k: usize) -> &'a [f32] {
        match self {
            SceneInput::Fields(f) => f[slice].view(k),
            SceneInput::Shared(s) => &s[slice],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlenopticOrder {
    /// Accumulate all slices on the array plane, then one pass per lenslet.
    Factored,
    /// Push every slice through every lenslet separately.
    Unfactored,
}

/// A camera compiled against a fixed set of scene planes.
#[derive(Clone, Debug)]
pub struct CameraChain {
    pub camera: Camera,
    pub scene_planes: Vec<PlaneGeometry>,
    /// Scene to detector (single lens) or scene to array plane (plenoptic).
    pub scene_ops: Vec<TransportOp>,
    pub lens_ops: Vec<TransportOp>,
    lens_scales: Vec<f32>,
    detector_scale: f32,
    pub order: PlenopticOrder,
    stats: Arc<OpStats>,
}

impl CameraChain {
    pub fn new(camera: Camera, scene_planes: Vec<PlaneGeometry>) -> Result<Self> {
        let stats = OpStats::new();
        let angular = *camera.angular();
        let mut lens_ops = Vec::new();
        let mut lens_scales = Vec::new();
        let mut detector_scale = 1.0;
        let dst = match &camera {
            Camera::Single(c) => {
                detector_scale = readout_scale(&c.detector, &angular)?;
                c.detector
            }
            Camera::Plenoptic(c) => {
                for l in &c.lenses {
                    lens_ops.push(TransportOp::new(l.src, l.dst, angular, stats.clone())?);
                    lens_scales.push(readout_scale(&l.dst, &angular)?);
                }
                c.array
            }
        };
        let mut scene_ops = Vec::with_capacity(scene_planes.len());
        for p in &scene_planes {
            scene_ops.push(TransportOp::new(*p, dst, angular, stats.clone())?);
        }
        let chain = CameraChain {
            camera,
            scene_planes,
            scene_ops,
            lens_ops,
            lens_scales,
            detector_scale,
            order: PlenopticOrder::Factored,
            stats,
        };
        chain.check_unimodular()?;
        Ok(chain)
    }

    fn check_unimodular(&self) -> Result<()> {
        let planes = self
            .scene_planes
            .iter()
            .chain(self.lens_ops.iter().map(|o| &o.dst))
            .chain(std::iter::once(self.camera.detector()));
        for p in planes {
            let (a, b) = p.to_angular.dets();
            if (a.abs() - 1.0).abs() > 1e-9 || (b.abs() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidGeometry(format!(
                    "camera chain transform is not unimodular (dets {a}, {b})"
                )));
            }
        }
        Ok(())
    }

    pub fn with_order(mut self, order: PlenopticOrder) -> Self {
        self.order = order;
        self
    }

    pub fn stats(&self) -> &Arc<OpStats> {
        &self.stats
    }

    pub fn views(&self) -> usize {
        self.camera.angular().len()
    }

    pub fn detector_len(&self) -> usize {
        self.camera.detector().len()
    }

    pub fn all_views(&self) -> Vec<usize> {
        (0..self.views()).collect()
    }

    fn check_scene(&self, scene: &SceneInput) -> Result<()> {
        check_len(self.scene_planes.len(), scene.slices())?;
        if let SceneInput::Fields(f) = scene {
            for (p, lf) in self.scene_planes.iter().zip(f.iter()) {
                if !lf.plane.same_grid(p) || lf.views != self.views() {
                    return Err(Error::GeometryMismatch("scene field does not match chain".into()));
                }
            }
        } else if let SceneInput::Shared(s) = scene {
            for (p, v) in self.scene_planes.iter().zip(s.iter()) {
                check_len(p.len(), v.len())?;
            }
        }
        Ok(())
    }

    /// `y = A f` restricted to the given views.
    pub fn forward(&self, scene: SceneInput, views: &[usize]) -> Result<Vec<f32>> {
        self.check_scene(&scene)?;
        let parts: Vec<Vec<f32>> = views
            .par_iter()
            .map(|&k| self.forward_view(&scene, k))
            .collect::<Result<_>>()?;
        let mut y = vec![0.0f32; self.detector_len()];
        for p in &parts {
            for (a, b) in y.iter_mut().zip(p) {
                *a += b;
            }
        }
        Ok(y)
    }

    /// Detector contribution of one view, including the measurement scale.
    fn forward_view(&self, scene: &SceneInput, k: usize) -> Result<Vec<f32>> {
        match &self.camera {
            Camera::Single(_) => {
                let mut det = vec![0.0f32; self.detector_len()];
                for (s, op) in self.scene_ops.iter().enumerate() {
                    add_into(&mut det, &op.forward_view(k, scene.view(s, k))?);
                }
                let r = self.detector_scale;
                det.iter_mut().for_each(|v| *v *= r);
                Ok(det)
            }
            Camera::Plenoptic(cam) => {
                let mut det = vec![0.0f32; self.detector_len()];
                match self.order {
                    PlenopticOrder::Factored => {
                        let mut arr = vec![0.0f32; cam.array.len()];
                        for (s, op) in self.scene_ops.iter().enumerate() {
                            add_into(&mut arr, &op.forward_view(k, scene.view(s, k))?);
                        }
                        self.lenses_forward(cam, k, &arr, &mut det)?;
                    }
                    PlenopticOrder::Unfactored => {
                        for (s, op) in self.scene_ops.iter().enumerate() {
                            let arr = op.forward_view(k, scene.view(s, k))?;
                            self.lenses_forward(cam, k, &arr, &mut det)?;
                        }
                    }
                }
                Ok(det)
            }
        }
    }

    fn lenses_forward(&self, cam: &PlenopticCamera, k: usize, arr: &[f32], det: &mut [f32]) -> Result<()> {
        for ((lens, op), &scale) in cam.lenses.iter().zip(&self.lens_ops).zip(&self.lens_scales) {
            let mut w = extract(arr, cam.array.n_s, lens.src_origin, (lens.src.n_s, lens.src.n_t));
            for (x, m) in w.iter_mut().zip(&lens.src_mask) {
                *x *= m;
            }
            let d = op.forward_view(k, &w)?;
            let (o_s, o_t) = lens.dst_origin;
            for it in 0..lens.dst.n_t {
                for is in 0..lens.dst.n_s {
                    let local = it * lens.dst.n_s + is;
                    if lens.dst_mask[local] {
                        det[(o_t + it) * cam.detector.n_s + o_s + is] += scale * d[local];
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-slice adjoint images of one view.
    fn adjoint_view(&self, y: &[f32], k: usize) -> Result<Vec<Vec<f32>>> {
        match &self.camera {
            Camera::Single(_) => {
                let r = self.detector_scale;
                let g: Vec<f32> = y.iter().map(|v| v * r).collect();
                self.scene_ops.iter().map(|op| op.adjoint_view(k, &g)).collect()
            }
            Camera::Plenoptic(cam) => {
                let mut arr = vec![0.0f32; cam.array.len()];
                for ((lens, op), &scale) in cam.lenses.iter().zip(&self.lens_ops).zip(&self.lens_scales) {
                    let (o_s, o_t) = lens.dst_origin;
                    let mut g = vec![0.0f32; lens.dst.len()];
                    for it in 0..lens.dst.n_t {
                        for is in 0..lens.dst.n_s {
                            let local = it * lens.dst.n_s + is;
                            if lens.dst_mask[local] {
                                g[local] = scale * y[(o_t + it) * cam.detector.n_s + o_s + is];
                            }
                        }
                    }
                    let a = op.adjoint_view(k, &g)?;
                    let (o_s, o_t) = lens.src_origin;
                    for it in 0..lens.src.n_t {
                        for is in 0..lens.src.n_s {
                            let local = it * lens.src.n_s + is;
                            arr[(o_t + it) * cam.array.n_s + o_s + is] += lens.src_mask[local] * a[local];
                        }
                    }
                }
                self.scene_ops.iter().map(|op| op.adjoint_view(k, &arr)).collect()
            }
        }
    }

    /// `A^T y` as per-slice light fields; views outside `views` are zero.
    pub fn adjoint(&self, y: &[f32], views: &[usize]) -> Result<Vec<LightFieldCoeffs>> {
        check_len(self.detector_len(), y.len())?;
        let parts: Vec<(usize, Vec<Vec<f32>>)> = views
            .par_iter()
            .map(|&k| self.adjoint_view(y, k).map(|v| (k, v)))
            .collect::<Result<_>>()?;
        let mut out: Vec<LightFieldCoeffs> = self
            .scene_planes
            .iter()
            .map(|p| LightFieldCoeffs::zeros(*p, self.views()))
            .collect();
        for (k, slices) in parts {
            for (lf, v) in out.iter_mut().zip(slices) {
                add_into(lf.view_mut(k), &v);
            }
        }
        Ok(out)
    }

    /// `A^T y` summed over the selected views, one buffer per slice.
    pub fn adjoint_view_sum(&self, y: &[f32], views: &[usize]) -> Result<Vec<Vec<f32>>> {
        check_len(self.detector_len(), y.len())?;
        let parts: Vec<Vec<Vec<f32>>> = views
            .par_iter()
            .map(|&k| self.adjoint_view(y, k))
            .collect::<Result<_>>()?;
        let mut out: Vec<Vec<f32>> = self.scene_planes.iter().map(|p| vec![0.0; p.len()]).collect();
        for slices in parts {
            for (acc, v) in out.iter_mut().zip(slices) {
                add_into(acc, &v);
            }
        }
        Ok(out)
    }
}

fn add_into(acc: &mut [f32], v: &[f32]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn extract(buf: &[f32], row_len: usize, origin: (usize, usize), size: (usize, usize)) -> Vec<f32> {
    let mut out = Vec::with_capacity(size.0 * size.1);
    for it in 0..size.1 {
        let start = (origin.1 + it) * row_len + origin.0;
        out.extend_from_slice(&buf[start..start + size.0]);
    }
    out
}
