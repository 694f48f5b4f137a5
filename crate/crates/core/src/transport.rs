//! Light transport between two optical planes.
//!
//! Per angular view the transport matrix factors into an `s` blur and a `t`
//! blur. Each 1D factor has entries
//!
//! ```text
//! B[i][j] = ∫_{cell j} g(x - alpha * x_i - shift) dx
//! ```
//!
//! where `g` is a rect (Dirac angular basis) or a trapezoid (pillbox angular
//! basis). Entries are evaluated on the fly from the closed-form cell
//! integrals; no matrix is ever stored.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::kernel::BoxSpline;
use crate::lightfield::{axis_volume, AngularBasis, AngularPlane, Grid1d, LightFieldCoeffs, PlaneGeometry};
use crate::optics::Axis;

/// Operation counters shared by all operators of one camera.
#[derive(Debug, Default)]
pub struct OpStats {
    transport_applies: AtomicU64,
    kernel_evals: AtomicU64,
}

impl OpStats {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn transport_applies(&self) -> u64 {
        self.transport_applies.load(Ordering::Relaxed)
    }

    pub fn kernel_evals(&self) -> u64 {
        self.kernel_evals.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.transport_applies.store(0, Ordering::Relaxed);
        self.kernel_evals.store(0, Ordering::Relaxed);
    }

    fn add_apply(&self, kernel_evals: u64) {
        self.transport_applies.fetch_add(1, Ordering::Relaxed);
        self.kernel_evals.fetch_add(kernel_evals, Ordering::Relaxed);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Adjoint,
}

/// One 1D transport factor.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurSpec1D {
    /// Magnification: destination sample `x_i` maps to source `alpha * x_i + shift`.
    pub alpha: f64,
    pub shift: f64,
    /// Blur kernel `h * g` (rect or trapezoid).
    pub kernel: BoxSpline,
    pub src: Grid1d,
    pub dst: Grid1d,
}

impl BlurSpec1D {
    /// A spec that copies samples between identical grids.
    pub fn identity(grid: Grid1d) -> Self {
        BlurSpec1D {
            alpha: 1.0,
            shift: 0.0,
            kernel: BoxSpline::new(&[grid.spacing], 1.0),
            src: grid,
            dst: grid,
        }
    }

    /// Source-coordinate center of the kernel for destination sample `i`.
    #[inline]
    pub fn center(&self, dst_index: usize) -> f64 {
        self.alpha * self.dst.sample(dst_index) + self.shift
    }

    /// Plateau height `h` of the kernel.
    pub fn height(&self) -> f64 {
        self.kernel.value(0.0)
    }

    /// Exact `∫_{lo}^{hi} h g(x - alpha x_i - shift) dx`.
    pub fn kernel_row_integral(&self, dst_index: usize, lo: f64, hi: f64) -> f64 {
        let c = self.center(dst_index);
        self.kernel.integral(lo - c, hi - c)
    }

    /// Matrix entry `(i, j)`.
    pub fn entry(&self, dst_index: usize, src_index: usize) -> f64 {
        let (lo, hi) = self.src.cell(src_index);
        self.kernel_row_integral(dst_index, lo, hi)
    }

    /// Contiguous source cells touched by row `i`, if any.
    pub fn row_support(&self, dst_index: usize) -> Option<(usize, usize)> {
        let c = self.center(dst_index);
        let r = self.kernel.support();
        let lo = (self.src.index_of(c - r) - 0.5).ceil().max(0.0);
        let hi = (self.src.index_of(c + r) + 0.5).floor().min(self.src.n as f64 - 1.0);
        (hi >= lo).then_some((lo as usize, hi as usize))
    }

    /// Dense `dst.n x src.n` matrix, row-major. Reference use only.
    pub fn dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dst.n * self.src.n];
        for i in 0..self.dst.n {
            for j in 0..self.src.n {
                m[i * self.src.n + j] = self.entry(i, j);
            }
        }
        m
    }

    fn row_taps(&self) -> Taps {
        let mut taps = Taps::with_rows(self.dst.n);
        for i in 0..self.dst.n {
            if let Some((lo, hi)) = self.row_support(i) {
                taps.push_row(lo, (lo..=hi).map(|j| self.entry(i, j)));
            } else {
                taps.push_row(0, std::iter::empty());
            }
        }
        taps
    }

    fn column_taps(&self) -> Taps {
        // rows touching column j are contiguous because alpha is monotone
        let mut taps = Taps::with_rows(self.src.n);
        let mut ranges: Vec<Option<(usize, usize)>> = vec![None; self.src.n];
        for i in 0..self.dst.n {
            if let Some((lo, hi)) = self.row_support(i) {
                for r in ranges.iter_mut().take(hi + 1).skip(lo) {
                    *r = Some(match *r {
                        None => (i, i),
                        Some((a, b)) => (a.min(i), b.max(i)),
                    });
                }
            }
        }
        for (j, r) in ranges.iter().enumerate() {
            match r {
                Some((a, b)) => taps.push_row(*a, (*a..=*b).map(|i| self.entry(i, j))),
                None => taps.push_row(0, std::iter::empty()),
            }
        }
        taps
    }
}

/// Compressed per-output tap lists.
struct Taps {
    first: Vec<usize>,
    offsets: Vec<usize>,
    weights: Vec<f32>,
}

impl Taps {
    fn with_rows(n: usize) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        Taps {
            first: Vec::with_capacity(n),
            offsets,
            weights: Vec::new(),
        }
    }

    fn push_row(&mut self, first: usize, w: impl Iterator<Item = f64>) {
        self.first.push(first);
        self.weights.extend(w.map(|x| x as f32));
        self.offsets.push(self.weights.len());
    }

    fn evals(&self) -> u64 {
        self.weights.len() as u64
    }

    #[inline]
    fn apply_line(&self, input: &[f32], out: &mut [f32]) {
        for (o, dst) in out.iter_mut().enumerate() {
            let w = &self.weights[self.offsets[o]..self.offsets[o + 1]];
            let first = self.first[o];
            let mut acc = 0.0f32;
            for (x, wt) in input[first..first + w.len()].iter().zip(w) {
                acc += x * wt;
            }
            *dst = acc;
        }
    }
}

const TILE: usize = 32;

/// Tiled transpose of a `rows x cols` buffer stored with `cols` fastest.
pub fn transpose_tiled(input: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    debug_assert_eq!(input.len(), rows * cols);
    let mut out = vec![0.0f32; rows * cols];
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = input[r * cols + c];
                }
            }
        }
    }
    out
}

/// Filters every line of a `lines x minor` buffer along its minor axis.
///
/// Forward computes `out_i = Σ_j B[i][j] in_j`; adjoint computes
/// `out_j = Σ_i B[i][j] in_i`. Either way each output element has a single
/// writer. Returns the filtered buffer and the number of kernel integrals
/// evaluated.
pub fn apply_blur_1d(
    spec: &BlurSpec1D,
    input: &[f32],
    lines: usize,
    direction: Direction,
) -> Result<(Vec<f32>, u64)> {
    let (n_in, n_out, taps) = match direction {
        Direction::Forward => (spec.src.n, spec.dst.n, spec.row_taps()),
        Direction::Adjoint => (spec.dst.n, spec.src.n, spec.column_taps()),
    };
    check_len(n_in * lines, input.len())?;
    let mut out = vec![0.0f32; n_out * lines];
    if n_out > 0 {
        out.par_chunks_mut(n_out)
            .zip(input.par_chunks(n_in))
            .with_min_len(16)
            .for_each(|(o, i)| taps.apply_line(i, o));
    }
    Ok((out, taps.evals()))
}

/// Two-pass separable filter: minor axis, transpose, minor axis, transpose back.
fn separable_pass(
    spec_s: &BlurSpec1D,
    spec_t: &BlurSpec1D,
    input: &[f32],
    direction: Direction,
) -> Result<(Vec<f32>, u64)> {
    let (ns_in, nt_in, ns_out, nt_out) = match direction {
        Direction::Forward => (spec_s.src.n, spec_t.src.n, spec_s.dst.n, spec_t.dst.n),
        Direction::Adjoint => (spec_s.dst.n, spec_t.dst.n, spec_s.src.n, spec_t.src.n),
    };
    check_len(ns_in * nt_in, input.len())?;
    let (a, e1) = apply_blur_1d(spec_s, input, nt_in, direction)?;
    let a = transpose_tiled(&a, nt_in, ns_out);
    let (b, e2) = apply_blur_1d(spec_t, &a, ns_out, direction)?;
    Ok((transpose_tiled(&b, ns_out, nt_out), e1 + e2))
}

/// Derives the 1D transport factor from plane `src` (q) to plane `dst` (p)
/// for angular view `k` along `axis`.
pub fn derive_blur_spec(
    src: &PlaneGeometry,
    dst: &PlaneGeometry,
    angular: &AngularPlane,
    k: usize,
    axis: Axis,
) -> Result<BlurSpec1D> {
    if k >= angular.len() {
        return Err(Error::OutOfRange(format!("view {k} of {}", angular.len())));
    }
    let map_q = src.to_angular.axis(axis);
    let map_p = dst.to_angular.axis(axis);
    let name = match axis {
        Axis::S => "su",
        Axis::T => "tv",
    };
    let inv_q = map_q.invert(name)?;
    let inv_p = map_p.invert(name)?;
    // plane positions as functions of angular-plane position w and slope ω
    let (p_q, q_q, r_q) = (inv_q.m[0][0], inv_q.m[0][1], inv_q.offset[0]);
    let (p_p, q_p, r_p) = (inv_p.m[0][0], inv_p.m[0][1], inv_p.offset[0]);
    let scale = 1.0 + p_q.abs().max(p_p.abs());
    if q_q.abs() <= 1e-12 * scale || q_p.abs() <= 1e-12 * scale {
        return Err(Error::DegenerateMapping(format!(
            "a plane is conjugate to the angular plane along {axis:?}"
        )));
    }
    let beta = q_p / q_q;
    let alpha = 1.0 / beta;
    let gamma = p_p - beta * p_q;
    let rho = r_p - beta * r_q;

    let (ks, kt) = angular.view_indices(k);
    let s_k = match axis {
        Axis::S => angular.grid(Axis::S).sample(ks),
        Axis::T => angular.grid(Axis::T).sample(kt),
    };
    let delta0 = angular.spacing(axis);
    let g_src = src.grid(axis);
    let g_dst = dst.grid(axis);

    let width = g_dst.spacing / beta.abs();
    let blur = match angular.basis {
        AngularBasis::Dirac => 0.0,
        AngularBasis::Pillbox => delta0 * gamma.abs() / beta.abs(),
    };
    let jac = map_q.det().abs() * q_q.abs();
    let mass = delta0 * width / jac;
    if !(width.is_finite() && width > 0.0 && mass.is_finite()) {
        return Err(Error::DegenerateMapping(format!(
            "zero-width image cell along {axis:?} (width {width:e})"
        )));
    }
    Ok(BlurSpec1D {
        alpha,
        shift: -alpha * (gamma * s_k + rho),
        kernel: BoxSpline::new(&[width, blur], mass),
        src: g_src,
        dst: g_dst,
    })
}

/// Per-view transport `f^p_k = (1/V^p) (B_s ⊗ B_t) f^q_k` between two planes.
#[derive(Clone, Debug)]
pub struct TransportOp {
    pub src: PlaneGeometry,
    pub dst: PlaneGeometry,
    pub angular: AngularPlane,
    pub specs: Vec<(BlurSpec1D, BlurSpec1D)>,
    /// Role-swapped specs (`dst` to `src`) used for the adjoint.
    pub reverse: Vec<(BlurSpec1D, BlurSpec1D)>,
    pub src_volume: f64,
    pub dst_volume: f64,
    adjoint_scale: f64,
    stats: Arc<OpStats>,
}

impl TransportOp {
    pub fn new(
        src: PlaneGeometry,
        dst: PlaneGeometry,
        angular: AngularPlane,
        stats: Arc<OpStats>,
    ) -> Result<Self> {
        let mut specs = Vec::with_capacity(angular.len());
        let mut reverse = Vec::with_capacity(angular.len());
        for k in 0..angular.len() {
            specs.push((
                derive_blur_spec(&src, &dst, &angular, k, Axis::S)?,
                derive_blur_spec(&src, &dst, &angular, k, Axis::T)?,
            ));
            reverse.push((
                derive_blur_spec(&dst, &src, &angular, k, Axis::S)?,
                derive_blur_spec(&dst, &src, &angular, k, Axis::T)?,
            ));
        }
        let src_volume = axis_volume(&src, &angular, Axis::S)? * axis_volume(&src, &angular, Axis::T)?;
        let dst_volume = axis_volume(&dst, &angular, Axis::S)? * axis_volume(&dst, &angular, Axis::T)?;
        let det = |p: &PlaneGeometry| {
            let (a, b) = p.to_angular.dets();
            (a * b).abs()
        };
        // (B^{pq})^T = (|det X^{0p}| / |det X^{0q}|) B^{qp}
        let adjoint_scale = det(&dst) / det(&src) / dst_volume;
        Ok(TransportOp {
            src,
            dst,
            angular,
            specs,
            reverse,
            src_volume,
            dst_volume,
            adjoint_scale,
            stats,
        })
    }

    pub fn views(&self) -> usize {
        self.specs.len()
    }

    pub fn stats(&self) -> &Arc<OpStats> {
        &self.stats
    }

    /// Transports one view from `src` to `dst`.
    pub fn forward_view(&self, k: usize, input: &[f32]) -> Result<Vec<f32>> {
        check_len(self.src.len(), input.len())?;
        let (s, t) = &self.specs[k];
        let (mut out, evals) = separable_pass(s, t, input, Direction::Forward)?;
        self.stats.add_apply(evals);
        let scale = (1.0 / self.dst_volume) as f32;
        out.iter_mut().for_each(|x| *x *= scale);
        Ok(out)
    }

    /// Adjoint of [`forward_view`](Self::forward_view), computed with the
    /// forward machinery on the role-swapped specs.
    pub fn adjoint_view(&self, k: usize, input: &[f32]) -> Result<Vec<f32>> {
        check_len(self.dst.len(), input.len())?;
        let (s, t) = &self.reverse[k];
        let (mut out, evals) = separable_pass(s, t, input, Direction::Forward)?;
        self.stats.add_apply(evals);
        let scale = self.adjoint_scale as f32;
        out.iter_mut().for_each(|x| *x *= scale);
        Ok(out)
    }

    /// Adjoint by transposed kernel application; reference path for tests.
    pub fn adjoint_view_transposed(&self, k: usize, input: &[f32]) -> Result<Vec<f32>> {
        check_len(self.dst.len(), input.len())?;
        let (s, t) = &self.specs[k];
        let (mut out, evals) = separable_pass(s, t, input, Direction::Adjoint)?;
        self.stats.add_apply(evals);
        let scale = (1.0 / self.dst_volume) as f32;
        out.iter_mut().for_each(|x| *x *= scale);
        Ok(out)
    }

    /// Applies the operator to every view of a light field.
    pub fn apply(&self, field: &LightFieldCoeffs, direction: Direction) -> Result<LightFieldCoeffs> {
        let (expect, out_plane) = match direction {
            Direction::Forward => (&self.src, self.dst),
            Direction::Adjoint => (&self.dst, self.src),
        };
        if !field.plane.same_grid(expect) || field.views != self.views() {
            return Err(Error::GeometryMismatch(
                "light field does not live on the operator's input plane".into(),
            ));
        }
        let mut out = LightFieldCoeffs::zeros(out_plane, self.views());
        for k in 0..self.views() {
            let v = match direction {
                Direction::Forward => self.forward_view(k, field.view(k))?,
                Direction::Adjoint => self.adjoint_view(k, field.view(k))?,
            };
            out.view_mut(k).copy_from_slice(&v);
        }
        Ok(out)
    }

    /// Dense matrix of view `k` (`dst.len() x src.len()`, row-major), assembled
    /// from closed-form entries. Reference use only.
    pub fn dense_view(&self, k: usize) -> Vec<f64> {
        let (s, t) = &self.specs[k];
        let bs = s.dense();
        let bt = t.dense();
        let (ns_in, nt_in) = (self.src.n_s, self.src.n_t);
        let (ns_out, nt_out) = (self.dst.n_s, self.dst.n_t);
        let n_in = ns_in * nt_in;
        let mut m = vec![0.0; ns_out * nt_out * n_in];
        for it in 0..nt_out {
            for is in 0..ns_out {
                let row = (it * ns_out + is) * n_in;
                for jt in 0..nt_in {
                    let wt = bt[it * nt_in + jt];
                    if wt == 0.0 {
                        continue;
                    }
                    for js in 0..ns_in {
                        m[row + jt * ns_in + js] = wt * bs[is * ns_in + js] / self.dst_volume;
                    }
                }
            }
        }
        m
    }
}

/// Diagonal occluder acting identically on every view.
#[derive(Clone, Debug, PartialEq)]
pub struct OccluderMask {
    pub plane: PlaneGeometry,
    pub values: Vec<f32>,
}

impl OccluderMask {
    pub fn new(plane: PlaneGeometry, values: Vec<f32>) -> Result<Self> {
        check_len(plane.len(), values.len())?;
        if values.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidParameter("mask values must lie in [0, 1]".into()));
        }
        Ok(OccluderMask { plane, values })
    }

    pub fn open(plane: PlaneGeometry) -> Self {
        OccluderMask {
            plane,
            values: vec![1.0; plane.len()],
        }
    }

    /// Binary mask from a pixel-center predicate `(s, t) -> bool`.
    pub fn rasterize(plane: PlaneGeometry, inside: impl Fn(f64, f64) -> bool) -> Self {
        let gs = plane.grid(Axis::S);
        let gt = plane.grid(Axis::T);
        let mut values = Vec::with_capacity(plane.len());
        for it in 0..plane.n_t {
            for is in 0..plane.n_s {
                values.push(if inside(gs.sample(is), gt.sample(it)) { 1.0 } else { 0.0 });
            }
        }
        OccluderMask { plane, values }
    }

    pub fn apply_view(&self, view: &mut [f32]) {
        for (x, m) in view.iter_mut().zip(&self.values) {
            *x *= m;
        }
    }

    /// `f^{p+}_k = M f^{p-}_k` for every view; self-adjoint.
    pub fn apply(&self, field: &LightFieldCoeffs) -> Result<LightFieldCoeffs> {
        if !field.plane.same_grid(&self.plane) {
            return Err(Error::GeometryMismatch("mask plane differs from light field plane".into()));
        }
        let mut out = field.clone();
        for k in 0..out.views {
            self.apply_view(out.view_mut(k));
        }
        Ok(out)
    }
}

/// Detector readout `y = V_d Σ_k f^d_k`: the pixel integral of the field
/// over position and angle.
pub fn measure(field: &LightFieldCoeffs, angular: &AngularPlane) -> Result<Vec<f32>> {
    let scale = readout_scale(&field.plane, angular)?;
    let n = field.plane.len();
    let mut y = vec![0.0f32; n];
    for k in 0..field.views {
        for (acc, x) in y.iter_mut().zip(field.view(k)) {
            *acc += x;
        }
    }
    y.iter_mut().for_each(|v| *v *= scale);
    Ok(y)
}

/// Adjoint readout: broadcasts `V_d y` into every view.
pub fn measure_adjoint(
    y: &[f32],
    plane: PlaneGeometry,
    angular: &AngularPlane,
) -> Result<LightFieldCoeffs> {
    check_len(plane.len(), y.len())?;
    let scale = readout_scale(&plane, angular)?;
    let mut out = LightFieldCoeffs::zeros(plane, angular.len());
    for k in 0..angular.len() {
        for (o, v) in out.view_mut(k).iter_mut().zip(y) {
            *o = v * scale;
        }
    }
    Ok(out)
}

pub(crate) fn readout_scale(plane: &PlaneGeometry, angular: &AngularPlane) -> Result<f32> {
    Ok((axis_volume(plane, angular, Axis::S)? * axis_volume(plane, angular, Axis::T)?) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::SeparableAffineTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene_plane(n_s: usize, n_t: usize, delta: f64, dist: f64) -> PlaneGeometry {
        let x = SeparableAffineTransform::translation(dist)
            .then(&SeparableAffineTransform::refraction(50.0, 0.0, 0.0).unwrap());
        PlaneGeometry::new(n_s, n_t, delta, delta, x).unwrap()
    }

    fn detector_plane(n_s: usize, n_t: usize, delta: f64, dist: f64) -> PlaneGeometry {
        PlaneGeometry::new(n_s, n_t, delta, delta, SeparableAffineTransform::translation(-dist)).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    fn norm(a: &[f32]) -> f64 {
        dot(a, a).sqrt()
    }

    #[test]
    fn self_transport_is_identity() {
        for basis in [AngularBasis::Dirac, AngularBasis::Pillbox] {
            let p = scene_plane(6, 5, 0.5, 280.0);
            let a = AngularPlane::over_aperture(2, 2, 10.0, 10.0, basis).unwrap();
            let spec = derive_blur_spec(&p, &p, &a, 1, Axis::S).unwrap();
            assert!((spec.alpha - 1.0).abs() < 1e-12);
            for i in 0..6 {
                for j in 0..6 {
                    let e = spec.entry(i, j);
                    if i != j {
                        assert!(e.abs() < 1e-12);
                    } else {
                        assert!(e > 0.0);
                    }
                }
            }
            let op = TransportOp::new(p, p, a, OpStats::new()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let x = random_vec(&mut rng, 30);
            for k in 0..4 {
                let y = op.forward_view(k, &x).unwrap();
                for (a, b) in x.iter().zip(&y) {
                    assert!((a - b).abs() < 1e-6, "{basis:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn identity_spec_copies() {
        let g = Grid1d::new(7, 0.3, 0.1);
        let spec = BlurSpec1D::identity(g);
        let x: Vec<f32> = (0..21).map(|i| i as f32).collect();
        let (y, _) = apply_blur_1d(&spec, &x, 3, Direction::Forward).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn one_dimensional_blur_matches_dense_and_adjoint() {
        let src = scene_plane(8, 8, 0.7, 310.0);
        let dst = detector_plane(8, 8, 0.15, 60.0);
        let a = AngularPlane::over_aperture(3, 3, 12.0, 12.0, AngularBasis::Pillbox).unwrap();
        let spec = derive_blur_spec(&src, &dst, &a, 4, Axis::S).unwrap();
        let dense = spec.dense();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = random_vec(&mut rng, 64);
        let (y, _) = apply_blur_1d(&spec, &x, 8, Direction::Forward).unwrap();
        for line in 0..8 {
            for i in 0..8 {
                let r: f64 = (0..8).map(|j| dense[i * 8 + j] * x[line * 8 + j] as f64).sum();
                assert!((r - y[line * 8 + i] as f64).abs() <= 1e-5);
            }
        }
        let z = random_vec(&mut rng, 64);
        let (zt, _) = apply_blur_1d(&spec, &z, 8, Direction::Adjoint).unwrap();
        let lhs = dot(&y, &z);
        let rhs = dot(&x, &zt);
        assert!((lhs - rhs).abs() <= 1e-4 * norm(&y) * norm(&z));
    }

    #[test]
    fn tiny_transport_matches_dense_assembly() {
        let src = scene_plane(6, 5, 0.8, 300.0);
        let dst = detector_plane(6, 5, 0.2, 60.0);
        for basis in [AngularBasis::Dirac, AngularBasis::Pillbox] {
            let a = AngularPlane::over_aperture(2, 1, 8.0, 8.0, basis).unwrap();
            let op = TransportOp::new(src, dst, a, OpStats::new()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let x = random_vec(&mut rng, 30);
            for k in 0..2 {
                let y = op.forward_view(k, &x).unwrap();
                let m = op.dense_view(k);
                for i in 0..30 {
                    let r: f64 = (0..30).map(|j| m[i * 30 + j] * x[j] as f64).sum();
                    assert!((r - y[i] as f64).abs() <= 1e-5, "{r} vs {}", y[i]);
                }
            }
        }
    }

    #[test]
    fn role_swapped_adjoint_matches_transpose() {
        let src = scene_plane(7, 6, 0.6, 320.0);
        let dst = detector_plane(9, 8, 0.12, 62.0);
        let a = AngularPlane::over_aperture(3, 2, 10.0, 10.0, AngularBasis::Pillbox).unwrap();
        let op = TransportOp::new(src, dst, a, OpStats::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 0..op.views() {
            let y = random_vec(&mut rng, dst.len());
            let swapped = op.adjoint_view(k, &y).unwrap();
            let transposed = op.adjoint_view_transposed(k, &y).unwrap();
            let scale = norm(&transposed).max(1e-30);
            let diff: f64 = swapped
                .iter()
                .zip(&transposed)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(diff <= 1e-5 * scale, "view {k}: {diff} vs {scale}");
        }
    }

    #[test]
    fn pillbox_columns_have_constant_mass_in_the_interior() {
        // matched sampling so the factor is exactly Toeplitz
        let src = scene_plane(40, 4, 0.5, 300.0);
        let dst = detector_plane(40, 4, 0.1, 60.0);
        let a = AngularPlane::over_aperture(2, 2, 10.0, 10.0, AngularBasis::Pillbox).unwrap();
        let spec = derive_blur_spec(&src, &dst, &a, 0, Axis::S).unwrap();
        let dense = spec.dense();
        let col = |j: usize| (0..40).map(|i| dense[i * 40 + j]).sum::<f64>();
        let reference = col(20);
        for j in 16..24 {
            assert!((col(j) - reference).abs() < 1e-12 * reference.abs().max(1.0));
        }
    }

    #[test]
    fn masks() {
        let p = detector_plane(4, 3, 1.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lf = LightFieldCoeffs::from_data(p, 2, random_vec(&mut rng, 24)).unwrap();
        assert_eq!(OccluderMask::open(p).apply(&lf).unwrap(), lf);
        let closed = OccluderMask::new(p, vec![0.0; 12]).unwrap();
        assert!(closed.apply(&lf).unwrap().data.iter().all(|x| *x == 0.0));
        let disc = OccluderMask::rasterize(p, |s, t| s * s + t * t <= 1.0);
        let masked = disc.apply(&lf).unwrap();
        let gs = p.grid(Axis::S);
        let gt = p.grid(Axis::T);
        for k in 0..2 {
            for it in 0..3 {
                for is in 0..4 {
                    let (s, t) = (gs.sample(is), gt.sample(it));
                    let expect = if s * s + t * t <= 1.0 { lf.get(k, is, it) } else { 0.0 };
                    assert_eq!(masked.get(k, is, it), expect);
                }
            }
        }
        assert!(OccluderMask::new(p, vec![1.5; 12]).is_err());
    }

    #[test]
    fn measurement_sums_views() {
        let p = PlaneGeometry::new(
            3,
            2,
            1.0,
            1.0,
            SeparableAffineTransform::from_axes(
                crate::optics::AxisMap { m: [[0.0, 1.0], [-1.0, 0.0]], offset: [0.0, 0.0] },
                crate::optics::AxisMap { m: [[0.0, 1.0], [-1.0, 0.0]], offset: [0.0, 0.0] },
            ),
        )
        .unwrap();
        let a = AngularPlane::over_aperture(2, 2, 2.0, 2.0, AngularBasis::Pillbox).unwrap();
        let ones = LightFieldCoeffs::from_data(p, 4, vec![1.0; 24]).unwrap();
        assert_eq!(measure(&ones, &a).unwrap(), vec![4.0; 6]);

        let mut single = LightFieldCoeffs::zeros(p, 4);
        single.view_mut(2).copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(measure(&single, &a).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = LightFieldCoeffs::from_data(p, 4, random_vec(&mut rng, 24)).unwrap();
        let y = random_vec(&mut rng, 6);
        let lhs = dot(&measure(&f, &a).unwrap(), &y);
        let rhs = dot(&f.data, &measure_adjoint(&y, p, &a).unwrap().data);
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0));
    }
}
