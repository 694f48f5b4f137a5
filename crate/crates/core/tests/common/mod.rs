#![allow(dead_code)]

use lftomo_core::camera::{Camera, CameraChain};
use lftomo_core::lightfield::{basis_volume, AngularBasis, AngularPlane, PlaneGeometry};
use lftomo_core::optics::{Axis, AxisMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

pub fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f32]) -> Vec<f64> {
    (0..rows)
        .map(|i| (0..cols).map(|j| m[i * cols + j] * x[j] as f64).sum())
        .collect()
}

pub fn matvec_t(m: &[f64], rows: usize, cols: usize, y: &[f32]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j] += m[i * cols + j] * y[i] as f64;
        }
    }
    out
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`, started from `pieces`
/// panels so that kinks cannot hide between the first samples.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, pieces: usize) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|p| {
            let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
            let m = 0.5 * (lo + hi);
            let (fa, fb, fm) = (f(lo), f(hi), f(m));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, fa, hi, fb, m, fm, whole, tol / pieces as f64, 40)
        })
        .sum()
}

fn invert(m: &AxisMap) -> AxisMap {
    let d = m.det();
    let [[a, b], [c, e]] = m.m;
    let inv = [[e / d, -b / d], [-c / d, a / d]];
    AxisMap {
        m: inv,
        offset: [
            -(inv[0][0] * m.offset[0] + inv[0][1] * m.offset[1]),
            -(inv[1][0] * m.offset[0] + inv[1][1] * m.offset[1]),
        ],
    }
}

/// Length of `{u : lo <= a + b u <= hi}` intersected with `(u_lo, u_hi)`.
fn affine_interval(a: f64, b: f64, lo: f64, hi: f64) -> (f64, f64) {
    if b == 0.0 {
        return if a >= lo && a <= hi { (f64::NEG_INFINITY, f64::INFINITY) } else { (1.0, 0.0) };
    }
    let (x, y) = ((lo - a) / b, (hi - a) / b);
    (x.min(y), x.max(y))
}

/// Transport matrix entry `(i, j)` along one axis before division by the
/// destination basis volume: the overlap integral over rays on the
/// destination plane of the destination cell, the angular cell of view `k`,
/// and the source cell reached by the exact composed ray map.
pub fn quadrature_entry(src: &PlaneGeometry, dst: &PlaneGeometry, angular: &AngularPlane, k: usize, axis: Axis, i: usize, j: usize) -> f64 {
    let map_p = *dst.to_angular.axis(axis);
    let inv_q = invert(src.to_angular.axis(axis));
    let (ks, kt) = angular.view_indices(k);
    let kk = if axis == Axis::S { ks } else { kt };
    let ang = angular.grid(axis);
    let (a_lo, a_hi) = ang.cell(kk);
    let (j_lo, j_hi) = src.grid(axis).cell(j);
    let (i_lo, i_hi) = dst.grid(axis).cell(i);
    // angular position w = w0 + w1 u, source position x = x0 + x1 u, for fixed s
    let coeffs = move |s: f64| {
        let (w0, om0) = map_p.apply(s, 0.0);
        let (w1, om1) = (map_p.m[0][1], map_p.m[1][1]);
        let (x0, _) = inv_q.apply(w0, om0);
        let x1 = inv_q.m[0][0] * w1 + inv_q.m[0][1] * om1;
        (w0, w1, x0, x1)
    };
    let f: Box<dyn Fn(f64) -> f64> = match angular.basis {
        AngularBasis::Pillbox => Box::new(move |s| {
            let (w0, w1, x0, x1) = coeffs(s);
            let (l1, h1) = affine_interval(w0, w1, a_lo, a_hi);
            let (l2, h2) = affine_interval(x0, x1, j_lo, j_hi);
            (h1.min(h2) - l1.max(l2)).max(0.0)
        }),
        AngularBasis::Dirac => {
            let centre = ang.sample(kk);
            let d0 = angular.spacing(axis);
            Box::new(move |s| {
                let (w0, w1, x0, x1) = coeffs(s);
                let u = (centre - w0) / w1;
                let x = x0 + x1 * u;
                if x >= j_lo && x < j_hi {
                    d0 / w1.abs()
                } else {
                    0.0
                }
            })
        }
    };
    adaptive_simpson(&*f, i_lo, i_hi, 1e-12, 97)
}

/// Assembles the matrix of view `k` (detector x scene slice) from the dense
/// transport factors, lenslet masks, and readout scales.
pub fn dense_chain(chain: &CameraChain, slice: usize, k: usize) -> Vec<f64> {
    let scene = chain.scene_ops[slice].dense_view(k);
    let n_scene = chain.scene_planes[slice].len();
    let angular = chain.camera.angular();
    match &chain.camera {
        Camera::Single(c) => {
            let scale = basis_volume(&c.detector, angular).unwrap();
            scene.iter().map(|v| v * scale).collect()
        }
        Camera::Plenoptic(cam) => {
            let mut m = vec![0.0; cam.detector.len() * n_scene];
            for (lens, op) in cam.lenses.iter().zip(&chain.lens_ops) {
                let l = op.dense_view(k);
                let scale = basis_volume(&lens.dst, angular).unwrap();
                let n_src = lens.src.len();
                for dt in 0..lens.dst.n_t {
                    for ds in 0..lens.dst.n_s {
                        let dl = dt * lens.dst.n_s + ds;
                        if !lens.dst_mask[dl] {
                            continue;
                        }
                        let det = (lens.dst_origin.1 + dt) * cam.detector.n_s + lens.dst_origin.0 + ds;
                        for st in 0..lens.src.n_t {
                            for ss in 0..lens.src.n_s {
                                let sl = st * lens.src.n_s + ss;
                                let w = scale * l[dl * n_src + sl] * lens.src_mask[sl] as f64;
                                if w == 0.0 {
                                    continue;
                                }
                                let arr = (lens.src_origin.1 + st) * cam.array.n_s + lens.src_origin.0 + ss;
                                for j in 0..n_scene {
                                    m[det * n_scene + j] += w * scene[arr * n_scene + j];
                                }
                            }
                        }
                    }
                }
            }
            m
        }
    }
}

