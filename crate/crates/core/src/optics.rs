//! Paraxial geometric optics on two-plane ray coordinates.
//!
//! A ray crossing a plane is `(s, u, t, v)`: positions `s, t` in millimeters
//! and slopes `u = ds/dz`, `v = dt/dz`, with light travelling toward `+z`.
//! Ideal thin lenses and free-space propagation act on `(s, u)` and `(t, v)`
//! independently, so every transform here is a pair of 2×2 affine maps.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub s: f64,
    pub u: f64,
    pub t: f64,
    pub v: f64,
}

impl Ray {
    pub fn new(s: f64, u: f64, t: f64, v: f64) -> Self {
        Ray { s, u, t, v }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.u.is_finite() && self.t.is_finite() && self.v.is_finite()
    }
}

/// Affine map on one `(position, slope)` pair.
///
/// ```text
/// [ pos' ]   [ m[0][0] m[0][1] ] [ pos ]   [ offset[0] ]
/// [ slp' ] = [ m[1][0] m[1][1] ] [ slp ] + [ offset[1] ]
/// ```
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisMap {
    pub m: [[f64; 2]; 2],
    pub offset: [f64; 2],
}

impl AxisMap {
    pub const IDENTITY: AxisMap = AxisMap {
        m: [[1.0, 0.0], [0.0, 1.0]],
        offset: [0.0, 0.0],
    };

    pub fn translation(distance: f64) -> Self {
        AxisMap {
            m: [[1.0, distance], [0.0, 1.0]],
            offset: [0.0, 0.0],
        }
    }

    /// Thin lens centered at `center`: `slope' = slope - (pos - center) / f`.
    pub fn refraction(focal_length: f64, center: f64) -> Self {
        AxisMap {
            m: [[1.0, 0.0], [-1.0 / focal_length, 1.0]],
            offset: [0.0, center / focal_length],
        }
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, pos: f64, slope: f64) -> (f64, f64) {
        (
            self.m[0][0] * pos + self.m[0][1] * slope + self.offset[0],
            self.m[1][0] * pos + self.m[1][1] * slope + self.offset[1],
        )
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &AxisMap) -> AxisMap {
        let a = &self.m;
        let b = &inner.m;
        let (o0, o1) = self.apply(inner.offset[0], inner.offset[1]);
        AxisMap {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
            offset: [o0, o1],
        }
    }

    pub(crate) fn invert(&self, block: &'static str) -> Result<AxisMap> {
        let det = self.det();
        if !(det.abs() > SINGULAR_DET) || !det.is_finite() {
            return Err(Error::SingularBlock { block, det });
        }
        let m = &self.m;
        let inv = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        let o = self.offset;
        Ok(AxisMap {
            m: inv,
            offset: [
                -(inv[0][0] * o[0] + inv[0][1] * o[1]),
                -(inv[1][0] * o[0] + inv[1][1] * o[1]),
            ],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().chain(self.offset.iter()).all(|x| x.is_finite())
    }
}

const SINGULAR_DET: f64 = 1e-12;

/// Separable affine ray map: `(s, u)` through `su`, `(t, v)` through `tv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparableAffineTransform {
    pub su: AxisMap,
    pub tv: AxisMap,
}

impl Default for SeparableAffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SeparableAffineTransform {
    pub fn identity() -> Self {
        SeparableAffineTransform {
            su: AxisMap::IDENTITY,
            tv: AxisMap::IDENTITY,
        }
    }

    pub fn from_axes(su: AxisMap, tv: AxisMap) -> Self {
        SeparableAffineTransform { su, tv }
    }

    /// Free-space propagation by `distance` (may be negative).
    pub fn translation(distance: f64) -> Self {
        let a = AxisMap::translation(distance);
        SeparableAffineTransform { su: a, tv: a }
    }

    /// Ideal thin lens with optical center at `(center_s, center_t)`.
    pub fn refraction(focal_length: f64, center_s: f64, center_t: f64) -> Result<Self> {
        if focal_length == 0.0 || !focal_length.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "focal length must be finite and nonzero, got {focal_length}"
            )));
        }
        Ok(SeparableAffineTransform {
            su: AxisMap::refraction(focal_length, center_s),
            tv: AxisMap::refraction(focal_length, center_t),
        })
    }

    pub fn apply(&self, ray: &Ray) -> Ray {
        let (s, u) = self.su.apply(ray.s, ray.u);
        let (t, v) = self.tv.apply(ray.t, ray.v);
        Ray { s, u, t, v }
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &SeparableAffineTransform) -> Self {
        SeparableAffineTransform {
            su: self.su.compose(&inner.su),
            tv: self.tv.compose(&inner.tv),
        }
    }

    /// Apply `self` first, then `outer`.
    pub fn then(&self, outer: &SeparableAffineTransform) -> Self {
        outer.compose(self)
    }

    pub fn invert(&self) -> Result<Self> {
        Ok(SeparableAffineTransform {
            su: self.su.invert("su")?,
            tv: self.tv.invert("tv")?,
        })
    }

    pub fn dets(&self) -> (f64, f64) {
        (self.su.det(), self.tv.det())
    }

    /// Both blocks have unit determinant within `tol`.
    pub fn is_unimodular(&self, tol: f64) -> bool {
        let (a, b) = self.dets();
        (a - 1.0).abs() <= tol && (b - 1.0).abs() <= tol
    }

    pub fn max_abs_diff(&self, other: &SeparableAffineTransform) -> f64 {
        let flat = |x: &SeparableAffineTransform| {
            let mut v = Vec::with_capacity(12);
            for a in [&x.su, &x.tv] {
                v.extend(a.m.iter().flatten().copied());
                v.extend(a.offset.iter().copied());
            }
            v
        };
        flat(self)
            .iter()
            .zip(flat(other).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn axis(&self, axis: Axis) -> &AxisMap {
        match axis {
            Axis::S => &self.su,
            Axis::T => &self.tv,
        }
    }
}

/// Spatial axis of a light field plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    S,
    T,
}
