//! Discrete light fields: pixel grids on an optical plane crossed with a
//! shared angular discretization on a designated angular plane.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::optics::{Axis, Ray, SeparableAffineTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngularBasis {
    /// Impulses at the angular sample centers (pinhole superposition).
    Dirac,
    /// Rect cells of the angular spacing.
    Pillbox,
}

/// Uniform 1D sample grid: centers `center + (i - (n-1)/2) * spacing`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1d {
    pub n: usize,
    pub spacing: f64,
    pub center: f64,
}

impl Grid1d {
    pub fn new(n: usize, spacing: f64, center: f64) -> Self {
        Grid1d { n, spacing, center }
    }

    #[inline]
    pub fn sample(&self, i: usize) -> f64 {
        self.center + (i as f64 - (self.n as f64 - 1.0) * 0.5) * self.spacing
    }

    /// Lower and upper edge of cell `i`.
    #[inline]
    pub fn cell(&self, i: usize) -> (f64, f64) {
        let c = self.sample(i);
        (c - 0.5 * self.spacing, c + 0.5 * self.spacing)
    }

    /// Continuous index of a position (cell `i` spans `[i - 0.5, i + 0.5]`).
    #[inline]
    pub fn index_of(&self, x: f64) -> f64 {
        (x - self.center) / self.spacing + (self.n as f64 - 1.0) * 0.5
    }

    /// Cells whose closed support contains `x`.
    pub fn cells_containing(&self, x: f64) -> std::ops::RangeInclusive<usize> {
        let f = self.index_of(x);
        let lo = (f - 0.5).ceil().max(0.0);
        let hi = (f + 0.5).floor().min(self.n as f64 - 1.0);
        if hi < lo {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        lo as usize..=hi as usize
    }

    pub fn extent(&self) -> (f64, f64) {
        let half = 0.5 * self.n as f64 * self.spacing;
        (self.center - half, self.center + half)
    }
}

/// Spatial discretization of one optical plane plus its map to the angular plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneGeometry {
    pub n_s: usize,
    pub n_t: usize,
    pub delta_s: f64,
    pub delta_t: f64,
    pub center_s: f64,
    pub center_t: f64,
    /// Ray map from this plane to the angular plane.
    pub to_angular: SeparableAffineTransform,
}

impl PlaneGeometry {
    pub fn new(
        n_s: usize,
        n_t: usize,
        delta_s: f64,
        delta_t: f64,
        to_angular: SeparableAffineTransform,
    ) -> Result<Self> {
        Self::with_center(n_s, n_t, delta_s, delta_t, 0.0, 0.0, to_angular)
    }

    pub fn with_center(
        n_s: usize,
        n_t: usize,
        delta_s: f64,
        delta_t: f64,
        center_s: f64,
        center_t: f64,
        to_angular: SeparableAffineTransform,
    ) -> Result<Self> {
        if n_s == 0 || n_t == 0 {
            return Err(Error::InvalidGeometry(format!("empty grid {n_s}x{n_t}")));
        }
        if !(delta_s > 0.0 && delta_t > 0.0) || !delta_s.is_finite() || !delta_t.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "grid spacings must be positive, got ({delta_s}, {delta_t})"
            )));
        }
        Ok(PlaneGeometry {
            n_s,
            n_t,
            delta_s,
            delta_t,
            center_s,
            center_t,
            to_angular,
        })
    }

    pub fn len(&self) -> usize {
        self.n_s * self.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self, axis: Axis) -> Grid1d {
        match axis {
            Axis::S => Grid1d::new(self.n_s, self.delta_s, self.center_s),
            Axis::T => Grid1d::new(self.n_t, self.delta_t, self.center_t),
        }
    }

    /// Same pixel lattice and transform; true when two fields can be added.
    pub fn same_grid(&self, other: &PlaneGeometry) -> bool {
        let tol = 1e-9 * self.delta_s.max(self.delta_t);
        self.n_s == other.n_s
            && self.n_t == other.n_t
            && (self.delta_s - other.delta_s).abs() <= tol
            && (self.delta_t - other.delta_t).abs() <= tol
            && (self.center_s - other.center_s).abs() <= tol
            && (self.center_t - other.center_t).abs() <= tol
            && self.to_angular.max_abs_diff(&other.to_angular) <= 1e-9
    }

    /// Sub-window of this plane: pixels `[s0, s0 + n_s) x [t0, t0 + n_t)`.
    pub fn window(&self, s0: usize, t0: usize, n_s: usize, n_t: usize) -> Result<PlaneGeometry> {
        if s0 + n_s > self.n_s || t0 + n_t > self.n_t || n_s == 0 || n_t == 0 {
            return Err(Error::InvalidGeometry(format!(
                "window [{s0}+{n_s}, {t0}+{n_t}] outside {}x{} grid",
                self.n_s, self.n_t
            )));
        }
        let gs = self.grid(Axis::S);
        let gt = self.grid(Axis::T);
        let cs = 0.5 * (gs.sample(s0) + gs.sample(s0 + n_s - 1));
        let ct = 0.5 * (gt.sample(t0) + gt.sample(t0 + n_t - 1));
        PlaneGeometry::with_center(n_s, n_t, self.delta_s, self.delta_t, cs, ct, self.to_angular)
    }
}

/// Discretization of the angular plane shared by all light fields of a camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularPlane {
    pub k_s: usize,
    pub k_t: usize,
    pub delta_s0: f64,
    pub delta_t0: f64,
    pub basis: AngularBasis,
}

impl AngularPlane {
    /// `k_s x k_t` cells tiling a centered `aperture_s x aperture_t` rectangle.
    pub fn over_aperture(
        k_s: usize,
        k_t: usize,
        aperture_s: f64,
        aperture_t: f64,
        basis: AngularBasis,
    ) -> Result<Self> {
        if k_s == 0 || k_t == 0 {
            return Err(Error::InvalidGeometry("angular plane needs at least one sample".into()));
        }
        if !(aperture_s > 0.0 && aperture_t > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "aperture must be positive, got ({aperture_s}, {aperture_t})"
            )));
        }
        Ok(AngularPlane {
            k_s,
            k_t,
            delta_s0: aperture_s / k_s as f64,
            delta_t0: aperture_t / k_t as f64,
            basis,
        })
    }

    /// Number of views `K`.
    pub fn len(&self) -> usize {
        self.k_s * self.k_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self, axis: Axis) -> Grid1d {
        match axis {
            Axis::S => Grid1d::new(self.k_s, self.delta_s0, 0.0),
            Axis::T => Grid1d::new(self.k_t, self.delta_t0, 0.0),
        }
    }

    /// Views are ordered lexicographically with `s` varying fastest.
    pub fn view_indices(&self, k: usize) -> (usize, usize) {
        (k % self.k_s, k / self.k_s)
    }

    pub fn view_center(&self, k: usize) -> (f64, f64) {
        let (ks, kt) = self.view_indices(k);
        (self.grid(Axis::S).sample(ks), self.grid(Axis::T).sample(kt))
    }

    pub fn spacing(&self, axis: Axis) -> f64 {
        match axis {
            Axis::S => self.delta_s0,
            Axis::T => self.delta_t0,
        }
    }
}

/// Coefficients of a discrete light field: `K` views of `n_s x n_t` pixels,
/// view-major, then `t`, with `s` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct LightFieldCoeffs {
    pub plane: PlaneGeometry,
    pub views: usize,
    pub data: Vec<f32>,
}

impl LightFieldCoeffs {
    pub fn zeros(plane: PlaneGeometry, views: usize) -> Self {
        LightFieldCoeffs {
            plane,
            views,
            data: vec![0.0; views * plane.len()],
        }
    }

    pub fn from_data(plane: PlaneGeometry, views: usize, data: Vec<f32>) -> Result<Self> {
        check_len(views * plane.len(), data.len())?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("light field contains non-finite values".into()));
        }
        Ok(LightFieldCoeffs { plane, views, data })
    }

    #[inline]
    pub fn index(&self, k: usize, is: usize, it: usize) -> usize {
        (k * self.plane.n_t + it) * self.plane.n_s + is
    }

    pub fn get(&self, k: usize, is: usize, it: usize) -> f32 {
        self.data[self.index(k, is, it)]
    }

    pub fn set(&mut self, k: usize, is: usize, it: usize, value: f32) {
        let i = self.index(k, is, it);
        self.data[i] = value;
    }

    pub fn view(&self, k: usize) -> &[f32] {
        let n = self.plane.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn view_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.plane.len();
        &mut self.data[k * n..(k + 1) * n]
    }
}

/// Evaluates the basis expansion at one ray on the field's plane.
///
/// Under the Dirac basis the angular factor selects the view whose angular
/// cell contains the mapped point.
pub fn eval_lightfield(coeffs: &LightFieldCoeffs, angular: &AngularPlane, ray: &Ray) -> f64 {
    let plane = &coeffs.plane;
    let mapped = plane.to_angular.apply(ray);
    let ang_s = angular.grid(Axis::S);
    let ang_t = angular.grid(Axis::T);
    let sp_s = plane.grid(Axis::S);
    let sp_t = plane.grid(Axis::T);
    let mut total = 0.0f64;
    for kt in ang_t.cells_containing(mapped.t) {
        for ks in ang_s.cells_containing(mapped.s) {
            let k = kt * angular.k_s + ks;
            if k >= coeffs.views {
                continue;
            }
            for it in sp_t.cells_containing(ray.t) {
                for is in sp_s.cells_containing(ray.s) {
                    total += coeffs.get(k, is, it) as f64;
                }
            }
        }
    }
    total
}

/// One axis of the basis volume: `delta0 * delta / |dX_pos/d slope|`.
pub(crate) fn axis_volume(plane: &PlaneGeometry, angular: &AngularPlane, axis: Axis) -> Result<f64> {
    let map = plane.to_angular.axis(axis);
    let coupling = map.m[0][1].abs();
    let scale = 1.0 + map.m[0][0].abs();
    if !(coupling > 1e-12 * scale) {
        return Err(Error::DegenerateMapping(format!(
            "plane is conjugate to the angular plane along {axis:?} (position coupling {coupling:e})"
        )));
    }
    let delta = match axis {
        Axis::S => plane.delta_s,
        Axis::T => plane.delta_t,
    };
    Ok(angular.spacing(axis) * delta / coupling)
}

/// Squared L2 norm of one 4D basis element on `plane`.
///
/// For the pillbox basis this is exact. The Dirac basis has no finite norm;
/// it uses the same expression so that transport between identical grids is
/// the identity under either basis.
pub fn basis_volume(plane: &PlaneGeometry, angular: &AngularPlane) -> Result<f64> {
    Ok(axis_volume(plane, angular, Axis::S)? * axis_volume(plane, angular, Axis::T)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::AxisMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Maps `(s, u)` to angular position `u`, i.e. identity in the angular argument.
    fn swap_map() -> SeparableAffineTransform {
        let a = AxisMap {
            m: [[0.0, 1.0], [-1.0, 0.0]],
            offset: [0.0, 0.0],
        };
        SeparableAffineTransform::from_axes(a, a)
    }

    fn plane(n_s: usize, n_t: usize, ds: f64, x: SeparableAffineTransform) -> PlaneGeometry {
        PlaneGeometry::new(n_s, n_t, ds, 1.0, x).unwrap()
    }

    #[test]
    fn grid_samples_are_centered() {
        let g = Grid1d::new(4, 0.5, 1.0);
        assert_eq!(g.sample(0), 0.25);
        assert_eq!(g.sample(3), 1.75);
        assert_eq!(g.extent(), (0.0, 2.0));
        assert_eq!(g.cells_containing(0.3), 0..=0);
        assert_eq!(g.cells_containing(0.5), 0..=1);
        assert!(g.cells_containing(2.2).is_empty());
    }

    #[test]
    fn invalid_geometry_rejected() {
        let id = SeparableAffineTransform::identity();
        assert!(PlaneGeometry::new(0, 3, 1.0, 1.0, id).is_err());
        assert!(PlaneGeometry::new(3, 3, 0.0, 1.0, id).is_err());
        assert!(AngularPlane::over_aperture(0, 1, 1.0, 1.0, AngularBasis::Pillbox).is_err());
    }

    #[test]
    fn angular_centers_are_inset_half_cell() {
        let a = AngularPlane::over_aperture(4, 2, 20.0, 10.0, AngularBasis::Pillbox).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a.view_center(0), (-7.5, -2.5));
        assert_eq!(a.view_center(7), (7.5, 2.5));
        assert_eq!(a.view_indices(5), (1, 1));
    }

    #[test]
    fn view_indexing_round_trips() {
        let p = plane(5, 3, 1.0, swap_map());
        let mut lf = LightFieldCoeffs::zeros(p, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut writes = Vec::new();
        for _ in 0..30 {
            let (k, is, it) = (rng.gen_range(0..4), rng.gen_range(0..5), rng.gen_range(0..3));
            let v: f32 = rng.gen();
            lf.set(k, is, it, v);
            writes.push((k, is, it, v));
        }
        for &(k, is, it, _) in &writes {
            let last = writes.iter().rev().find(|w| (w.0, w.1, w.2) == (k, is, it)).unwrap();
            assert_eq!(lf.get(k, is, it), last.3);
            assert_eq!(lf.view(k)[it * 5 + is], last.3);
        }
    }

    #[test]
    fn eval_zero_field_is_zero() {
        let p = plane(4, 4, 1.0, swap_map());
        let a = AngularPlane::over_aperture(2, 2, 2.0, 2.0, AngularBasis::Pillbox).unwrap();
        let lf = LightFieldCoeffs::zeros(p, 4);
        assert_eq!(eval_lightfield(&lf, &a, &Ray::new(0.1, 0.2, -0.3, 0.4)), 0.0);
    }

    #[test]
    fn eval_single_coefficient_is_indicator() {
        let p = plane(4, 4, 1.0, swap_map());
        let a = AngularPlane::over_aperture(2, 2, 2.0, 2.0, AngularBasis::Pillbox).unwrap();
        let mut lf = LightFieldCoeffs::zeros(p, 4);
        // view 3 has angular center (0.5, 0.5); pixel (1, 2) center (-0.5, 0.5)
        lf.set(3, 1, 2, 1.0);
        let inside = Ray::new(-0.5, 0.5, 0.5, 0.5);
        assert_eq!(eval_lightfield(&lf, &a, &inside), 1.0);
        // wrong angular cell
        assert_eq!(eval_lightfield(&lf, &a, &Ray::new(-0.5, -0.5, 0.5, 0.5)), 0.0);
        // outside every spatial support
        assert_eq!(eval_lightfield(&lf, &a, &Ray::new(9.0, 0.5, 0.5, 0.5)), 0.0);

        let dirac = AngularPlane { basis: AngularBasis::Dirac, ..a };
        assert_eq!(eval_lightfield(&lf, &dirac, &inside), 1.0);
    }

    #[test]
    fn eval_is_linear() {
        let p = plane(3, 4, 0.7, swap_map());
        let a = AngularPlane::over_aperture(2, 3, 1.5, 1.5, AngularBasis::Pillbox).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rand_lf = |rng: &mut ChaCha8Rng| {
            let d: Vec<f32> = (0..6 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            LightFieldCoeffs::from_data(p, 6, d).unwrap()
        };
        let f = rand_lf(&mut rng);
        let g = rand_lf(&mut rng);
        let (al, be) = (0.75f32, -1.25f32);
        let comb = LightFieldCoeffs::from_data(
            p,
            6,
            f.data.iter().zip(&g.data).map(|(x, y)| al * x + be * y).collect(),
        )
        .unwrap();
        for _ in 0..200 {
            let r = Ray::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-0.8..0.8),
            );
            let lhs = eval_lightfield(&comb, &a, &r);
            let rhs = al as f64 * eval_lightfield(&f, &a, &r) + be as f64 * eval_lightfield(&g, &a, &r);
            assert!((lhs - rhs).abs() < 1e-5);
        }
    }

    #[test]
    fn unit_basis_volume() {
        let p = plane(3, 3, 1.0, swap_map());
        let a = AngularPlane::over_aperture(1, 1, 1.0, 1.0, AngularBasis::Pillbox).unwrap();
        assert!((basis_volume(&p, &a).unwrap() - 1.0).abs() < 1e-15);
    }

    /// Midpoint quadrature of the squared 4D basis element, one axis at a time.
    fn quadrature_axis_volume(map: &AxisMap, delta: f64, delta0: f64) -> f64 {
        let n = 2000;
        let (s_lo, s_hi) = (-delta / 2.0, delta / 2.0);
        let (u_lo, u_hi) = (-5.0, 5.0);
        let hs = (s_hi - s_lo) / n as f64;
        let hu = (u_hi - u_lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let s = s_lo + (i as f64 + 0.5) * hs;
            for j in 0..n {
                let u = u_lo + (j as f64 + 0.5) * hu;
                let w = map.apply(s, u).0;
                if (w / delta0).abs() <= 0.5 {
                    acc += hs * hu;
                }
            }
        }
        acc
    }

    #[test]
    fn basis_volume_matches_quadrature_and_scales_with_spacing() {
        let p = plane(3, 3, 2.0, swap_map());
        let a = AngularPlane::over_aperture(1, 1, 1.0, 1.0, AngularBasis::Pillbox).unwrap();
        let v = basis_volume(&p, &a).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let q = quadrature_axis_volume(&p.to_angular.su, 2.0, 1.0) * quadrature_axis_volume(&p.to_angular.tv, 1.0, 1.0);
        assert!((q - v).abs() < 1e-2, "quadrature {q} vs {v}");

        // a realistic plane: scene 300 mm in front of a 50 mm lens
        let x = SeparableAffineTransform::translation(300.0)
            .then(&SeparableAffineTransform::refraction(50.0, 0.0, 0.0).unwrap());
        let p = PlaneGeometry::new(4, 4, 0.5, 0.5, x).unwrap();
        let a = AngularPlane::over_aperture(1, 1, 0.02, 0.02, AngularBasis::Pillbox).unwrap();
        let v = basis_volume(&p, &a).unwrap();
        let per_axis = 0.02 * 0.5 / 300.0;
        assert!((v - per_axis * per_axis).abs() < 1e-18);
        let p2 = PlaneGeometry::new(4, 4, 1.0, 0.5, x).unwrap();
        assert!((basis_volume(&p2, &a).unwrap() / v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn conjugate_plane_is_degenerate() {
        let p = plane(3, 3, 1.0, SeparableAffineTransform::identity());
        let a = AngularPlane::over_aperture(1, 1, 1.0, 1.0, AngularBasis::Dirac).unwrap();
        assert!(matches!(basis_volume(&p, &a), Err(Error::DegenerateMapping(_))));
    }
}
