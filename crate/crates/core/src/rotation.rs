//! Volume rotation as a signed axis permutation, a voxel-size rescale and
//! three shears, each shear being a 1D resampling along one axis.
//!
//! The rotated volume is `x_r(q) = x(Θ q)` with `Θ = P D S_z S_x S_y`, where
//!
//! ```text
//! S_y = [1 0 0; a 1 b; 0 0 1]   S_x = [1 c d; 0 1 0; 0 0 1]   S_z = [1 0 0; 0 1 0; e f 1]
//! ```

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::kernel::BoxSpline;
use crate::volume::{VolumeGrid, VoxelVolume};
use crate::transport::Direction;

pub type Mat3 = [[f64; 3]; 3];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[j][i];
        }
    }
    m
}

pub fn frobenius_diff(a: &Mat3, b: &Mat3) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `R_y(yaw) R_x(pitch) R_z(roll)`, angles in degrees.
pub fn rotation_matrix(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Mat3 {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    let (sr, cr) = roll_deg.to_radians().sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&ry, &mat_mul(&rx, &rz))
}

/// Signed axis permutation: camera-frame axis `c` reads object axis
/// `source[c]`, flipped when `flip[c]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisPermutation {
    pub source: [usize; 3],
    pub flip: [bool; 3],
}

impl AxisPermutation {
    pub const IDENTITY: AxisPermutation = AxisPermutation {
        source: [0, 1, 2],
        flip: [false; 3],
    };

    /// Matrix `P` with `(P q)_r = ± q_c` for `source[c] = r`.
    pub fn matrix(&self) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for c in 0..3 {
            m[self.source[c]][c] = if self.flip[c] { -1.0 } else { 1.0 };
        }
        m
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    fn all() -> Vec<AxisPermutation> {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut out = Vec::with_capacity(48);
        for source in perms {
            for bits in 0..8u8 {
                out.push(AxisPermutation {
                    source,
                    flip: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
                });
            }
        }
        out
    }

    pub fn output_grid(&self, g: &VolumeGrid) -> VolumeGrid {
        VolumeGrid {
            n: self.source.map(|r| g.n[r]),
            delta: self.source.map(|r| g.delta[r]),
        }
    }

    /// `y(q) = x(P q)`; exact reindexing.
    pub fn apply(&self, vol: &VoxelVolume, direction: Direction) -> Result<VoxelVolume> {
        match direction {
            Direction::Forward => {
                let og = self.output_grid(&vol.grid);
                let mut out = VoxelVolume::zeros(og);
                for iz in 0..og.n[2] {
                    for iy in 0..og.n[1] {
                        for ix in 0..og.n[0] {
                            let q = [ix, iy, iz];
                            out.data[og.index(q)] = vol.data[vol.grid.index(self.source_index(&og, q))];
                        }
                    }
                }
                Ok(out)
            }
            Direction::Adjoint => {
                let og = self.input_grid(&vol.grid);
                let mut out = VoxelVolume::zeros(og);
                let pg = vol.grid;
                for iz in 0..pg.n[2] {
                    for iy in 0..pg.n[1] {
                        for ix in 0..pg.n[0] {
                            let q = [ix, iy, iz];
                            out.data[og.index(self.source_index(&pg, q))] = vol.data[pg.index(q)];
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    fn input_grid(&self, permuted: &VolumeGrid) -> VolumeGrid {
        let mut n = [0; 3];
        let mut delta = [0.0; 3];
        for c in 0..3 {
            n[self.source[c]] = permuted.n[c];
            delta[self.source[c]] = permuted.delta[c];
        }
        VolumeGrid { n, delta }
    }

    fn source_index(&self, permuted: &VolumeGrid, q: [usize; 3]) -> [usize; 3] {
        let mut r = [0; 3];
        for c in 0..3 {
            r[self.source[c]] = if self.flip[c] { permuted.n[c] - 1 - q[c] } else { q[c] };
        }
        r
    }
}

/// One shear: along `axis`, the sample at `q` reads `q_axis + Σ_b coef[b] q_b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShearOp {
    pub axis: usize,
    pub coef: [f64; 3],
}

impl ShearOp {
    pub fn new(axis: usize, coef: [f64; 3]) -> Result<Self> {
        if axis > 2 || coef[axis] != 0.0 || coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad shear along {axis}: {coef:?}")));
        }
        Ok(ShearOp { axis, coef })
    }

    pub fn is_zero(&self) -> bool {
        self.coef == [0.0; 3]
    }

    /// Resampling kernel: voxel overlap smeared by the shift variation across
    /// the voxel footprint. Unit mass.
    pub fn kernel(&self, grid: &VolumeGrid) -> BoxSpline {
        let mut widths = vec![grid.delta[self.axis]];
        for b in 0..3 {
            if b != self.axis {
                widths.push(self.coef[b].abs() * grid.delta[b]);
            }
        }
        BoxSpline::new(&widths, 1.0)
    }

    /// Shift of the line through voxel index `q`.
    pub fn shift(&self, grid: &VolumeGrid, q: [usize; 3]) -> f64 {
        (0..3)
            .filter(|&b| b != self.axis)
            .map(|b| self.coef[b] * grid.coord(b, q[b]))
            .sum()
    }

    /// Matrix entry between output index `i` and input index `j` along the
    /// line with the given shift.
    pub fn entry(&self, grid: &VolumeGrid, kernel: &BoxSpline, shift: f64, i: usize, j: usize) -> f64 {
        let a = self.axis;
        let c = grid.coord(a, i) + shift;
        let lo = grid.coord(a, j) - 0.5 * grid.delta[a];
        kernel.integral(lo - c, lo + grid.delta[a] - c)
    }

    pub fn apply(&self, vol: &VoxelVolume, direction: Direction) -> Result<VoxelVolume> {
        let g = vol.grid;
        let a = self.axis;
        let kernel = self.kernel(&g);
        let sign = match direction {
            Direction::Forward => 1.0,
            Direction::Adjoint => -1.0,
        };
        let reach = kernel.support() / g.delta[a] + 1.0;
        let n_a = g.n[a];
        let stride = match a {
            0 => 1,
            1 => g.n[0],
            _ => g.n[0] * g.n[1],
        };
        let mut out = vec![0.0f32; g.len()];
        let row = g.n[0];
        out.par_chunks_mut(row).enumerate().for_each(|(r, chunk)| {
            let iy = r % g.n[1];
            let iz = r / g.n[1];
            for (ix, o) in chunk.iter_mut().enumerate() {
                let q = [ix, iy, iz];
                let shift = sign * self.shift(&g, q);
                let i = q[a];
                // continuous index of the kernel center
                let center = i as f64 + shift / g.delta[a];
                let lo = (center - reach).floor().max(0.0) as usize;
                let hi = ((center + reach).ceil().max(0.0) as usize).min(n_a - 1);
                let base = g.index(q) - i * stride;
                let mut acc = 0.0f64;
                if lo <= hi {
                    for j in lo..=hi {
                        let w = self.entry(&g, &kernel, shift, i, j);
                        if w != 0.0 {
                            acc += w * vol.data[base + j * stride] as f64;
                        }
                    }
                }
                *o = acc as f32;
            }
        });
        VoxelVolume::from_data(g, out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationPlan {
    pub theta: Mat3,
    pub permutation: AxisPermutation,
    /// Diagonal of `D`.
    pub diag: [f64; 3],
    /// Shears in application order: z, x, y.
    pub shears: [ShearOp; 3],
}

fn shear_matrix(s: &ShearOp) -> Mat3 {
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for b in 0..3 {
        if b != s.axis {
            m[s.axis][b] = s.coef[b];
        }
    }
    m
}

pub fn decompose_rotation(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Result<RotationPlan> {
    if ![yaw_deg, pitch_deg, roll_deg].iter().all(|a| a.is_finite()) {
        return Err(Error::InvalidParameter("rotation angles must be finite".into()));
    }
    RotationPlan::from_matrix(rotation_matrix(yaw_deg, pitch_deg, roll_deg)).map_err(|e| match e {
        Error::Decomposition(m) => Error::Decomposition(format!(
            "yaw {yaw_deg}, pitch {pitch_deg}, roll {roll_deg}: {m}"
        )),
        other => other,
    })
}

impl RotationPlan {
    pub fn identity() -> Self {
        RotationPlan {
            theta: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            permutation: AxisPermutation::IDENTITY,
            diag: [1.0; 3],
            shears: [
                ShearOp { axis: 2, coef: [0.0; 3] },
                ShearOp { axis: 0, coef: [0.0; 3] },
                ShearOp { axis: 1, coef: [0.0; 3] },
            ],
        }
    }

    pub fn from_matrix(theta: Mat3) -> Result<Self> {
        let permutation = AxisPermutation::all()
            .into_iter()
            .max_by(|p, q| {
                let tp = trace_pt(&p.matrix(), &theta);
                let tq = trace_pt(&q.matrix(), &theta);
                tp.partial_cmp(&tq).unwrap()
            })
            .unwrap();
        let r = mat_mul(&transpose(&permutation.matrix()), &theta);

        let dy = r[1][1];
        if dy.abs() < 1e-6 {
            return Err(Error::Decomposition("vanishing y scale".into()));
        }
        let (a, b) = (r[1][0] / dy, r[1][2] / dy);
        let dx = r[0][0] - r[0][1] * a;
        if dx.abs() < 1e-6 {
            return Err(Error::Decomposition("vanishing x scale".into()));
        }
        let c = r[0][1] / dx;
        let d = r[0][2] / dx - c * b;
        // third row as a combination of the first two sheared rows and e_z
        let r1 = [1.0 + c * a, c, c * b + d];
        let r2 = [a, 1.0, b];
        let det = r1[0] * r2[1] - r2[0] * r1[1];
        if det.abs() < 1e-12 {
            return Err(Error::Decomposition("sheared rows are dependent".into()));
        }
        let l1 = (r[2][0] * r2[1] - r2[0] * r[2][1]) / det;
        let l2 = (r1[0] * r[2][1] - r[2][0] * r1[1]) / det;
        let dz = r[2][2] - l1 * r1[2] - l2 * r2[2];
        if dz.abs() < 1e-6 {
            return Err(Error::Decomposition("vanishing z scale".into()));
        }
        let diag = [dx, dy, dz];
        if diag.iter().any(|v| *v <= 0.0) {
            return Err(Error::Decomposition(format!("negative voxel rescale {diag:?}")));
        }
        let plan = RotationPlan {
            theta,
            permutation,
            diag,
            shears: [
                ShearOp::new(2, [l1 / dz, l2 / dz, 0.0])?,
                ShearOp::new(0, [0.0, c, d])?,
                ShearOp::new(1, [a, 0.0, b])?,
            ],
        };
        let err = frobenius_diff(&plan.product(), &theta);
        if err > 1e-12 {
            return Err(Error::Decomposition(format!("reconstruction error {err:e}")));
        }
        Ok(plan)
    }

    /// `P D S_z S_x S_y`.
    pub fn product(&self) -> Mat3 {
        let d = [
            [self.diag[0], 0.0, 0.0],
            [0.0, self.diag[1], 0.0],
            [0.0, 0.0, self.diag[2]],
        ];
        let s = self
            .shears
            .iter()
            .fold(d, |m, sh| mat_mul(&m, &shear_matrix(sh)));
        mat_mul(&self.permutation.matrix(), &s)
    }

    pub fn inverse(&self) -> Result<Self> {
        Self::from_matrix(transpose(&self.theta))
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.is_identity() && self.diag == [1.0; 3] && self.shears.iter().all(|s| s.is_zero())
    }

    /// Grid of the rotated volume.
    pub fn output_grid(&self, input: &VolumeGrid) -> VolumeGrid {
        let p = self.permutation.output_grid(input);
        VolumeGrid {
            n: p.n,
            delta: [0, 1, 2].map(|a| p.delta[a] / self.diag[a]),
        }
    }
}

fn trace_pt(p: &Mat3, theta: &Mat3) -> f64 {
    (0..3).map(|i| (0..3).map(|k| p[k][i] * theta[k][i]).sum::<f64>()).sum()
}

/// Forward: permutation, rescale, shears z, x, y. Adjoint: the reverse.
pub fn rotate_volume(plan: &RotationPlan, vol: &VoxelVolume, direction: Direction) -> Result<VoxelVolume> {
    match direction {
        Direction::Forward => {
            let mut v = plan.permutation.apply(vol, Direction::Forward)?;
            v.grid = plan.output_grid(&vol.grid);
            for s in &plan.shears {
                if !s.is_zero() {
                    v = s.apply(&v, Direction::Forward)?;
                }
            }
            Ok(v)
        }
        Direction::Adjoint => {
            let mut v = vol.clone();
            for s in plan.shears.iter().rev() {
                if !s.is_zero() {
                    v = s.apply(&v, Direction::Adjoint)?;
                }
            }
            let p = plan.permutation;
            let mut n = [0; 3];
            let mut delta = [0.0; 3];
            for c in 0..3 {
                n[c] = v.grid.n[c];
                delta[c] = v.grid.delta[c] * plan.diag[c];
            }
            v.grid = VolumeGrid { n, delta };
            let out = p.apply(&v, Direction::Adjoint)?;
            check_len(vol.grid.len(), out.data.len())?;
            Ok(out)
        }
    }
}
