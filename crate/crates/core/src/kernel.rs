//! Even piecewise-polynomial kernels built as convolutions of centered boxes.
//!
//! One box is a rect, two boxes give a trapezoid (triangle when the widths
//! match), three boxes give a piecewise-quadratic bump. Both the light
//! transport blur and the shear resampling kernels are of this form, and all
//! that operators ever need is the exact integral over a cell.

/// Convolution of up to three unit-mass boxes, scaled to total `mass`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxSpline {
    /// Plateau half-width of the inner trapezoid (two smallest boxes).
    x1: f64,
    /// Support half-width of the inner trapezoid.
    x2: f64,
    /// Width of the largest box when three boxes are present, else 0.
    outer: f64,
    mass: f64,
}

impl BoxSpline {
    /// Boxes of the given (absolute) widths; zero widths act as impulses.
    pub fn new(widths: &[f64], mass: f64) -> Self {
        assert!(widths.len() <= 3, "at most three boxes");
        let mut w: Vec<f64> = widths.iter().map(|x| x.abs()).collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (a, b, outer) = match w.len() {
            0 => (0.0, 0.0, 0.0),
            1 => (0.0, w[0], 0.0),
            2 => (w[0], w[1], 0.0),
            _ => (w[0], w[1], w[2]),
        };
        BoxSpline {
            x1: 0.5 * (b - a),
            x2: 0.5 * (a + b),
            outer,
            mass,
        }
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn scale_mass(&mut self, factor: f64) {
        self.mass *= factor;
    }

    /// Half-width of the support.
    pub fn support(&self) -> f64 {
        self.x2 + 0.5 * self.outer
    }

    /// Plateau half-width of the two-box trapezoid (undefined for three boxes).
    pub fn plateau(&self) -> f64 {
        self.x1
    }

    /// `∫ g` over `[lo, hi]`.
    #[inline]
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        self.mass * (self.odd_cdf(hi) - self.odd_cdf(lo))
    }

    /// Kernel value at `x`.
    pub fn value(&self, x: f64) -> f64 {
        self.mass * self.density(x)
    }

    fn density(&self, x: f64) -> f64 {
        if self.outer > 0.0 {
            let h = 0.5 * self.outer;
            (self.trap_cdf(x + h) - self.trap_cdf(x - h)) / self.outer
        } else {
            self.trap_density(x)
        }
    }

    fn trap_density(&self, x: f64) -> f64 {
        let ax = x.abs();
        if self.x2 <= 0.0 || ax >= self.x2 {
            return 0.0;
        }
        let h = 1.0 / (self.x1 + self.x2);
        if ax <= self.x1 {
            h
        } else {
            h * (self.x2 - ax) / (self.x2 - self.x1)
        }
    }

    fn trap_cdf(&self, x: f64) -> f64 {
        0.5 + self.trap_odd(x)
    }

    /// `∫_0^x` of the unit-mass trapezoid; odd in `x`.
    fn trap_odd(&self, x: f64) -> f64 {
        let ax = x.abs();
        let v = if self.x2 <= 0.0 {
            0.5
        } else if ax >= self.x2 {
            0.5
        } else {
            let h = 1.0 / (self.x1 + self.x2);
            if ax <= self.x1 {
                h * ax
            } else {
                let r = self.x2 - self.x1;
                let d = self.x2 - ax;
                h * self.x1 + h * (r * r - d * d) / (2.0 * r)
            }
        };
        v.copysign(x)
    }

    /// `∫_0^x trap_odd`; even in `x`.
    fn trap_even(&self, x: f64) -> f64 {
        let ax = x.abs();
        if self.x2 <= 0.0 {
            return 0.5 * ax;
        }
        let h = 1.0 / (self.x1 + self.x2);
        let at = |y: f64| -> f64 {
            if y <= self.x1 {
                0.5 * h * y * y
            } else {
                let r = self.x2 - self.x1;
                let base = 0.5 * h * self.x1 * self.x1;
                let dy = y - self.x1;
                let cube = (r * r * r - (self.x2 - y).powi(3)) / 3.0;
                base + h * self.x1 * dy + h / (2.0 * r) * (r * r * dy - cube)
            }
        };
        if ax < self.x2 {
            at(ax)
        } else {
            at(self.x2) + 0.5 * (ax - self.x2)
        }
    }

    /// `∫_0^x` of the unit-mass kernel; odd in `x`.
    fn odd_cdf(&self, x: f64) -> f64 {
        if self.outer > 0.0 {
            let h = 0.5 * self.outer;
            if x >= self.x2 + h {
                return 0.5;
            }
            if x <= -(self.x2 + h) {
                return -0.5;
            }
            (self.trap_even(x + h) - self.trap_even(x - h)) / self.outer
        } else {
            self.trap_odd(x)
        }
    }
}
