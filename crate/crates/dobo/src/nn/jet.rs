//! Forward-mode jets carrying the derivative slots the PDE residuals need.
//!
//! A [`Jet`] tracks a value together with its first and second derivative with
//! respect to one designated spatial coordinate and its first derivative with
//! respect to one designated time coordinate. These four slots are exactly
//! what `du/dt - N_x[u]` consumes, so propagating jets through a network
//! yields u, u_x, u_xx and u_t in one pass.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value plus (d/dx, d^2/dx^2, d/dt) with respect to designated inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d_dx: f64,
    pub d2_dx2: f64,
    pub d_dt: f64,
}

impl Jet {
    /// A constant: all derivative slots are zero.
    pub fn constant(value: f64) -> Self {
        Jet {
            value,
            d_dx: 0.0,
            d2_dx2: 0.0,
            d_dt: 0.0,
        }
    }

    /// Seeds the spatial slot: d/dx = 1.
    pub fn spatial(value: f64) -> Self {
        Jet {
            value,
            d_dx: 1.0,
            d2_dx2: 0.0,
            d_dt: 0.0,
        }
    }

    /// Seeds the time slot: d/dt = 1.
    pub fn time(value: f64) -> Self {
        Jet {
            value,
            d_dx: 0.0,
            d2_dx2: 0.0,
            d_dt: 1.0,
        }
    }

    /// Applies a scalar function given its value and first two derivatives at
    /// `self.value`.
    #[inline]
    fn unary(self, f: f64, df: f64, d2f: f64) -> Self {
        Jet {
            value: f,
            d_dx: df * self.d_dx,
            d2_dx2: d2f * self.d_dx * self.d_dx + df * self.d2_dx2,
            d_dt: df * self.d_dt,
        }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.unary(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.unary(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e, e)
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        let s = 1.0 - t * t; // tanh' = 1 - tanh^2
        self.unary(t, s, -2.0 * t * s) // tanh'' = -2 tanh (1 - tanh^2)
    }

    pub fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.unary(r, 0.5 / r, -0.25 / (r * r * r))
    }

    pub fn powi(self, n: i32) -> Self {
        let f = self.value.powi(n);
        let df = n as f64 * self.value.powi(n - 1);
        let d2f = (n as f64) * (n as f64 - 1.0) * self.value.powi(n - 2);
        self.unary(f, df, d2f)
    }

    pub fn scale(self, c: f64) -> Self {
        Jet {
            value: c * self.value,
            d_dx: c * self.d_dx,
            d2_dx2: c * self.d2_dx2,
            d_dt: c * self.d_dt,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        Jet {
            value: self.value + rhs.value,
            d_dx: self.d_dx + rhs.d_dx,
            d2_dx2: self.d2_dx2 + rhs.d2_dx2,
            d_dt: self.d_dt + rhs.d_dt,
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        Jet {
            value: self.value - rhs.value,
            d_dx: self.d_dx - rhs.d_dx,
            d2_dx2: self.d2_dx2 - rhs.d2_dx2,
            d_dt: self.d_dt - rhs.d_dt,
        }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        Jet {
            value: self.value * rhs.value,
            d_dx: self.d_dx * rhs.value + self.value * rhs.d_dx,
            d2_dx2: self.d2_dx2 * rhs.value + 2.0 * self.d_dx * rhs.d_dx + self.value * rhs.d2_dx2,
            d_dt: self.d_dt * rhs.value + self.value * rhs.d_dt,
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        let v = self.value / rhs.value;
        let dx = (self.d_dx - v * rhs.d_dx) / rhs.value;
        // From a = q b: a_xx = q_xx b + 2 q_x b_x + q b_xx.
        let dxx = (self.d2_dx2 - v * rhs.d2_dx2 - 2.0 * dx * rhs.d_dx) / rhs.value;
        let dt = (self.d_dt - v * rhs.d_dt) / rhs.value;
        Jet {
            value: v,
            d_dx: dx,
            d2_dx2: dxx,
            d_dt: dt,
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_has_zero_derivatives() {
        let c = Jet::constant(4.2);
        let y = (c * c + c).sin();
        assert_eq!(y.d_dx, 0.0);
        assert_eq!(y.d2_dx2, 0.0);
        assert_eq!(y.d_dt, 0.0);
    }

    /// Jets compose under the chain rule: check (f o g) on polynomials where
    /// the analytic composition is exact.
    #[test]
    fn chain_rule_on_polynomials() {
        // f(g(x)) with g = x^2 + 3x, f = u^3 - u at x = 1.3
        let x = Jet::spatial(1.3);
        let g = x * x + x.scale(3.0);
        let f = g * g * g - g;
        let xv: f64 = 1.3;
        let gv = xv * xv + 3.0 * xv;
        let dg = 2.0 * xv + 3.0;
        let d2g = 2.0;
        let df = 3.0 * gv * gv - 1.0;
        let d2f = 6.0 * gv;
        assert_abs_diff_eq!(f.value, gv.powi(3) - gv, epsilon = 1e-12);
        assert_abs_diff_eq!(f.d_dx, df * dg, epsilon = 1e-12);
        assert_abs_diff_eq!(f.d2_dx2, d2f * dg * dg + df * d2g, epsilon = 1e-12);
    }

    #[test]
    fn product_and_quotient_with_time_slot() {
        let x = Jet::spatial(0.7);
        let t = Jet::time(0.4);
        let u = x.sin() * t.cos(); // u = sin(x) cos(t)
        assert_abs_diff_eq!(u.d_dx, 0.7f64.cos() * 0.4f64.cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(u.d2_dx2, -0.7f64.sin() * 0.4f64.cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(u.d_dt, -0.7f64.sin() * 0.4f64.sin(), epsilon = 1e-14);
        let q = u / t.exp();
        let fd = {
            let h = 1e-6;
            let f = |tt: f64| 0.7f64.sin() * tt.cos() / tt.exp();
            (f(0.4 + h) - f(0.4 - h)) / (2.0 * h)
        };
        assert_abs_diff_eq!(q.d_dt, fd, epsilon = 1e-8);
    }

    #[test]
    fn tanh_second_derivative() {
        let x = Jet::spatial(0.3);
        let y = x.tanh();
        let t = 0.3f64.tanh();
        assert_abs_diff_eq!(y.d_dx, 1.0 - t * t, epsilon = 1e-14);
        assert_abs_diff_eq!(y.d2_dx2, -2.0 * t * (1.0 - t * t), epsilon = 1e-14);
    }
}
