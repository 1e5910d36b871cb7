//! Second-order forward-mode differentiation.
//!
//! [`Jet`] carries a value together with its gradient and Hessian with respect
//! to `N` seeded variables. Energy functions written against [`Scalar`] can be
//! evaluated in plain `f64` or in `Jet<9>` (seeding the nine entries of a
//! deformation gradient) to obtain stress and tangent exactly.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;

    fn re(&self) -> f64;

    /// Composes a univariate function, given its value `f0` and derivatives
    /// `f1`, `f2` at `self.re()`.
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self;

    fn sqrt(self) -> Self {
        let x = self.re();
        let s = x.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * x))
    }

    fn powf(self, p: f64) -> Self {
        let x = self.re();
        let xp = x.powf(p);
        self.chain(xp, p * xp / x, p * (p - 1.0) * xp / (x * x))
    }

    fn exp(self) -> Self {
        let e = self.re().exp();
        self.chain(e, e, e)
    }

    fn ln(self) -> Self {
        let x = self.re();
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }

    fn re(&self) -> f64 {
        *self
    }

    fn chain(self, f0: f64, _f1: f64, _f2: f64) -> Self {
        f0
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// Value, gradient and (symmetric) Hessian with respect to `N` variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }

    /// The `index`-th independent variable, evaluated at `v`.
    pub fn variable(v: f64, index: usize) -> Self {
        let mut j = Self::constant(v);
        j.g[index] = 1.0;
        j
    }
}

impl<const N: usize> Scalar for Jet<N> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }

    fn re(&self) -> f64 {
        self.v
    }

    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f0);
        for i in 0..N {
            out.g[i] = f1 * self.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = f1 * self.h[i][j] + f2 * self.g[i] * self.g[j];
            }
        }
        out
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.v += rhs.v;
        for i in 0..N {
            self.g[i] += rhs.g[i];
            for j in 0..N {
                self.h[i][j] += rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.v -= rhs.v;
        for i in 0..N {
            self.g[i] -= rhs.g[i];
            for j in 0..N {
                self.h[i][j] -= rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.v * rhs.v);
        for i in 0..N {
            out.g[i] = self.v * rhs.g[i] + rhs.v * self.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = self.v * rhs.h[i][j]
                    + rhs.v * self.h[i][j]
                    + self.g[i] * rhs.g[j]
                    + rhs.g[i] * self.g[j];
            }
        }
        out
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Self) -> Self {
        let x = rhs.v;
        self * rhs.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.v += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.v -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        self.v *= rhs;
        for i in 0..N {
            self.g[i] *= rhs;
            for j in 0..N {
                self.h[i][j] *= rhs;
            }
        }
        self
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_and_hessian() {
        // f(x, y) = x^2 y at (2, 3): grad (12, 4), hess [[6, 4], [4, 0]]
        let x = Jet::<2>::variable(2.0, 0);
        let y = Jet::<2>::variable(3.0, 1);
        let f = x * x * y;
        assert_eq!(f.v, 12.0);
        assert_eq!(f.g, [12.0, 4.0]);
        assert_eq!(f.h, [[6.0, 4.0], [4.0, 0.0]]);
    }

    #[test]
    fn quotient_and_transcendentals() {
        // f(x) = exp(x) / x at x = 1.5
        let x = Jet::<1>::variable(1.5, 0);
        let f = x.exp() / x;
        let e = 1.5f64.exp();
        let d1 = e / 1.5 - e / (1.5 * 1.5);
        let d2 = e * (1.5 * 1.5 - 2.0 * 1.5 + 2.0) / 1.5f64.powi(3);
        assert!((f.v - e / 1.5).abs() < 1e-14);
        assert!((f.g[0] - d1).abs() < 1e-13);
        assert!((f.h[0][0] - d2).abs() < 1e-13);
    }

    #[test]
    fn powf_ln_sqrt_consistent() {
        let x = Jet::<1>::variable(2.7, 0);
        let a = x.powf(0.5);
        let b = x.sqrt();
        let c = (x.ln() * 0.5).exp();
        for (p, q) in [(a, b), (a, c)] {
            assert!((p.v - q.v).abs() < 1e-14);
            assert!((p.g[0] - q.g[0]).abs() < 1e-14);
            assert!((p.h[0][0] - q.h[0][0]).abs() < 1e-14);
        }
    }
}
