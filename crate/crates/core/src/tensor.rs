//! Small dense tensors used by the constitutive layer.

use nalgebra::Matrix3;

use crate::dual::{Jet, Scalar};

/// A 3×3 matrix over any [`Scalar`], row-major.
pub type Mat3<S> = [[S; 3]; 3];

/// Fourth-order 3×3×3×3 tensor, stored so that `(i, j)` and `(k, l)` index
/// the flattened 9×9 matrix `∂P_ij / ∂F_kl`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor4(pub [f64; 81]);

impl Tensor4 {
    pub fn zeros() -> Self {
        Tensor4([0.0; 81])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.0[(3 * i + j) * 9 + 3 * k + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.0[(3 * i + j) * 9 + 3 * k + l] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.0[(3 * i + j) * 9 + 3 * k + l] += v;
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|C_ijkl − C_klij|`.
    pub fn major_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..9 {
            for b in 0..9 {
                worst = worst.max((self.0[a * 9 + b] - self.0[b * 9 + a]).abs());
            }
        }
        worst
    }
}

impl std::ops::Sub for Tensor4 {
    type Output = Tensor4;
    fn sub(mut self, rhs: Tensor4) -> Tensor4 {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a -= b;
        }
        self
    }
}

pub fn to_mat3<S: Scalar>(f: &Matrix3<f64>) -> Mat3<S> {
    let mut m = [[S::cst(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = S::cst(f[(i, j)]);
        }
    }
    m
}

/// Seeds each entry `F_ij` as variable `3i + j`.
pub fn seed_jet9(f: &Matrix3<f64>) -> Mat3<Jet<9>> {
    let mut m = [[Jet::constant(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = Jet::variable(f[(i, j)], 3 * i + j);
        }
    }
    m
}

/// Gradient of a `Jet<9>` seeded with [`seed_jet9`], reshaped to 3×3.
pub fn jet_gradient<const N: usize>(w: &Jet<N>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| w.g[3 * i + j])
}

/// Hessian of a `Jet<9>` seeded with [`seed_jet9`], as a fourth-order tensor.
pub fn jet_hessian<const N: usize>(w: &Jet<N>) -> Tensor4 {
    let mut t = Tensor4::zeros();
    for a in 0..9 {
        for b in 0..9 {
            t.0[a * 9 + b] = w.h[a][b];
        }
    }
    t
}

pub fn det3<S: Scalar>(m: &Mat3<S>) -> S {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `FᵀF`.
pub fn right_cauchy_green<S: Scalar>(f: &Mat3<S>) -> Mat3<S> {
    let mut c = [[S::cst(0.0); 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            let mut s = f[0][a] * f[0][b];
            s = s + f[1][a] * f[1][b];
            s = s + f[2][a] * f[2][b];
            c[a][b] = s;
            c[b][a] = s;
        }
    }
    c
}

pub fn trace<S: Scalar>(m: &Mat3<S>) -> S {
    m[0][0] + m[1][1] + m[2][2]
}

/// `tr(M²)` for symmetric `M`.
pub fn trace_sq_sym<S: Scalar>(m: &Mat3<S>) -> S {
    let mut s = m[0][0] * m[0][0] + m[1][1] * m[1][1] + m[2][2] * m[2][2];
    let off = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    s = s + off * 2.0;
    s
}

/// `a · M a` for a constant or variable vector `a`.
pub fn quad_form<S: Scalar>(m: &Mat3<S>, a: &[S; 3]) -> S {
    let mut s = S::cst(0.0);
    for i in 0..3 {
        for j in 0..3 {
            s = s + a[i] * m[i][j] * a[j];
        }
    }
    s
}

/// Rotation matrix from a unit axis and an angle (Rodrigues).
pub fn rotation(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    Matrix3::new(
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    )
}

/// Embeds an in-plane 2×2 block into a plane-strain 3×3 tensor (`F₃₃ = 1`).
pub fn plane_strain(f11: f64, f12: f64, f21: f64, f22: f64) -> Matrix3<f64> {
    Matrix3::new(f11, f12, 0.0, f21, f22, 0.0, 0.0, 0.0, 1.0)
}
