use nalgebra::Matrix3;

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::tensor::{det3, quad_form, right_cauchy_green, to_mat3, trace, trace_sq_sym, Mat3};

/// Principal and deviatoric strain invariants of `C = FᵀF`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantSet<S> {
    pub i1: S,
    pub i2: S,
    pub i3: S,
    pub j: S,
    pub i1_bar: S,
    pub i2_bar: S,
    /// One deviatoric fiber invariant per fiber direction.
    pub i_fibers: Vec<S>,
}

impl<S: Scalar> InvariantSet<S> {
    /// `(Ĩ₁ − 3, Ĩ₂ − 3, (J − 1)²)`, all zero at `F = I`.
    pub fn shifted_isotropic(&self) -> [S; 3] {
        [
            self.i1_bar - 3.0,
            self.i2_bar - 3.0,
            (self.j - 1.0).square(),
        ]
    }
}

/// Fiber direction `(cos α, sin α, 0)` in the specimen plane.
pub fn fiber_direction<S: Scalar>(alpha: S) -> [S; 3] {
    let a = alpha.re();
    let (s, c) = a.sin_cos();
    [alpha.chain(c, -s, -c), alpha.chain(s, c, -s), S::cst(0.0)]
}

/// Invariants of a deformation gradient over any scalar type.
pub fn invariants_generic<S: Scalar>(f: &Mat3<S>, fibers: &[[S; 3]]) -> Result<InvariantSet<S>> {
    let j = det3(f);
    if !(j.re() > 0.0) {
        return Err(Error::NonPositiveJacobian(j.re()));
    }
    let c = right_cauchy_green(f);
    let i1 = trace(&c);
    let i2 = (i1 * i1 - trace_sq_sym(&c)) * 0.5;
    let i3 = j * j;
    let jm23 = j.powf(-2.0 / 3.0);
    let i1_bar = jm23 * i1;
    let i2_bar = jm23 * jm23 * i2;
    let i_fibers = fibers.iter().map(|a| jm23 * quad_form(&c, a)).collect();
    Ok(InvariantSet {
        i1,
        i2,
        i3,
        j,
        i1_bar,
        i2_bar,
        i_fibers,
    })
}

/// Invariants for a plain `f64` deformation gradient and unit fiber directions.
pub fn invariants(f: &Matrix3<f64>, fiber_dirs: &[[f64; 3]]) -> Result<InvariantSet<f64>> {
    invariants_generic(&to_mat3::<f64>(f), fiber_dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn identity_invariants() {
        let inv = invariants(&Matrix3::identity(), &[fiber_direction(0.7)]).unwrap();
        assert_eq!(inv.i1, 3.0);
        assert_eq!(inv.i2, 3.0);
        assert_eq!(inv.j, 1.0);
        assert_eq!(inv.i1_bar, 3.0);
        assert_eq!(inv.i2_bar, 3.0);
        assert!((inv.i_fibers[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniaxial_stretch_invariants() {
        let f = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.1, 1.0, 1.0));
        let inv = invariants(&f, &[fiber_direction(FRAC_PI_4)]).unwrap();
        assert!((inv.j - 1.1).abs() < 1e-15);
        assert!((inv.i1 - 3.21).abs() < 1e-14);
        let s = 1.1f64.powf(-2.0 / 3.0);
        assert!((inv.i1_bar - 3.21 * s).abs() < 1e-14);
        assert!((inv.i2_bar - 3.42 * s * s).abs() < 1e-14);
        assert!((inv.i_fibers[0] - 1.105 * s).abs() < 1e-14);
        assert!((inv.i1_bar - 3.01240).abs() < 5e-5);
        assert!((inv.i2_bar - 3.01190).abs() < 5e-5);
        assert!((inv.i_fibers[0] - 1.03698).abs() < 5e-5);
        assert!((inv.j - inv.i3.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn inverted_gradient_rejected() {
        let f = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, 1.0, 1.0));
        assert!(matches!(
            invariants(&f, &[]),
            Err(Error::NonPositiveJacobian(_))
        ));
    }
}
