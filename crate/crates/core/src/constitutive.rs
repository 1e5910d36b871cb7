use nalgebra::Matrix3;

use crate::error::Result;
use crate::tensor::Tensor4;

/// In-plane first Piola-Kirchhoff stress and the in-plane block of the
/// tangent modulus. `tangent[2i + j][2k + l] = ∂P_ij / ∂F_kl`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneResponse {
    pub stress: [[f64; 2]; 2],
    pub tangent: [[f64; 4]; 4],
}

impl PlaneResponse {
    pub fn from_full(p: &Matrix3<f64>, c: Option<&Tensor4>) -> Self {
        let mut tangent = [[0.0; 4]; 4];
        if let Some(c) = c {
            for a in 0..4 {
                for b in 0..4 {
                    tangent[a][b] = c.get(a / 2, a % 2, b / 2, b % 2);
                }
            }
        }
        PlaneResponse {
            stress: [[p[(0, 0)], p[(0, 1)]], [p[(1, 0)], p[(1, 1)]]],
            tangent,
        }
    }
}

/// A hyperelastic material law `W(F)` with its exact derivatives.
pub trait ConstitutiveModel: Sync {
    fn energy(&self, f: &Matrix3<f64>) -> Result<f64>;

    /// First Piola-Kirchhoff stress `P = ∂W/∂F`.
    fn stress(&self, f: &Matrix3<f64>) -> Result<Matrix3<f64>>;

    /// Tangent modulus `ℂ = ∂P/∂F`.
    fn tangent(&self, f: &Matrix3<f64>) -> Result<Tensor4>;

    fn plane_response(&self, f: &Matrix3<f64>, with_tangent: bool) -> Result<PlaneResponse> {
        let p = self.stress(f)?;
        if with_tangent {
            let c = self.tangent(f)?;
            Ok(PlaneResponse::from_full(&p, Some(&c)))
        } else {
            Ok(PlaneResponse::from_full(&p, None))
        }
    }

    /// Evaluates many deformation gradients at once. Implementations may
    /// batch internally; results are returned in input order.
    fn plane_response_batch(
        &self,
        fs: &[Matrix3<f64>],
        with_tangent: bool,
    ) -> Result<Vec<PlaneResponse>> {
        fs.iter()
            .map(|f| self.plane_response(f, with_tangent))
            .collect()
    }

    /// Short identifier used in logs and reports.
    fn label(&self) -> String;
}
