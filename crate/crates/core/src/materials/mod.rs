//! Closed-form benchmark hyperelastic models used as hidden ground truths.

pub mod invariants;
pub mod langevin;
pub mod spectral;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::constitutive::{ConstitutiveModel, PlaneResponse};
use crate::dual::{Jet, Scalar};
use crate::error::{Error, Result};
use crate::tensor::{jet_gradient, jet_hessian, seed_jet9, to_mat3, Mat3, Tensor4};

pub use invariants::{fiber_direction, invariants, invariants_generic, InvariantSet};
pub use langevin::{inverse_langevin, langevin};

/// Chain segments of the Arruda-Boyce network.
pub const AB_CHAIN_SEGMENTS: f64 = 28.0;
pub const OG_MU: f64 = 1.3;
pub const OG_ETA: f64 = 1.3;
pub const HZ_K1: f64 = 0.9;
pub const HZ_K2: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    NH,
    IH,
    HW,
    GT,
    AB,
    OG,
    AI45,
    AI60,
    HZ,
}

impl ModelId {
    pub const ALL: [ModelId; 9] = [
        ModelId::NH,
        ModelId::IH,
        ModelId::HW,
        ModelId::GT,
        ModelId::AB,
        ModelId::OG,
        ModelId::AI45,
        ModelId::AI60,
        ModelId::HZ,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::NH => "NH",
            ModelId::IH => "IH",
            ModelId::HW => "HW",
            ModelId::GT => "GT",
            ModelId::AB => "AB",
            ModelId::OG => "OG",
            ModelId::AI45 => "AI45",
            ModelId::AI60 => "AI60",
            ModelId::HZ => "HZ",
        }
    }

    /// Fiber orientations in `[0, π)`.
    pub fn fiber_angles(self) -> Vec<f64> {
        match self {
            ModelId::AI45 => vec![PI / 4.0],
            ModelId::AI60 => vec![PI / 3.0],
            // ±30°, with −30° folded into [0, π)
            ModelId::HZ => vec![PI / 6.0, PI - PI / 6.0],
            _ => Vec::new(),
        }
    }

    pub fn is_isotropic(self) -> bool {
        self.fiber_angles().is_empty()
    }

    /// Whether `P(I) = 0` holds for the closed form.
    pub fn stress_free_reference(self) -> bool {
        self != ModelId::OG
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// One of the nine benchmark models with its fixed coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkModel {
    pub id: ModelId,
    pub fiber_angles: Vec<f64>,
    fiber_dirs: Vec<[f64; 3]>,
}

impl BenchmarkModel {
    pub fn new(id: ModelId) -> Self {
        if !id.stress_free_reference() {
            log::warn!("{id} has a nonzero reference stress P(I) = {OG_MU}·I");
        }
        let fiber_angles = id.fiber_angles();
        let fiber_dirs = fiber_angles.iter().map(|&a| fiber_direction(a)).collect();
        BenchmarkModel {
            id,
            fiber_angles,
            fiber_dirs,
        }
    }

    fn energy_generic<S: Scalar>(&self, f: &Mat3<S>) -> Result<S> {
        let fibers: Vec<[S; 3]> = self
            .fiber_dirs
            .iter()
            .map(|a| [S::cst(a[0]), S::cst(a[1]), S::cst(a[2])])
            .collect();
        let inv = invariants_generic(f, &fibers)?;
        let d1 = inv.i1_bar - 3.0;
        let d2 = inv.i2_bar - 3.0;
        let vol = (inv.j - 1.0).square();
        let w = match self.id {
            ModelId::NH => d1 * 0.5 + vol * 1.5,
            ModelId::IH => d1 * 0.5 + d2 + d1 * d1 + vol * 1.5,
            ModelId::HW => d1 * 0.5 + d2 + d1 * d2 * 0.7 + d1 * d1 * d1 * 0.2 + vol * 1.5,
            ModelId::GT => {
                if !(inv.i2_bar.re() > 0.0) {
                    return Err(Error::LogDomain(inv.i2_bar.re()));
                }
                d1 * 0.5 + (inv.i2_bar / 3.0).ln() + vol * 1.5
            }
            ModelId::AB => arruda_boyce_chain(inv.i1_bar)? - ab_offset() + vol * 1.5,
            ModelId::AI45 | ModelId::AI60 => {
                d1 * 0.5 + vol * 0.75 + (inv.i_fibers[0] - 1.0).square() * 0.5
            }
            ModelId::HZ => {
                let e1 = ((inv.i_fibers[0] - 1.0).square() * HZ_K2).exp();
                let e2 = ((inv.i_fibers[1] - 1.0).square() * HZ_K2).exp();
                d1 * 0.5 + (e1 + e2 - 2.0) * (HZ_K1 / (2.0 * HZ_K2)) + vol
            }
            ModelId::OG => unreachable!("Ogden is evaluated through its spectral form"),
        };
        Ok(w)
    }

    fn ogden(&self, f: &Matrix3<f64>, with_tangent: bool) -> Result<spectral::SpectralResponse> {
        let det = f.determinant();
        if !(det > 0.0) {
            return Err(Error::NonPositiveJacobian(det));
        }
        let mut r = spectral::evaluate(&OgdenBranch, f, with_tangent);
        r.energy -= 3.0 * OG_MU / OG_ETA;
        Ok(r)
    }
}

/// `f(c) = (μ/η) c^{η/2}` so that `Σ f(cᵢ) = (μ/η) Σ λᵢ^η`.
struct OgdenBranch;

impl spectral::EigenFunction for OgdenBranch {
    fn value(&self, c: f64) -> f64 {
        OG_MU / OG_ETA * c.powf(0.5 * OG_ETA)
    }
    fn d1(&self, c: f64) -> f64 {
        0.5 * OG_MU * c.powf(0.5 * OG_ETA - 1.0)
    }
    fn d2(&self, c: f64) -> f64 {
        0.5 * OG_MU * (0.5 * OG_ETA - 1.0) * c.powf(0.5 * OG_ETA - 2.0)
    }
}

/// `2.5 √N [β λ_c − √N ln(sinh β / β)]` with `λ_c = √(Ĩ₁/3)` and
/// `β = ℒ⁻¹(λ_c / √N)`.
fn arruda_boyce_chain<S: Scalar>(i1_bar: S) -> Result<S> {
    let sqrt_n = AB_CHAIN_SEGMENTS.sqrt();
    let lambda_c = (i1_bar / 3.0).sqrt();
    let y = lambda_c / sqrt_n;
    let x = inverse_langevin(y.re())?;
    let l1 = langevin::langevin_d1(x);
    let l2 = langevin::langevin_d2(x);
    let beta = y.chain(x, 1.0 / l1, -l2 / (l1 * l1 * l1));
    let log_ratio = beta.chain((x.sinh() / x).ln(), langevin(x), l1);
    Ok((beta * lambda_c - log_ratio * sqrt_n) * (2.5 * sqrt_n))
}

/// The Arruda-Boyce chain term at `F = I`, subtracted so that `W(I) = 0`.
pub fn ab_offset() -> f64 {
    static OFFSET: OnceLock<f64> = OnceLock::new();
    *OFFSET.get_or_init(|| arruda_boyce_chain(3.0f64).expect("reference state is admissible"))
}

fn plane_seed(f: &Matrix3<f64>) -> Mat3<Jet<4>> {
    let mut m = to_mat3::<Jet<4>>(f);
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = Jet::variable(f[(i, j)], 2 * i + j);
        }
    }
    m
}

impl ConstitutiveModel for BenchmarkModel {
    fn energy(&self, f: &Matrix3<f64>) -> Result<f64> {
        match self.id {
            ModelId::OG => Ok(self.ogden(f, false)?.energy),
            _ => self.energy_generic(&to_mat3::<f64>(f)),
        }
    }

    fn stress(&self, f: &Matrix3<f64>) -> Result<Matrix3<f64>> {
        match self.id {
            ModelId::OG => Ok(self.ogden(f, false)?.stress),
            _ => Ok(jet_gradient(&self.energy_generic(&seed_jet9(f))?)),
        }
    }

    fn tangent(&self, f: &Matrix3<f64>) -> Result<Tensor4> {
        match self.id {
            ModelId::OG => Ok(self.ogden(f, true)?.tangent.expect("tangent requested")),
            _ => Ok(jet_hessian(&self.energy_generic(&seed_jet9(f))?)),
        }
    }

    fn plane_response(&self, f: &Matrix3<f64>, with_tangent: bool) -> Result<PlaneResponse> {
        if self.id == ModelId::OG {
            let r = self.ogden(f, with_tangent)?;
            return Ok(PlaneResponse::from_full(&r.stress, r.tangent.as_ref()));
        }
        let w = self.energy_generic(&plane_seed(f))?;
        Ok(PlaneResponse {
            stress: [[w.g[0], w.g[1]], [w.g[2], w.g[3]]],
            tangent: w.h,
        })
    }

    fn label(&self) -> String {
        self.id.to_string()
    }
}
