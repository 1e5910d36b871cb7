//! Isotropic spectral energies `ψ(C) = Σᵢ f(cᵢ)` over the eigenvalues of
//! `C = FᵀF`, differentiated with the Daleckii–Krein formula so that
//! coincident eigenvalues need no special casing beyond the divided
//! difference limit.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::tensor::Tensor4;

/// Relative eigenvalue gap below which the divided difference is replaced
/// by the derivative at the midpoint.
const COINCIDENCE_GAP: f64 = 1e-5;

/// Scalar function of one eigenvalue with its first two derivatives.
pub trait EigenFunction {
    fn value(&self, c: f64) -> f64;
    fn d1(&self, c: f64) -> f64;
    fn d2(&self, c: f64) -> f64;
}

pub struct SpectralResponse {
    pub energy: f64,
    pub stress: Matrix3<f64>,
    pub tangent: Option<Tensor4>,
}

pub fn evaluate<E: EigenFunction>(func: &E, f: &Matrix3<f64>, with_tangent: bool) -> SpectralResponse {
    let c = f.transpose() * f;
    let eig = SymmetricEigen::new(c);
    let vals = eig.eigenvalues;
    let vecs = eig.eigenvectors;

    let energy = (0..3).map(|i| func.value(vals[i])).sum();

    // G = ∂ψ/∂C = Σ f'(cᵢ) Nᵢ⊗Nᵢ
    let mut g = Matrix3::zeros();
    for i in 0..3 {
        let n = vecs.column(i);
        g += func.d1(vals[i]) * n * n.transpose();
    }
    let stress = 2.0 * f * g;

    let tangent = with_tangent.then(|| {
        let mut theta = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (vals[i], vals[j]);
                theta[i][j] = if (a - b).abs() <= COINCIDENCE_GAP * a.abs().max(b.abs()).max(1.0) {
                    func.d2(0.5 * (a + b))
                } else {
                    (func.d1(a) - func.d1(b)) / (a - b)
                };
            }
        }
        // T_ABCD = Σ_ij θ_ij N_iA N_jB N_iC N_jD
        let mut t = [0.0; 81];
        for i in 0..3 {
            for j in 0..3 {
                let ni = vecs.column(i);
                let nj = vecs.column(j);
                for a in 0..3 {
                    for b in 0..3 {
                        let ab = theta[i][j] * ni[a] * nj[b];
                        for cc in 0..3 {
                            for d in 0..3 {
                                t[((a * 3 + b) * 3 + cc) * 3 + d] += ab * ni[cc] * nj[d];
                            }
                        }
                    }
                }
            }
        }
        let tt = |a: usize, b: usize, c: usize, d: usize| t[((a * 3 + b) * 3 + c) * 3 + d];

        // ℂ_iJkL = 2 δ_ik G_LJ + 2 F_iB (T_BJLD F_kD + T_BJCL F_kC)
        let mut out = Tensor4::zeros();
        for i in 0..3 {
            for jj in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let mut v = if i == k { 2.0 * g[(l, jj)] } else { 0.0 };
                        for b in 0..3 {
                            let mut inner = 0.0;
                            for d in 0..3 {
                                inner += tt(b, jj, l, d) * f[(k, d)] + tt(b, jj, d, l) * f[(k, d)];
                            }
                            v += 2.0 * f[(i, b)] * inner;
                        }
                        out.set(i, jj, k, l, v);
                    }
                }
            }
        }
        out
    });

    SpectralResponse {
        energy,
        stress,
        tangent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ψ = tr(C²)/2 has a closed-form tangent; used to check the spectral route.
    struct HalfSquare;

    impl EigenFunction for HalfSquare {
        fn value(&self, c: f64) -> f64 {
            0.5 * c * c
        }
        fn d1(&self, c: f64) -> f64 {
            c
        }
        fn d2(&self, _c: f64) -> f64 {
            1.0
        }
    }

    #[test]
    fn matches_closed_form_quadratic() {
        let f = Matrix3::new(1.1, 0.2, 0.0, -0.1, 0.95, 0.05, 0.0, 0.1, 1.02);
        let r = evaluate(&HalfSquare, &f, true);
        let c = f.transpose() * f;
        assert!((r.energy - 0.5 * (c * c).trace()).abs() < 1e-12);
        // P = 2 F C
        assert!((r.stress - 2.0 * f * c).abs().max() < 1e-12);
        let t = r.tangent.unwrap();
        // finite differences of P
        let h = 1e-6;
        for k in 0..3 {
            for l in 0..3 {
                let mut fp = f;
                fp[(k, l)] += h;
                let mut fm = f;
                fm[(k, l)] -= h;
                let dp = (2.0 * fp * (fp.transpose() * fp) - 2.0 * fm * (fm.transpose() * fm)) / (2.0 * h);
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((dp[(i, j)] - t.get(i, j, k, l)).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn coincident_eigenvalues_are_finite() {
        let r = evaluate(&HalfSquare, &Matrix3::identity(), true);
        assert!(r.tangent.unwrap().0.iter().all(|v| v.is_finite()));
    }
}
