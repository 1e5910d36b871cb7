//! Invariant feature vectors and their derivatives with respect to the
//! in-plane deformation gradient and the fiber angles.

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use crate::dual::{Jet, Scalar};
use crate::error::Result;
use crate::materials::{fiber_direction, invariants_generic};
use crate::tensor::{to_mat3, Mat3};

/// `[Ĩ₁ − 3, Ĩ₂ − 3, (J − 1)², (Ĩᵃ₁ − 1)², …]` for fiber angles `alphas`.
pub fn feature_vector<S: Scalar>(f: &Mat3<S>, alphas: &[S]) -> Result<Vec<S>> {
    let dirs: Vec<[S; 3]> = alphas.iter().map(|&a| fiber_direction(a)).collect();
    let inv = invariants_generic(f, &dirs)?;
    let mut z = inv.shifted_isotropic().to_vec();
    z.extend(inv.i_fibers.iter().map(|&i| (i - 1.0).square()));
    Ok(z)
}

/// Features of many plane deformation gradients with the derivatives needed
/// to turn network input gradients into stresses and to differentiate with
/// respect to fiber angles.
#[derive(Clone, Debug)]
pub struct FeatureBatch {
    pub n_fibers: usize,
    /// Features, one column per deformation gradient.
    pub z0: DMatrix<f64>,
    /// `d[c][p][2i + j] = ∂z_p/∂F_ij` for in-plane `i, j`.
    pub d: Vec<Vec<[f64; 4]>>,
    /// `d2[c][p][a][b]`: second derivatives with respect to in-plane entries.
    pub d2: Vec<Vec<[[f64; 4]; 4]>>,
    /// `dz_da[c][p][q] = ∂z_p/∂α_q`.
    pub dz_da: Vec<Vec<Vec<f64>>>,
    /// `dd_da[c][p][q][2i + j] = ∂²z_p/∂F_ij∂α_q`.
    pub dd_da: Vec<Vec<Vec<[f64; 4]>>>,
}

struct Column {
    z: Vec<f64>,
    d: Vec<[f64; 4]>,
    d2: Vec<[[f64; 4]; 4]>,
    dz_da: Vec<Vec<f64>>,
    dd_da: Vec<Vec<[f64; 4]>>,
}

fn column<const N: usize>(f: &Matrix3<f64>, alphas: &[f64]) -> Result<Column> {
    let mut m = to_mat3::<Jet<N>>(f);
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = Jet::variable(f[(i, j)], 2 * i + j);
        }
    }
    let a: Vec<Jet<N>> = alphas
        .iter()
        .enumerate()
        .map(|(q, &v)| Jet::variable(v, 4 + q))
        .collect();
    let z = feature_vector(&m, &a)?;
    let nf = alphas.len();
    Ok(Column {
        z: z.iter().map(|j| j.v).collect(),
        d: z.iter().map(|j| [j.g[0], j.g[1], j.g[2], j.g[3]]).collect(),
        d2: z
            .iter()
            .map(|j| std::array::from_fn(|a| std::array::from_fn(|b| j.h[a][b])))
            .collect(),
        dz_da: z.iter().map(|j| (0..nf).map(|q| j.g[4 + q]).collect()).collect(),
        dd_da: z
            .iter()
            .map(|j| {
                (0..nf)
                    .map(|q| [j.h[0][4 + q], j.h[1][4 + q], j.h[2][4 + q], j.h[3][4 + q]])
                    .collect()
            })
            .collect(),
    })
}

/// Evaluates features for every deformation gradient in parallel.
/// Fails with the first non-positive Jacobian in input order.
pub fn feature_batch(fs: &[Matrix3<f64>], alphas: &[f64]) -> Result<FeatureBatch> {
    let cols: Vec<Column> = fs
        .par_iter()
        .map(|f| match alphas.len() {
            0 => column::<4>(f, alphas),
            1 => column::<5>(f, alphas),
            2 => column::<6>(f, alphas),
            n => panic!("unsupported fiber count {n}"),
        })
        .collect::<Result<_>>()?;
    let n_in = 3 + alphas.len();
    let z0 = DMatrix::from_fn(n_in, cols.len(), |p, c| cols[c].z[p]);
    let mut batch = FeatureBatch {
        n_fibers: alphas.len(),
        z0,
        d: Vec::with_capacity(cols.len()),
        d2: Vec::with_capacity(cols.len()),
        dz_da: Vec::with_capacity(cols.len()),
        dd_da: Vec::with_capacity(cols.len()),
    };
    for c in cols {
        batch.d.push(c.d);
        batch.d2.push(c.d2);
        batch.dz_da.push(c.dz_da);
        batch.dd_da.push(c.dd_da);
    }
    Ok(batch)
}
