use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use super::{SnapshotDataset, Stage};
use crate::error::{Error, Result};

pub const DEFAULT_BANDWIDTH: f64 = 0.05;
/// Ridge is this constant times the number of nodes.
pub const DEFAULT_RIDGE_PER_NODE: f64 = 1e-8;

/// Smooths each displacement component of each snapshot with Gaussian-kernel
/// ridge regression over the reference node positions.
///
/// With `α = (K + λI)⁻¹u` the fitted values at the nodes are `Kα = u − λα`,
/// so a single Cholesky factorization serves every component.
pub fn denoise_krr(ds: &SnapshotDataset, bandwidth: f64, ridge: f64) -> Result<SnapshotDataset> {
    let x = &ds.mesh.nodes;
    let n = x.len();
    let inv = -0.5 / (bandwidth * bandwidth);
    let k = Mat::<f64>::from_fn(n, n, |i, j| {
        let d2 = (x[i][0] - x[j][0]).powi(2) + (x[i][1] - x[j][1]).powi(2);
        (inv * d2).exp() + if i == j { ridge } else { 0.0 }
    });
    let llt = k.llt(Side::Lower).map_err(|_| Error::SingularKernel)?;
    let l = llt.L();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)] * l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > 1e-13 * hi) {
        return Err(Error::SingularKernel);
    }

    let n_t = ds.n_snapshots();
    let mut rhs = Mat::<f64>::from_fn(n, 2 * n_t, |a, c| ds.displacements[c / 2][a][c % 2]);
    llt.solve_in_place(rhs.as_mut());
    let disp = (0..n_t)
        .map(|t| {
            (0..n)
                .map(|a| {
                    let u = ds.displacements[t][a];
                    [u[0] - ridge * rhs[(a, 2 * t)], u[1] - ridge * rhs[(a, 2 * t + 1)]]
                })
                .collect()
        })
        .collect();
    let mut out = ds.with_stage(Stage::Denoised, disp);
    out.provenance
        .parameters
        .insert("krr_bandwidth".into(), serde_json::json!(bandwidth));
    out.provenance
        .parameters
        .insert("krr_ridge".into(), serde_json::json!(ridge));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{partition_dofs, structured_rectangle, Mesh};
    use crate::pipeline::Provenance;
    use std::collections::BTreeMap;

    fn dataset(mesh: Mesh, field: impl Fn([f64; 2]) -> [f64; 2]) -> SnapshotDataset {
        let u = mesh.nodes.iter().map(|&p| field(p)).collect();
        SnapshotDataset {
            partition: partition_dofs(&mesh, &[]).unwrap(),
            displacements: vec![u],
            reactions: vec![vec![]],
            mesh,
            provenance: Provenance {
                model_id: "NH".into(),
                sigma_u: 0.0,
                seed: 0,
                stage: Stage::Raw,
                parameters: BTreeMap::new(),
            },
        }
    }

    #[test]
    fn affine_field_is_reproduced() {
        let mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 30, 30);
        let n = mesh.n_nodes() as f64;
        let ds = dataset(mesh, |p| [0.1 * p[0] + 0.02 * p[1], -0.03 * p[0] + 0.05 * p[1]]);
        let out = denoise_krr(&ds, DEFAULT_BANDWIDTH, DEFAULT_RIDGE_PER_NODE * n).unwrap();
        let scale = ds.displacements[0]
            .iter()
            .fold(0.0f64, |m, u| m.max(u[0].abs()).max(u[1].abs()));
        for (a, b) in out.displacements[0].iter().zip(&ds.displacements[0]) {
            assert!((a[0] - b[0]).abs() <= 1e-3 * scale);
            assert!((a[1] - b[1]).abs() <= 1e-3 * scale);
        }
        assert_eq!(out.provenance.stage, Stage::Denoised);
    }

    #[test]
    fn duplicate_nodes_without_ridge_are_singular() {
        let mut mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 4, 4);
        let dup = mesh.nodes[7];
        mesh.nodes.push(dup);
        let ds = dataset(mesh, |p| [p[0], p[1]]);
        assert!(matches!(
            denoise_krr(&ds, DEFAULT_BANDWIDTH, 0.0),
            Err(Error::SingularKernel)
        ));
    }
}
