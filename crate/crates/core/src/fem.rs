//! Quasi-static plane-strain finite-element solver over any
//! [`ConstitutiveModel`], with displacement control and Newton-Raphson.

use std::sync::OnceLock;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::constitutive::{ConstitutiveModel, PlaneResponse};
use crate::error::{Error, Result};
use crate::mesh::{
    deformation_gradient, element_displacements, partition_dofs, Direction, DirichletSpec,
    DofPartition, ElementGeometry, Mesh,
};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 25;
pub const DEFAULT_MAX_BISECTIONS: usize = 4;

/// Displacement constraint `u_dir = factor · δ` on every node of a boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub tag: String,
    pub direction: Direction,
    pub factor: f64,
    /// Whether the summed reaction along this boundary is recorded.
    pub reaction_measured: bool,
}

impl BoundaryCondition {
    pub fn new(tag: &str, direction: Direction, factor: f64) -> Self {
        BoundaryCondition {
            tag: tag.to_string(),
            direction,
            factor,
            reaction_measured: true,
        }
    }

    pub fn unmeasured(mut self) -> Self {
        self.reaction_measured = false;
        self
    }

    pub fn spec(&self) -> DirichletSpec {
        DirichletSpec::new(&self.tag, self.direction, self.reaction_measured)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub max_bisections: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_tol: DEFAULT_NEWTON_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            max_bisections: DEFAULT_MAX_BISECTIONS,
        }
    }
}

/// Converged load steps of a quasi-static solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub deltas: Vec<f64>,
    pub partition: DofPartition,
    /// `[step][node] = (u_x, u_y)`
    pub displacements: Vec<Vec<[f64; 2]>>,
    /// `[step][group]`, summed nodal forces of each measured group
    pub reactions: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub residual_norms: Vec<f64>,
    /// Free-DOF residual ∞-norm of every Newton iterate, per step.
    pub residual_history: Vec<Vec<f64>>,
}

/// Deformation gradients of every element; errors on the first element with
/// `det F ≤ 0`.
pub fn element_gradients(
    mesh: &Mesh,
    geoms: &[ElementGeometry],
    disp: &[[f64; 2]],
) -> Result<Vec<Matrix3<f64>>> {
    geoms
        .iter()
        .enumerate()
        .map(|(e, g)| {
            let f = deformation_gradient(g, &element_displacements(mesh, e, disp));
            let det = f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)];
            if det > 0.0 {
                Ok(f)
            } else {
                Err(Error::ElementInversion { element: e, det })
            }
        })
        .collect()
}

/// `f^a_i = Σ_e A_e P_ij ∇_j N^a`, accumulated in ascending element order.
pub fn accumulate_forces(
    mesh: &Mesh,
    geoms: &[ElementGeometry],
    stresses: &[[[f64; 2]; 2]],
) -> Vec<[f64; 2]> {
    let mut f = vec![[0.0; 2]; mesh.n_nodes()];
    for (e, (g, p)) in geoms.iter().zip(stresses).enumerate() {
        let el = mesh.elements[e];
        for (a, grad) in el.iter().zip(g.grad_n.iter()) {
            for i in 0..2 {
                f[*a][i] += g.area * (p[i][0] * grad[0] + p[i][1] * grad[1]);
            }
        }
    }
    f
}

/// Free-DOF forces and per-group force sums of a nodal force field.
pub fn split_residuals(forces: &[[f64; 2]], partition: &DofPartition) -> (Vec<f64>, Vec<f64>) {
    let free = partition
        .free
        .iter()
        .map(|d| forces[d.node][d.dir])
        .collect();
    let sums = partition
        .fixed_groups
        .iter()
        .map(|g| g.dofs.iter().fold(0.0, |s, d| s + forces[d.node][d.dir]))
        .collect();
    (free, sums)
}

/// Internal nodal forces of a displacement field under `model`.
pub fn internal_forces(
    mesh: &Mesh,
    nodal_disp: &[[f64; 2]],
    model: &dyn ConstitutiveModel,
) -> Result<Vec<[f64; 2]>> {
    let geoms = mesh.geometries()?;
    internal_forces_with(mesh, &geoms, nodal_disp, model)
}

pub fn internal_forces_with(
    mesh: &Mesh,
    geoms: &[ElementGeometry],
    nodal_disp: &[[f64; 2]],
    model: &dyn ConstitutiveModel,
) -> Result<Vec<[f64; 2]>> {
    let fs = element_gradients(mesh, geoms, nodal_disp)?;
    let resp = model.plane_response_batch(&fs, false)?;
    let stresses: Vec<_> = resp.iter().map(|r| r.stress).collect();
    Ok(accumulate_forces(mesh, geoms, &stresses))
}

/// Re-evaluates equilibrium of a displacement field: forces at the free DOFs
/// and the summed force of every fixed group.
pub fn residual_check(
    mesh: &Mesh,
    nodal_disp: &[[f64; 2]],
    model: &dyn ConstitutiveModel,
    partition: &DofPartition,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let forces = internal_forces(mesh, nodal_disp, model)?;
    Ok(split_residuals(&forces, partition))
}

/// Maps global DOF indices to positions among the free DOFs.
struct FreeIndex {
    map: Vec<usize>,
    n_free: usize,
}

impl FreeIndex {
    fn new(n_nodes: usize, partition: &DofPartition) -> Self {
        let mut map = vec![usize::MAX; 2 * n_nodes];
        for (k, d) in partition.free.iter().enumerate() {
            map[d.global()] = k;
        }
        FreeIndex {
            map,
            n_free: partition.free.len(),
        }
    }
}

fn assemble_free_tangent(
    mesh: &Mesh,
    geoms: &[ElementGeometry],
    resp: &[PlaneResponse],
    index: &FreeIndex,
) -> Result<SparseColMat<usize, f64>> {
    let mut triplets = Vec::with_capacity(36 * geoms.len());
    for (e, (g, r)) in geoms.iter().zip(resp).enumerate() {
        let el = mesh.elements[e];
        for a in 0..3 {
            for i in 0..2 {
                let row = index.map[2 * el[a] + i];
                if row == usize::MAX {
                    continue;
                }
                for b in 0..3 {
                    for k in 0..2 {
                        let col = index.map[2 * el[b] + k];
                        if col == usize::MAX {
                            continue;
                        }
                        let mut v = 0.0;
                        for j in 0..2 {
                            for l in 0..2 {
                                v += r.tangent[2 * i + j][2 * k + l] * g.grad_n[a][j] * g.grad_n[b][l];
                            }
                        }
                        triplets.push(Triplet::new(row, col, g.area * v));
                    }
                }
            }
        }
    }
    SparseColMat::try_new_from_triplets(index.n_free, index.n_free, &triplets)
        .map_err(|e| Error::LinearSolve(format!("{e:?}")))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// A displacement-controlled boundary-value problem on a fixed mesh.
pub struct Problem<'a> {
    pub mesh: &'a Mesh,
    pub geoms: Vec<ElementGeometry>,
    pub bcs: Vec<BoundaryCondition>,
    pub partition: DofPartition,
    index: FreeIndex,
    /// `(global dof, factor)` for every constrained DOF.
    prescribed: Vec<(usize, f64)>,
    llt_symbolic: OnceLock<Option<SymbolicLlt<usize>>>,
    lu_symbolic: OnceLock<Option<SymbolicLu<usize>>>,
}

impl<'a> Problem<'a> {
    pub fn new(mesh: &'a Mesh, bcs: &[BoundaryCondition]) -> Result<Self> {
        let geoms = mesh.geometries()?;
        let specs: Vec<DirichletSpec> = bcs.iter().map(|b| b.spec()).collect();
        let partition = partition_dofs(mesh, &specs)?;
        let mut prescribed = Vec::new();
        let mut seen = vec![false; 2 * mesh.n_nodes()];
        // same first-listed-wins rule as the partition
        for bc in bcs {
            for &a in mesh.boundary(&bc.tag)? {
                let dof = 2 * a + bc.direction.index();
                if !seen[dof] {
                    seen[dof] = true;
                    prescribed.push((dof, bc.factor));
                }
            }
        }
        let index = FreeIndex::new(mesh.n_nodes(), &partition);
        Ok(Problem {
            mesh,
            geoms,
            bcs: bcs.to_vec(),
            partition,
            index,
            prescribed,
            llt_symbolic: OnceLock::new(),
            lu_symbolic: OnceLock::new(),
        })
    }

    fn apply_prescribed(&self, u: &mut [[f64; 2]], delta: f64) {
        for &(dof, factor) in &self.prescribed {
            u[dof / 2][dof % 2] = factor * delta;
        }
    }

    /// Solves `K x = rhs` in place, by Cholesky when `K` is positive definite
    /// and by LU otherwise. Symbolic factorizations are computed once.
    fn solve_linear(&self, k: &SparseColMat<usize, f64>, rhs: &mut Mat<f64>) -> Result<()> {
        let llt_symbolic = self
            .llt_symbolic
            .get_or_init(|| SymbolicLlt::try_new(k.symbolic(), Side::Lower).ok());
        if let Some(sym) = llt_symbolic {
            if let Ok(llt) = Llt::try_new_with_symbolic(sym.clone(), k.as_ref(), Side::Lower) {
                llt.solve_in_place(rhs.as_mut());
                return Ok(());
            }
        }
        let lu_symbolic = self
            .lu_symbolic
            .get_or_init(|| SymbolicLu::try_new(k.symbolic()).ok())
            .clone()
            .ok_or_else(|| Error::LinearSolve("symbolic LU failed".into()))?;
        let lu = Lu::try_new_with_symbolic(lu_symbolic, k.as_ref())
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        lu.solve_in_place(rhs.as_mut());
        Ok(())
    }

    /// `Σ_e K_e du` restricted to free rows, for `du` nonzero only on
    /// constrained DOFs.
    fn constrained_coupling(&self, resp: &[PlaneResponse], du: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.index.n_free];
        for (e, (g, r)) in self.geoms.iter().zip(resp).enumerate() {
            let el = self.mesh.elements[e];
            for b in 0..3 {
                for k in 0..2 {
                    let col = 2 * el[b] + k;
                    if du[col] == 0.0 {
                        continue;
                    }
                    for a in 0..3 {
                        for i in 0..2 {
                            let row = self.index.map[2 * el[a] + i];
                            if row == usize::MAX {
                                continue;
                            }
                            let mut v = 0.0;
                            for j in 0..2 {
                                for l in 0..2 {
                                    v += r.tangent[2 * i + j][2 * k + l] * g.grad_n[a][j] * g.grad_n[b][l];
                                }
                            }
                            out[row] += g.area * v * du[col];
                        }
                    }
                }
            }
        }
        out
    }

    /// Newton iterations for one load level starting from the equilibrium
    /// `u` of the previous level. The first update is the linearized response
    /// to the prescribed increment. Returns the converged forces and the
    /// residual history.
    fn newton(
        &self,
        model: &dyn ConstitutiveModel,
        u: &mut Vec<[f64; 2]>,
        delta: f64,
        opts: &SolverOptions,
    ) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
        let mut du_c = vec![0.0; 2 * self.mesh.n_nodes()];
        let mut predict = false;
        for &(dof, factor) in &self.prescribed {
            du_c[dof] = factor * delta - u[dof / 2][dof % 2];
            predict |= du_c[dof] != 0.0;
        }
        let mut history = Vec::new();
        let mut fs = element_gradients(self.mesh, &self.geoms, u)?;
        let mut iter = 0;
        loop {
            let resp = model.plane_response_batch(&fs, true)?;
            let stresses: Vec<_> = resp.iter().map(|r| r.stress).collect();
            let forces = accumulate_forces(self.mesh, &self.geoms, &stresses);
            let (mut free, _) = split_residuals(&forces, &self.partition);
            if predict {
                let coupling = self.constrained_coupling(&resp, &du_c);
                for (f, c) in free.iter_mut().zip(&coupling) {
                    *f += c;
                }
            } else {
                let norm = max_abs(&free);
                history.push(norm);
                if !norm.is_finite() {
                    break;
                }
                if norm <= opts.newton_tol {
                    return Ok((forces, history));
                }
                if iter == opts.max_iters || self.index.n_free == 0 {
                    break;
                }
                iter += 1;
            }
            let mut rhs = Mat::<f64>::from_fn(free.len(), 1, |i, _| -free[i]);
            if !free.is_empty() {
                let k = assemble_free_tangent(self.mesh, &self.geoms, &resp, &self.index)?;
                self.solve_linear(&k, &mut rhs)?;
            }
            if !(0..free.len()).all(|i| rhs[(i, 0)].is_finite()) {
                break;
            }

            let mut trial = u.clone();
            for (k, d) in self.partition.free.iter().enumerate() {
                trial[d.node][d.dir] += rhs[(k, 0)];
            }
            if predict {
                predict = false;
                self.apply_prescribed(&mut trial, delta);
                fs = element_gradients(self.mesh, &self.geoms, &trial)?;
                *u = trial;
                continue;
            }
            // backtrack only to keep every element orientation-preserving
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                if let Ok(next) = element_gradients(self.mesh, &self.geoms, &trial) {
                    accepted = Some((trial, next));
                    break;
                }
                step *= 0.5;
                trial = u.clone();
                for (k, d) in self.partition.free.iter().enumerate() {
                    trial[d.node][d.dir] += step * rhs[(k, 0)];
                }
            }
            match accepted {
                Some((trial, next)) => {
                    *u = trial;
                    fs = next;
                }
                None => break,
            }
        }
        Err(Error::NoConvergence {
            step: 0,
            residual: history.last().copied().unwrap_or(f64::NAN),
        })
    }

    /// Advances from `(u, from)` to `to`, halving the increment on failure.
    fn advance(
        &self,
        model: &dyn ConstitutiveModel,
        u: &[[f64; 2]],
        from: f64,
        to: f64,
        opts: &SolverOptions,
        depth: usize,
    ) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>, Vec<f64>)> {
        let mut trial = u.to_vec();
        match self.newton(model, &mut trial, to, opts) {
            Ok((forces, hist)) => Ok((trial, forces, hist)),
            Err(e @ (Error::NoConvergence { .. } | Error::ElementInversion { .. }))
                if depth < opts.max_bisections =>
            {
                log::debug!("bisecting load increment {from} -> {to} after {e}");
                let mid = 0.5 * (from + to);
                let (u_mid, _, _) = self.advance(model, u, from, mid, opts, depth + 1)?;
                self.advance(model, &u_mid, mid, to, opts, depth + 1)
            }
            Err(e) => Err(e),
        }
    }

    pub fn solve(
        &self,
        model: &dyn ConstitutiveModel,
        deltas: &[f64],
        opts: &SolverOptions,
    ) -> Result<SolveResult> {
        let mut result = SolveResult {
            deltas: deltas.to_vec(),
            partition: self.partition.clone(),
            displacements: Vec::with_capacity(deltas.len()),
            reactions: Vec::with_capacity(deltas.len()),
            iterations: Vec::with_capacity(deltas.len()),
            residual_norms: Vec::with_capacity(deltas.len()),
            residual_history: Vec::with_capacity(deltas.len()),
        };
        let mut u = vec![[0.0; 2]; self.mesh.n_nodes()];
        let mut prev = 0.0;
        for (step, &delta) in deltas.iter().enumerate() {
            let (next, forces, hist) = self
                .advance(model, &u, prev, delta, opts, 0)
                .map_err(|e| match e {
                    Error::NoConvergence { residual, .. } => Error::NoConvergence { step, residual },
                    Error::ElementInversion { element, .. } => Error::StepInversion { step, element },
                    other => other,
                })?;
            let (_, sums) = split_residuals(&forces, &self.partition);
            u = next;
            prev = delta;
            result.displacements.push(u.clone());
            result.reactions.push(sums);
            result.iterations.push(hist.len() - 1);
            result.residual_norms.push(*hist.last().expect("at least one residual"));
            result.residual_history.push(hist);
        }
        Ok(result)
    }
}

/// Solves the quasi-static problem for each load level in `deltas`.
pub fn solve_quasistatic(
    mesh: &Mesh,
    bcs: &[BoundaryCondition],
    model: &dyn ConstitutiveModel,
    deltas: &[f64],
    newton_tol: f64,
    max_iters: usize,
) -> Result<SolveResult> {
    let opts = SolverOptions {
        newton_tol,
        max_iters,
        ..SolverOptions::default()
    };
    Problem::new(mesh, bcs)?.solve(model, deltas, &opts)
}
