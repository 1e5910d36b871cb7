//! Unsupervised training of network material models on full-field
//! displacement and reaction-force data.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveModel;
use crate::error::{Error, Result};
use crate::fem::{accumulate_forces, element_gradients, split_residuals};
use crate::icnn::{
    corrections, dropout_masks, feature_batch, fiber_angle_derivatives, fiber_angles,
    init_parameters, save_model, FeatureBatch, IcnnArchitecture, IcnnModel, IcnnParameters,
    Forward, Network, CHUNK,
};
use crate::mesh::{ElementGeometry, Mesh};
use crate::pipeline::{stream_key, SnapshotDataset};

pub const ENSEMBLE_FORMAT_VERSION: &str = "1";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub lr_up_steps: usize,
    pub lr_down_steps: usize,
    pub dropout: f64,
    pub ensemble_size: usize,
    pub acceptance_margin: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Multiplies the reaction-force terms of the loss.
    pub reaction_weight: f64,
    /// Clears the Adam moment estimates at the start of every learning-rate
    /// cycle.
    pub restart_moments: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            base_lr: 0.001,
            max_lr: 0.1,
            lr_up_steps: 50,
            lr_down_steps: 50,
            dropout: 0.2,
            ensemble_size: 30,
            acceptance_margin: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            reaction_weight: 1.0,
            restart_moments: true,
        }
    }
}

impl TrainConfig {
    /// Default settings with the smaller ensemble used for desk-scale runs.
    pub fn desk() -> Self {
        TrainConfig {
            ensemble_size: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_lr, self.max_lr, self.beta1, self.beta2, self.eps, self.reaction_weight];
        if self.epochs == 0
            || self.ensemble_size == 0
            || self.lr_up_steps == 0
            || self.lr_down_steps == 0
            || positive.iter().any(|v| !(*v > 0.0))
        {
            return Err(Error::Config("training settings must be positive".into()));
        }
        if !(self.acceptance_margin >= 0.0) {
            return Err(Error::Config("acceptance margin must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.reaction_weight != 1.0 {
            log::info!("reaction terms weighted by {}", self.reaction_weight);
        }
        Ok(())
    }
}

/// Triangular learning-rate wave, one step per epoch.
pub fn cyclic_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let period = cfg.lr_up_steps + cfg.lr_down_steps;
    let pos = epoch % period;
    let span = cfg.max_lr - cfg.base_lr;
    if pos <= cfg.lr_up_steps {
        cfg.base_lr + span * pos as f64 / cfg.lr_up_steps as f64
    } else {
        cfg.max_lr - span * (pos - cfg.lr_up_steps) as f64 / cfg.lr_down_steps as f64
    }
}

/// `ℓ = Σ_t [Σ_free f² + w Σ_β (R_β − Σ_{fix β} f)²]` for an arbitrary model.
pub fn physics_loss(ds: &SnapshotDataset, model: &dyn ConstitutiveModel) -> Result<f64> {
    physics_loss_weighted(ds, model, 1.0)
}

pub fn physics_loss_weighted(ds: &SnapshotDataset, model: &dyn ConstitutiveModel, reaction_weight: f64) -> Result<f64> {
    let geoms = ds.mesh.geometries()?;
    let mut total = 0.0;
    for t in 0..ds.n_snapshots() {
        let fs = snapshot_gradients(&ds.mesh, &geoms, &ds.displacements[t], t)?;
        let resp = model.plane_response_batch(&fs, false)?;
        let stresses: Vec<_> = resp.iter().map(|r| r.stress).collect();
        let forces = accumulate_forces(&ds.mesh, &geoms, &stresses);
        total += snapshot_loss(&forces, ds, t, reaction_weight);
    }
    Ok(total)
}

fn snapshot_gradients(mesh: &Mesh, geoms: &[ElementGeometry], disp: &[[f64; 2]], t: usize) -> Result<Vec<Matrix3<f64>>> {
    element_gradients(mesh, geoms, disp).map_err(|e| match e {
        Error::ElementInversion { element, .. } => Error::SnapshotInversion { snapshot: t, element },
        other => other,
    })
}

fn snapshot_loss(forces: &[[f64; 2]], ds: &SnapshotDataset, t: usize, w: f64) -> f64 {
    let (free, sums) = split_residuals(forces, &ds.partition);
    let mut l = free.iter().fold(0.0, |s, f| s + f * f);
    for (r, s) in ds.reactions[t].iter().zip(&sums) {
        l += w * (r - s) * (r - s);
    }
    l
}

/// Everything about a dataset that stays fixed while parameters change.
pub struct LossContext<'a> {
    ds: &'a SnapshotDataset,
    arch: IcnnArchitecture,
    geoms: Vec<ElementGeometry>,
    /// Deformation gradients, column `t · n_elements + e`.
    fs: Vec<Matrix3<f64>>,
    /// Features when they do not depend on trainable fiber angles.
    fixed_features: Option<FeatureBatch>,
    reaction_weight: f64,
}

impl<'a> LossContext<'a> {
    pub fn new(ds: &'a SnapshotDataset, arch: &IcnnArchitecture, reaction_weight: f64) -> Result<Self> {
        let geoms = ds.mesh.geometries()?;
        let mut fs = Vec::with_capacity(ds.n_snapshots() * ds.mesh.n_elements());
        for t in 0..ds.n_snapshots() {
            fs.extend(snapshot_gradients(&ds.mesh, &geoms, &ds.displacements[t], t)?);
        }
        let fixed_features = if arch.n_fibers == 0 {
            Some(feature_batch(&fs, &[])?)
        } else {
            None
        };
        Ok(LossContext {
            ds,
            arch: arch.clone(),
            geoms,
            fs,
            fixed_features,
            reaction_weight,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.fs.len()
    }

    fn features(&self, alphas: &[f64]) -> Result<std::borrow::Cow<'_, FeatureBatch>> {
        Ok(match &self.fixed_features {
            Some(b) => std::borrow::Cow::Borrowed(b),
            None => std::borrow::Cow::Owned(feature_batch(&self.fs, alphas)?),
        })
    }

    fn masks(&self, dropout_seed: Option<u64>, offset: usize, n: usize) -> Option<Vec<DMatrix<f64>>> {
        dropout_seed
            .filter(|_| self.arch.dropout_rate > 0.0)
            .map(|s| dropout_masks(&self.arch, s, offset, n))
    }

    /// Stresses and network input gradients of every column.
    fn stresses(
        &self,
        net: &Network,
        feats: &FeatureBatch,
        h: &Matrix3<f64>,
        dropout_seed: Option<u64>,
    ) -> (Vec<[[f64; 2]; 2]>, Vec<(Forward, DMatrix<f64>)>) {
        let n = self.n_columns();
        let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
        let parts: Vec<(Vec<[[f64; 2]; 2]>, Forward, DMatrix<f64>)> = starts
            .par_iter()
            .map(|&off| {
                let len = CHUNK.min(n - off);
                let masks = self.masks(dropout_seed, off, len);
                let fw = net.forward(feats.z0.columns(off, len).into_owned(), masks.as_deref());
                let g = net.input_gradient(&fw);
                let p = (0..len)
                    .map(|c| {
                        let col = off + c;
                        let f = &self.fs[col];
                        let d = &feats.d[col];
                        let mut s = [[0.0; 2]; 2];
                        for i in 0..2 {
                            for j in 0..2 {
                                let mut v: f64 = (0..3).map(|m| f[(i, m)] * h[(m, j)]).sum();
                                for (q, dq) in d.iter().enumerate() {
                                    v += g[(q, c)] * dq[2 * i + j];
                                }
                                s[i][j] = v;
                            }
                        }
                        s
                    })
                    .collect();
                (p, fw, g)
            })
            .collect();
        let mut stresses = Vec::with_capacity(n);
        let mut passes = Vec::with_capacity(parts.len());
        for (p, fw, g) in parts {
            stresses.extend(p);
            passes.push((fw, g));
        }
        (stresses, passes)
    }

    /// Loss and the adjoint `∂ℓ/∂P` of every column.
    fn loss_and_adjoint(&self, stresses: &[[[f64; 2]; 2]], with_adjoint: bool) -> (f64, Vec<[[f64; 2]; 2]>) {
        let ds = self.ds;
        let mesh = &ds.mesh;
        let n_e = mesh.n_elements();
        let mut total = 0.0;
        let mut adjoint = Vec::with_capacity(if with_adjoint { stresses.len() } else { 0 });
        for t in 0..ds.n_snapshots() {
            let forces = accumulate_forces(mesh, &self.geoms, &stresses[t * n_e..(t + 1) * n_e]);
            total += snapshot_loss(&forces, ds, t, self.reaction_weight);
            if !with_adjoint {
                continue;
            }
            let mut dl_df = vec![[0.0; 2]; mesh.n_nodes()];
            for d in &ds.partition.free {
                dl_df[d.node][d.dir] = 2.0 * forces[d.node][d.dir];
            }
            let (_, sums) = split_residuals(&forces, &ds.partition);
            for ((g, r), s) in ds.partition.fixed_groups.iter().zip(&ds.reactions[t]).zip(&sums) {
                let v = -2.0 * self.reaction_weight * (r - s);
                for d in &g.dofs {
                    dl_df[d.node][d.dir] = v;
                }
            }
            for (e, geom) in self.geoms.iter().enumerate() {
                let mut gm = [[0.0; 2]; 2];
                for (a, grad) in mesh.elements[e].iter().zip(&geom.grad_n) {
                    for i in 0..2 {
                        for j in 0..2 {
                            gm[i][j] += geom.area * dl_df[*a][i] * grad[j];
                        }
                    }
                }
                adjoint.push(gm);
            }
        }
        (total, adjoint)
    }

    /// Loss for a parameter state; `dropout_seed` enables dropout.
    pub fn loss(&self, params: &IcnnParameters, dropout_seed: Option<u64>) -> Result<f64> {
        let net = Network::new(&self.arch, params);
        let alphas = fiber_angles(&params.zeta);
        let feats = self.features(&alphas)?;
        let h = corrections(params, &self.arch).h;
        let (stresses, _) = self.stresses(&net, &feats, &h, dropout_seed);
        Ok(self.loss_and_adjoint(&stresses, false).0)
    }

    /// Loss and its exact gradient with respect to every trainable value,
    /// laid out as [`IcnnParameters::to_vec`].
    pub fn loss_and_gradient(&self, params: &IcnnParameters, dropout_seed: Option<u64>) -> Result<(f64, Vec<f64>)> {
        let net = Network::new(&self.arch, params);
        let alphas = fiber_angles(&params.zeta);
        let feats = self.features(&alphas)?;
        let h = corrections(params, &self.arch).h;
        let (stresses, passes) = self.stresses(&net, &feats, &h, dropout_seed);
        let (loss, adjoint) = self.loss_and_adjoint(&stresses, true);

        let nf = alphas.len();
        let parts: Vec<(Vec<f64>, Vec<f64>)> = passes
            .par_iter()
            .enumerate()
            .map(|(k, (fw, g))| {
                let off = k * CHUNK;
                let len = fw.z0.ncols();
                let n_in = feats.z0.nrows();
                let w = DMatrix::from_fn(n_in, len, |p, c| {
                    let (g, d) = (&adjoint[off + c], &feats.d[off + c][p]);
                    g[0][0] * d[0] + g[0][1] * d[1] + g[1][0] * d[2] + g[1][1] * d[3]
                });
                let (layers, bar_z0) = net.gradient_functional_grad(fw, &w);
                let flat = IcnnParameters { layers, zeta: vec![] }.to_vec();
                let mut da = vec![0.0; nf];
                for c in 0..len {
                    let col = off + c;
                    let gm = &adjoint[col];
                    for p in 0..n_in {
                        for (q, da_q) in da.iter_mut().enumerate() {
                            let dd = &feats.dd_da[col][p][q];
                            let contraction = gm[0][0] * dd[0] + gm[0][1] * dd[1] + gm[1][0] * dd[2] + gm[1][1] * dd[3];
                            *da_q += g[(p, c)] * contraction + bar_z0[(p, c)] * feats.dz_da[col][p][q];
                        }
                    }
                }
                (flat, da)
            })
            .collect();

        let n_net = params.len() - nf;
        let mut grad = vec![0.0; params.len()];
        for (flat, da) in &parts {
            for (acc, v) in grad[..n_net].iter_mut().zip(flat) {
                *acc += v;
            }
            for (acc, v) in grad[n_net..].iter_mut().zip(da) {
                *acc += v;
            }
        }
        for (acc, d) in grad[n_net..].iter_mut().zip(fiber_angle_derivatives(&params.zeta)) {
            *acc *= d;
        }
        Ok((loss, grad))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
    /// Kept out of `ensemble.json` so reruns reproduce it byte for byte;
    /// stored in `timings.json` instead.
    #[serde(skip)]
    pub wall_seconds: Vec<f64>,
    /// Running minimum of `loss`.
    pub min_loss: Vec<f64>,
    /// Loss of the final parameters with dropout off.
    pub final_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step = 0;
    }

    fn update(&mut self, x: &mut [f64], g: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..x.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

/// Trains one network from the initialization drawn with `member_seed`.
pub fn train_one(
    ds: &SnapshotDataset,
    arch: &IcnnArchitecture,
    cfg: &TrainConfig,
    member_seed: u64,
) -> Result<(IcnnParameters, TrainHistory)> {
    cfg.validate()?;
    let arch = IcnnArchitecture {
        dropout_rate: cfg.dropout,
        ..arch.clone()
    };
    arch.validate()?;
    let ctx = LossContext::new(ds, &arch, cfg.reaction_weight)?;
    let mut params = init_parameters(&arch, member_seed);
    let mut x = params.to_vec();
    let mut adam = Adam::new(x.len());
    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    let period = cfg.lr_up_steps + cfg.lr_down_steps;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        if cfg.restart_moments && epoch > 0 && epoch % period == 0 {
            adam.reset();
        }
        let (loss, grad) = ctx.loss_and_gradient(&params, Some(stream_key(&[member_seed, epoch as u64])))?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss(epoch));
        }
        let lr = cyclic_lr(epoch, cfg);
        adam.update(&mut x, &grad, lr, cfg);
        params.set_from_slice(&x);
        best = best.min(loss);
        history.loss.push(loss);
        history.learning_rate.push(lr);
        history.wall_seconds.push(start.elapsed().as_secs_f64());
        history.min_loss.push(best);
        if epoch % 50 == 0 {
            log::debug!("member {member_seed} epoch {epoch}: loss {loss:e} lr {lr:.4}");
        }
    }
    let final_loss = ctx.loss(&params, None)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss(cfg.epochs));
    }
    history.final_loss = final_loss;
    Ok((params, history))
}

/// Members whose loss is within `(1 + margin)` of the lowest loss.
pub fn accept(losses: &[f64], margin: f64) -> Vec<bool> {
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    losses.iter().map(|&l| l <= (1.0 + margin) * min).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub seed: u64,
    /// `None` when training aborted.
    pub final_loss: Option<f64>,
    pub accepted: bool,
    pub model_file: Option<String>,
    pub history: TrainHistory,
    pub failure: Option<String>,
    #[serde(skip)]
    pub params: Option<IcnnParameters>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub version: String,
    pub architecture: IcnnArchitecture,
    pub acceptance_margin: f64,
    pub members: Vec<MemberReport>,
    pub best_index: usize,
}

impl EnsembleReport {
    /// Assembles a report from member outcomes and applies the acceptance
    /// rule over the members that finished.
    pub fn from_members(architecture: IcnnArchitecture, mut members: Vec<MemberReport>, margin: f64) -> Result<Self> {
        let finished: Vec<(usize, f64)> = members
            .iter()
            .enumerate()
            .filter_map(|(k, m)| m.final_loss.map(|l| (k, l)))
            .collect();
        if finished.is_empty() {
            return Err(Error::AllMembersFailed);
        }
        let losses: Vec<f64> = finished.iter().map(|f| f.1).collect();
        for ((k, _), ok) in finished.iter().zip(accept(&losses, margin)) {
            members[*k].accepted = ok;
        }
        let best_index = finished
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|f| f.0)
            .expect("nonempty");
        Ok(EnsembleReport {
            version: ENSEMBLE_FORMAT_VERSION.into(),
            architecture,
            acceptance_margin: margin,
            members,
            best_index,
        })
    }

    pub fn accepted_indices(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&k| self.members[k].accepted).collect()
    }

    /// Model of the member with the lowest final loss.
    pub fn best_model(&self) -> Result<IcnnModel> {
        let p = self.members[self.best_index]
            .params
            .clone()
            .ok_or_else(|| Error::Config(format!("member {} has no parameters loaded", self.best_index)))?;
        IcnnModel::new(self.architecture.clone(), p)
    }

    /// Models of the accepted members; parameters must be present in memory.
    pub fn accepted_models(&self) -> Result<Vec<IcnnModel>> {
        self.accepted_indices()
            .into_iter()
            .map(|k| {
                let p = self.members[k]
                    .params
                    .clone()
                    .ok_or_else(|| Error::Config(format!("member {k} has no parameters loaded")))?;
                IcnnModel::new(self.architecture.clone(), p)
            })
            .collect()
    }

    /// Writes `ensemble.json` and one model file per finished member.
    pub fn save(&mut self, dir: &Path, provenance: &std::collections::BTreeMap<String, serde_json::Value>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, m) in self.members.iter_mut().enumerate() {
            if let Some(p) = &m.params {
                let name = format!("member_{k:03}.json");
                let mut prov = provenance.clone();
                prov.insert("member_seed".into(), serde_json::json!(m.seed));
                prov.insert("final_loss".into(), serde_json::json!(m.final_loss));
                prov.insert("accepted".into(), serde_json::json!(m.accepted));
                save_model(&dir.join(&name), &self.architecture, p, &prov)?;
                m.model_file = Some(name);
            }
        }
        let path = dir.join("ensemble.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let timings: Vec<&Vec<f64>> = self.members.iter().map(|m| &m.history.wall_seconds).collect();
        let path = dir.join(TIMINGS_FILE);
        let text = serde_json::to_string(&timings).expect("timings serialize");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Reads `ensemble.json` and the model files it references.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("ensemble.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut report: EnsembleReport =
            serde_json::from_str(&text).map_err(|e| Error::schema("ensemble.json", e.to_string()))?;
        if report.version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::schema("ensemble.json/version", format!("unsupported version {:?}", report.version)));
        }
        let timings_path = dir.join(TIMINGS_FILE);
        if let Ok(text) = std::fs::read_to_string(&timings_path) {
            let timings: Vec<Vec<f64>> =
                serde_json::from_str(&text).map_err(|e| Error::schema(TIMINGS_FILE, e.to_string()))?;
            for (m, t) in report.members.iter_mut().zip(timings) {
                m.history.wall_seconds = t;
            }
        }
        for m in &mut report.members {
            if let Some(name) = &m.model_file {
                let (_, params, _) = crate::icnn::load_model(&dir.join(name))?;
                m.params = Some(params);
            }
        }
        Ok(report)
    }
}

/// Trains `cfg.ensemble_size` members with seeds `seed + k` in parallel.
/// Members that abort are kept in the report as rejected.
pub fn train_ensemble(ds: &SnapshotDataset, arch: &IcnnArchitecture, cfg: &TrainConfig) -> Result<EnsembleReport> {
    cfg.validate()?;
    let members: Vec<MemberReport> = (0..cfg.ensemble_size as u64)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.seed + k;
            match train_one(ds, arch, cfg, seed) {
                Ok((params, history)) => {
                    log::info!("member {k} (seed {seed}): final loss {:e}", history.final_loss);
                    MemberReport {
                        seed,
                        final_loss: Some(history.final_loss),
                        accepted: false,
                        model_file: None,
                        history,
                        failure: None,
                        params: Some(params),
                    }
                }
                Err(e) => {
                    log::warn!("member {k} (seed {seed}) rejected: {e}");
                    MemberReport {
                        seed,
                        final_loss: None,
                        accepted: false,
                        model_file: None,
                        history: TrainHistory::default(),
                        failure: Some(e.to_string()),
                        params: None,
                    }
                }
            }
        })
        .collect();
    let arch = IcnnArchitecture {
        dropout_rate: cfg.dropout,
        ..arch.clone()
    };
    EnsembleReport::from_members(arch, members, cfg.acceptance_margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::Mode;
    use crate::materials::{BenchmarkModel, ModelId};
    use crate::mesh::{partition_dofs, DirichletSpec, Direction};
    use crate::pipeline::{Provenance, Stage};
    use std::collections::BTreeMap;

    /// Unit square split into two triangles with a prescribed field.
    fn micro_dataset(reactions: Vec<f64>) -> SnapshotDataset {
        let mesh = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            BTreeMap::from([
                ("left".to_string(), vec![0, 3]),
                ("bottom".to_string(), vec![0, 1]),
            ]),
        )
        .unwrap();
        let partition = partition_dofs(
            &mesh,
            &[
                DirichletSpec::new("left", Direction::X, true),
                DirichletSpec::new("bottom", Direction::Y, true),
            ],
        )
        .unwrap();
        SnapshotDataset {
            mesh,
            partition,
            displacements: vec![vec![[0.0, 0.0], [0.12, 0.0], [0.1, -0.04], [0.0, -0.03]]],
            reactions: vec![reactions],
            provenance: Provenance {
                model_id: "NH".into(),
                sigma_u: 0.0,
                seed: 0,
                stage: Stage::Raw,
                parameters: BTreeMap::new(),
            },
        }
    }

    fn micro_arch(n_fibers: usize) -> IcnnArchitecture {
        IcnnArchitecture {
            hidden_sizes: vec![4],
            n_fibers,
            ..IcnnArchitecture::default()
        }
    }

    #[test]
    fn learning_rate_wave() {
        let cfg = TrainConfig::default();
        assert!((cyclic_lr(0, &cfg) - 0.001).abs() < 1e-15);
        assert!((cyclic_lr(50, &cfg) - 0.1).abs() < 1e-15);
        assert!((cyclic_lr(100, &cfg) - 0.001).abs() < 1e-15);
        assert!((cyclic_lr(25, &cfg) - 0.0505).abs() < 1e-15);
        assert!((cyclic_lr(75, &cfg) - 0.0505).abs() < 1e-15);
        assert!((cyclic_lr(150, &cfg) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn acceptance_rule() {
        assert_eq!(accept(&[1.0, 1.1, 1.3, 5.0], 0.2), vec![true, true, false, false]);
        assert_eq!(accept(&[2.0], 0.2), vec![true]);
        let scaled: Vec<f64> = [1.0, 1.1, 1.3, 5.0].iter().map(|l| l * 7.3e-5).collect();
        assert_eq!(accept(&scaled, 0.2), vec![true, true, false, false]);
    }

    #[test]
    fn all_failed_members() {
        let failed = MemberReport {
            seed: 0,
            final_loss: None,
            accepted: false,
            model_file: None,
            history: TrainHistory::default(),
            failure: Some("x".into()),
            params: None,
        };
        assert!(matches!(
            EnsembleReport::from_members(micro_arch(0), vec![failed.clone(), failed], 0.2),
            Err(Error::AllMembersFailed)
        ));
    }

    #[test]
    fn zero_displacement_contributes_nothing() {
        let mut ds = micro_dataset(vec![0.0, 0.0]);
        ds.displacements[0] = vec![[0.0; 2]; 4];
        for id in [ModelId::NH, ModelId::AB, ModelId::HZ] {
            assert_eq!(physics_loss(&ds, &BenchmarkModel::new(id)).unwrap(), 0.0);
        }
    }

    #[test]
    fn context_loss_matches_generic_loss() {
        let ds = micro_dataset(vec![0.03, -0.02]);
        for nf in [0, 1, 2] {
            let arch = IcnnArchitecture {
                dropout_rate: 0.0,
                ..micro_arch(nf)
            };
            let params = init_parameters(&arch, 3);
            let ctx = LossContext::new(&ds, &arch, 1.0).unwrap();
            let model = IcnnModel::new(arch.clone(), params.clone()).unwrap();
            let a = ctx.loss(&params, None).unwrap();
            let b = physics_loss(&ds, &model).unwrap();
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-30), "{a} vs {b}");
        }
    }

    fn check_gradient(arch: &IcnnArchitecture, dropout_seed: Option<u64>) {
        let ds = micro_dataset(vec![0.03, -0.02]);
        let ctx = LossContext::new(&ds, arch, 1.0).unwrap();
        let mut params = init_parameters(arch, 5);
        for l in &mut params.layers {
            for (i, c) in l.c.iter_mut().enumerate() {
                *c = 0.2 * (i as f64 - 1.5);
            }
        }
        let (_, grad) = ctx.loss_and_gradient(&params, dropout_seed).unwrap();
        let x = params.to_vec();
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let h = 1e-6;
        let mut p = params.clone();
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            p.set_from_slice(&xp);
            let lp = ctx.loss(&p, dropout_seed).unwrap();
            xp[k] -= 2.0 * h;
            p.set_from_slice(&xp);
            let lm = ctx.loss(&p, dropout_seed).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-4 * fd.abs() + 1e-9 * scale,
                "parameter {k}: exact {} vs fd {fd}",
                grad[k]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for nf in [0, 1, 2] {
            let arch = IcnnArchitecture {
                dropout_rate: 0.0,
                ..micro_arch(nf)
            };
            check_gradient(&arch, None);
        }
    }

    #[test]
    fn gradient_with_fixed_dropout_masks() {
        check_gradient(&micro_arch(1), Some(17));
    }

    #[test]
    fn gradient_in_relu_mode() {
        let arch = IcnnArchitecture {
            dropout_rate: 0.0,
            mode: Mode::UnconstrainedRelu,
            ..micro_arch(0)
        };
        check_gradient(&arch, None);
    }

    #[test]
    fn snapshot_order_does_not_matter() {
        let mut ds = micro_dataset(vec![0.03, -0.02]);
        ds.displacements.push(vec![[0.0, 0.0], [0.05, 0.0], [0.06, 0.02], [0.0, 0.01]]);
        ds.reactions.push(vec![-0.01, 0.04]);
        let arch = micro_arch(1);
        let params = init_parameters(&arch, 2);
        let a = LossContext::new(&ds, &arch, 1.0).unwrap().loss(&params, None).unwrap();
        ds.displacements.reverse();
        ds.reactions.reverse();
        let b = LossContext::new(&ds, &arch, 1.0).unwrap().loss(&params, None).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let ds = micro_dataset(vec![0.03, -0.02]);
        let cfg = TrainConfig {
            epochs: 60,
            ensemble_size: 2,
            ..TrainConfig::default()
        };
        let arch = micro_arch(0);
        let (p1, h1) = train_one(&ds, &arch, &cfg, 4).unwrap();
        let (p2, h2) = train_one(&ds, &arch, &cfg, 4).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1.loss, h2.loss);
        assert_eq!(h1.learning_rate, h2.learning_rate);
        assert_eq!(h1.final_loss.to_bits(), h2.final_loss.to_bits());
        assert_eq!(h1.loss.len(), 60);
        assert!(h1.min_loss.windows(2).all(|w| w[1] <= w[0]));
        assert!(h1.final_loss < h1.loss[0]);
    }

    #[test]
    fn inverted_snapshot_rejects_member() {
        let mut ds = micro_dataset(vec![0.0, 0.0]);
        ds.displacements[0][2] = [-1.5, -1.5];
        let cfg = TrainConfig {
            epochs: 3,
            ensemble_size: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_one(&ds, &micro_arch(0), &cfg, 0),
            Err(Error::SnapshotInversion { snapshot: 0, .. })
        ));
        assert!(matches!(
            train_ensemble(&ds, &micro_arch(0), &cfg),
            Err(Error::AllMembersFailed)
        ));
    }

    #[test]
    fn ensemble_report_round_trip() {
        let ds = micro_dataset(vec![0.03, -0.02]);
        let cfg = TrainConfig {
            epochs: 5,
            ensemble_size: 3,
            seed: 10,
            ..TrainConfig::default()
        };
        let mut report = train_ensemble(&ds, &micro_arch(1), &cfg).unwrap();
        assert_eq!(report.members.iter().map(|m| m.seed).collect::<Vec<_>>(), vec![10, 11, 12]);
        let best = report.members[report.best_index].final_loss.unwrap();
        assert!(report.members.iter().all(|m| m.final_loss.unwrap() >= best));
        assert!(report.members[report.best_index].accepted);
        let dir = tempfile::tempdir().unwrap();
        report.save(dir.path(), &BTreeMap::new()).unwrap();
        let back = EnsembleReport::load(dir.path()).unwrap();
        assert_eq!(back, report);
        assert!(!back.accepted_models().unwrap().is_empty());
    }
}
