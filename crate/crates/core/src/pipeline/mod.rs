//! Synthetic full-field experiments: specimen meshing, displacement-controlled
//! loading, measurement noise, kernel-ridge denoising and projection onto a
//! coarser measurement mesh.

mod io;
mod krr;
pub mod meshgen;
mod projection;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveModel;
use crate::error::{Error, Result};
use crate::fem::{BoundaryCondition, Problem, SolverOptions};
use crate::materials::ModelId;
use crate::mesh::{Direction, DofPartition, Mesh};

pub use io::{read_dataset, write_dataset, FORMAT_VERSION};
pub use krr::{denoise_krr, DEFAULT_BANDWIDTH, DEFAULT_RIDGE_PER_NODE};
pub use meshgen::{generate_mesh, Ellipse, Holes};
pub use projection::project_to_coarse;

pub const DEFAULT_HOLE_RADIUS: f64 = 0.2;
pub const DEFAULT_BIAXIAL_RATIO: f64 = 0.5;
pub const DESK_TARGET_NODES: usize = 6000;
pub const COARSE_TARGET_NODES: usize = 1441;
pub const VALIDATION_STEPS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecimenKind {
    Training,
    Validation,
}

/// Geometry, resolution and loading of a specimen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecimenConfig {
    pub kind: SpecimenKind,
    pub target_node_count: usize,
    pub hole_radius: f64,
    pub ellipses: Vec<Ellipse>,
    pub deltas: Vec<f64>,
    /// Right-edge displacement per unit top-edge displacement (training only).
    pub biaxial_ratio: f64,
}

pub fn default_ellipses() -> Vec<Ellipse> {
    vec![
        Ellipse {
            center: [0.3, 0.65],
            semi_axes: [0.18, 0.09],
            rotation_deg: 20.0,
        },
        Ellipse {
            center: [0.7, 0.3],
            semi_axes: [0.10, 0.20],
            rotation_deg: 0.0,
        },
    ]
}

/// Top-edge displacements of the training experiment for each benchmark.
pub fn training_schedule(model: ModelId) -> Vec<f64> {
    let (steps, increment) = match model {
        ModelId::NH | ModelId::GT => (3, 0.1),
        ModelId::IH | ModelId::HW => (8, 0.1),
        ModelId::AI45 | ModelId::AI60 | ModelId::HZ => (8, 0.05),
        ModelId::AB => (10, 0.05),
        ModelId::OG => (6, 0.05),
    };
    (1..=steps).map(|t| increment * t as f64).collect()
}

impl SpecimenConfig {
    pub fn training(model: ModelId) -> Self {
        SpecimenConfig {
            kind: SpecimenKind::Training,
            target_node_count: DESK_TARGET_NODES,
            hole_radius: DEFAULT_HOLE_RADIUS,
            ellipses: default_ellipses(),
            deltas: training_schedule(model),
            biaxial_ratio: DEFAULT_BIAXIAL_RATIO,
        }
    }

    pub fn validation() -> Self {
        SpecimenConfig {
            kind: SpecimenKind::Validation,
            target_node_count: DESK_TARGET_NODES,
            hole_radius: DEFAULT_HOLE_RADIUS,
            ellipses: default_ellipses(),
            deltas: (1..=VALIDATION_STEPS).map(|t| 0.01 * t as f64).collect(),
            biaxial_ratio: DEFAULT_BIAXIAL_RATIO,
        }
    }

    pub fn with_target(mut self, nodes: usize) -> Self {
        self.target_node_count = nodes;
        self
    }

    pub fn holes(&self) -> Holes {
        match self.kind {
            SpecimenKind::Training => Holes::CornerCircle {
                radius: self.hole_radius,
            },
            SpecimenKind::Validation => Holes::Ellipses(self.ellipses.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_node_count < 100 {
            return Err(Error::Config(format!(
                "target_node_count {} is below 100",
                self.target_node_count
            )));
        }
        if self.deltas.iter().any(|d| !d.is_finite()) || self.deltas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("deltas must be finite and ascending".into()));
        }
        if !self.biaxial_ratio.is_finite() {
            return Err(Error::Config("biaxial_ratio must be finite".into()));
        }
        self.holes().validate()
    }

    /// Dirichlet conditions with values proportional to the loading parameter.
    pub fn boundary_conditions(&self) -> Vec<BoundaryCondition> {
        match self.kind {
            SpecimenKind::Training => vec![
                BoundaryCondition::new("left", Direction::X, 0.0),
                BoundaryCondition::new("bottom", Direction::Y, 0.0),
                BoundaryCondition::new("right", Direction::X, self.biaxial_ratio),
                BoundaryCondition::new("top", Direction::Y, 1.0),
            ],
            SpecimenKind::Validation => vec![
                BoundaryCondition::new("bottom", Direction::Y, 0.0),
                BoundaryCondition::new("pin", Direction::X, 0.0),
                BoundaryCondition::new("top", Direction::Y, 1.0),
            ],
        }
    }
}

/// Meshes the specimen described by `config`. Validation specimens carry an
/// extra `pin` tag holding the bottom-left corner node.
pub fn generate_specimen(config: &SpecimenConfig) -> Result<Mesh> {
    config.validate()?;
    let mut mesh = generate_mesh(&config.holes(), config.target_node_count)?;
    if config.kind == SpecimenKind::Validation {
        let corner = mesh
            .nodes
            .iter()
            .position(|p| p[0] == 0.0 && p[1] == 0.0)
            .ok_or_else(|| Error::MeshingFailure("no node at the pinned corner".into()))?;
        mesh.boundaries.insert("pin".to_string(), vec![corner]);
    }
    Ok(mesh)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Noisy,
    Denoised,
    Projected,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Raw => "raw",
            Stage::Noisy => "noisy",
            Stage::Denoised => "denoised",
            Stage::Projected => "projected",
        };
        f.write_str(s)
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Stage::Raw),
            "noisy" => Ok(Stage::Noisy),
            "denoised" => Ok(Stage::Denoised),
            "projected" => Ok(Stage::Projected),
            _ => Err(Error::schema("provenance.json/stage", format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub sigma_u: f64,
    pub seed: u64,
    pub stage: Stage,
    #[serde(default)]
    pub parameters: BTreeMap<String, serde_json::Value>,
}

/// Displacement snapshots and reaction forces of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotDataset {
    pub mesh: Mesh,
    pub partition: DofPartition,
    /// `[t][node] = (u_x, u_y)`
    pub displacements: Vec<Vec<[f64; 2]>>,
    /// `[t][group]`
    pub reactions: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl SnapshotDataset {
    pub fn n_snapshots(&self) -> usize {
        self.displacements.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mesh.n_nodes();
        if self.reactions.len() != self.displacements.len() {
            return Err(Error::schema("reactions", "snapshot count differs from displacements"));
        }
        for (t, u) in self.displacements.iter().enumerate() {
            if u.len() != n {
                return Err(Error::schema(
                    format!("displacements[{t}]"),
                    format!("{} nodes, mesh has {n}", u.len()),
                ));
            }
        }
        for (t, r) in self.reactions.iter().enumerate() {
            if r.len() != self.partition.n_groups() {
                return Err(Error::schema(
                    format!("reactions[{t}]"),
                    format!("{} values for {} groups", r.len(), self.partition.n_groups()),
                ));
            }
        }
        Ok(())
    }

    /// Mean squared difference of all displacement components.
    pub fn displacement_mse(&self, other: &SnapshotDataset) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (a, b) in self.displacements.iter().zip(&other.displacements) {
            for (p, q) in a.iter().zip(b) {
                sum += (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                count += 2;
            }
        }
        sum / count.max(1) as f64
    }

    fn with_stage(&self, stage: Stage, displacements: Vec<Vec<[f64; 2]>>) -> SnapshotDataset {
        let mut out = self.clone();
        out.displacements = displacements;
        out.provenance.stage = stage;
        out
    }
}

/// Simulates the displacement-controlled test of `config` on `mesh`.
pub fn run_experiment(
    mesh: &Mesh,
    config: &SpecimenConfig,
    model: &dyn ConstitutiveModel,
) -> Result<SnapshotDataset> {
    let bcs = config.boundary_conditions();
    let problem = Problem::new(mesh, &bcs)?;
    let opts = SolverOptions::default();
    let result = problem.solve(model, &config.deltas, &opts)?;
    let mut parameters = BTreeMap::new();
    parameters.insert("kind".into(), serde_json::to_value(config.kind).expect("enum"));
    parameters.insert("deltas".into(), serde_json::json!(config.deltas));
    parameters.insert("biaxial_ratio".into(), serde_json::json!(config.biaxial_ratio));
    parameters.insert("newton_tol".into(), serde_json::json!(opts.newton_tol));
    parameters.insert("n_nodes".into(), serde_json::json!(mesh.n_nodes()));
    Ok(SnapshotDataset {
        mesh: mesh.clone(),
        partition: result.partition,
        displacements: result.displacements,
        reactions: result.reactions,
        provenance: Provenance {
            model_id: model.label(),
            sigma_u: 0.0,
            seed: 0,
            stage: Stage::Raw,
            parameters,
        },
    })
}

pub(crate) fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seed of the independent stream for one displacement component.
pub(crate) fn stream_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x9e3779b97f4a7c15u64, |h, &p| mix(h ^ mix(p.wrapping_add(0x9e3779b97f4a7c15))))
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma_u` to every
/// displacement component; each draw depends only on `(seed, t, node, dir)`.
pub fn add_noise(ds: &SnapshotDataset, sigma_u: f64, seed: u64) -> SnapshotDataset {
    let disp = ds
        .displacements
        .iter()
        .enumerate()
        .map(|(t, u)| {
            u.iter()
                .enumerate()
                .map(|(a, v)| {
                    let mut out = *v;
                    for (i, x) in out.iter_mut().enumerate() {
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(stream_key(&[seed, t as u64, a as u64, i as u64]));
                        let e: f64 = StandardNormal.sample(&mut rng);
                        *x += sigma_u * e;
                    }
                    out
                })
                .collect()
        })
        .collect();
    let mut out = ds.with_stage(Stage::Noisy, disp);
    out.provenance.sigma_u = sigma_u;
    out.provenance.seed = seed;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::BenchmarkModel;
    use crate::mesh::structured_rectangle;

    fn tiny_dataset() -> SnapshotDataset {
        let mut mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 6, 6);
        mesh.boundaries.insert("hole".into(), vec![0]);
        let cfg = SpecimenConfig {
            deltas: vec![0.0, 0.05, 0.1],
            ..SpecimenConfig::training(ModelId::NH)
        };
        run_experiment(&mesh, &cfg, &BenchmarkModel::new(ModelId::NH)).unwrap()
    }

    #[test]
    fn schedules_follow_benchmark() {
        assert_eq!(training_schedule(ModelId::NH).len(), 3);
        let ab = training_schedule(ModelId::AB);
        assert_eq!(ab.len(), 10);
        assert!((ab[9] - 0.5).abs() < 1e-15);
        assert_eq!(training_schedule(ModelId::IH).len(), 8);
    }

    #[test]
    fn prepended_zero_step_is_unloaded() {
        let ds = tiny_dataset();
        assert_eq!(ds.n_snapshots(), 3);
        assert_eq!(ds.partition.n_groups(), 4);
        assert!(ds.displacements[0].iter().all(|u| u[0] == 0.0 && u[1] == 0.0));
        assert!(ds.reactions[0].iter().all(|&r| r == 0.0));
        ds.validate().unwrap();
    }

    #[test]
    fn zero_noise_is_identity() {
        let ds = tiny_dataset();
        let noisy = add_noise(&ds, 0.0, 3);
        assert_eq!(noisy.displacements, ds.displacements);
        assert_eq!(noisy.reactions, ds.reactions);
        assert_eq!(noisy.provenance.stage, Stage::Noisy);
    }

    #[test]
    fn noise_is_deterministic_and_keyed() {
        let ds = tiny_dataset();
        let a = add_noise(&ds, 1e-4, 11);
        let b = add_noise(&ds, 1e-4, 11);
        let c = add_noise(&ds, 1e-4, 12);
        assert_eq!(a.displacements, b.displacements);
        assert_ne!(a.displacements, c.displacements);
        assert_eq!(a.reactions, ds.reactions);
    }

    #[test]
    fn noise_statistics() {
        let mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 40, 40);
        let ds = SnapshotDataset {
            partition: crate::mesh::partition_dofs(&mesh, &[]).unwrap(),
            displacements: vec![vec![[0.0; 2]; mesh.n_nodes()]; 4],
            reactions: vec![vec![]; 4],
            mesh,
            provenance: Provenance {
                model_id: "NH".into(),
                sigma_u: 0.0,
                seed: 0,
                stage: Stage::Raw,
                parameters: BTreeMap::new(),
            },
        };
        let noisy = add_noise(&ds, 1e-3, 5);
        let vals: Vec<f64> = noisy
            .displacements
            .iter()
            .flatten()
            .flat_map(|v| [v[0], v[1]])
            .collect();
        assert!(vals.len() >= 10_000);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 1e-3).abs() <= 0.02e-3, "std {std}");
    }
}
