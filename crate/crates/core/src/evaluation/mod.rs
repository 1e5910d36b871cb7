//! Comparison of learned models against ground truth: homogeneous deformation
//! paths, R² scores from finite-element redeployment, invariant-space clouds
//! and CSV/SVG report files.

pub mod svg;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveModel;
use crate::error::{Error, Result};
use crate::fem::{Problem, SolveResult, SolverOptions};
use crate::materials::invariants;
use crate::mesh::{deformation_gradient, element_displacements, Mesh};
use crate::pipeline::{generate_specimen, SpecimenConfig};
use crate::tensor::plane_strain;
use svg::Series;

/// Homogeneous plane deformation families parameterized by `γ ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PathId {
    UT,
    UC,
    BT,
    BC,
    SS,
    PS,
}

impl PathId {
    pub const ALL: [PathId; 6] = [PathId::UT, PathId::UC, PathId::BT, PathId::BC, PathId::SS, PathId::PS];

    pub fn as_str(self) -> &'static str {
        match self {
            PathId::UT => "UT",
            PathId::UC => "UC",
            PathId::BT => "BT",
            PathId::BC => "BC",
            PathId::SS => "SS",
            PathId::PS => "PS",
        }
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PathId::ALL
            .iter()
            .copied()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownPath(s.to_string()))
    }
}

/// Deformation gradient of `path` at `gamma`, embedded in plane strain.
pub fn deformation_path(path: PathId, gamma: f64) -> Result<Matrix3<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma {gamma} outside [0, 1]")));
    }
    let s = 1.0 + gamma;
    Ok(match path {
        PathId::UT => plane_strain(s, 0.0, 0.0, 1.0),
        PathId::UC => plane_strain(1.0 / s, 0.0, 0.0, 1.0),
        PathId::BT => plane_strain(s, 0.0, 0.0, s),
        PathId::BC => plane_strain(1.0 / s, 0.0, 0.0, 1.0 / s),
        PathId::SS => plane_strain(1.0, gamma, 0.0, 1.0),
        PathId::PS => plane_strain(s, 0.0, 0.0, 1.0 / s),
    })
}

/// `n` evenly spaced values from 0 to `gamma_max` inclusive.
pub fn gamma_grid(gamma_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| gamma_max * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Energy and in-plane stress sampled along one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCurve {
    pub path: PathId,
    pub tag: String,
    pub gammas: Vec<f64>,
    pub w: Vec<f64>,
    /// `[P11, P12, P21, P22]` per sample.
    pub p: Vec<[f64; 4]>,
}

/// A model curve together with the ground-truth curve on the same samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePair {
    pub truth: PathCurve,
    pub model: PathCurve,
}

pub fn sample_path(model: &dyn ConstitutiveModel, path: PathId, gammas: &[f64], tag: &str) -> Result<PathCurve> {
    let mut curve = PathCurve {
        path,
        tag: tag.to_string(),
        gammas: gammas.to_vec(),
        w: Vec::with_capacity(gammas.len()),
        p: Vec::with_capacity(gammas.len()),
    };
    for &g in gammas {
        let f = deformation_path(path, g)?;
        curve.w.push(model.energy(&f)?);
        let p = model.stress(&f)?;
        curve.p.push([p[(0, 0)], p[(0, 1)], p[(1, 0)], p[(1, 1)]]);
    }
    Ok(curve)
}

/// Samples `model` and `truth` along all six paths.
pub fn evaluate_paths(
    model: &dyn ConstitutiveModel,
    truth: &dyn ConstitutiveModel,
    gammas: &[f64],
) -> Result<Vec<CurvePair>> {
    PathId::ALL
        .par_iter()
        .map(|&path| {
            Ok(CurvePair {
                truth: sample_path(truth, path, gammas, "truth")?,
                model: sample_path(model, path, gammas, "model")?,
            })
        })
        .collect()
}

/// `sqrt(Σ(pred − truth)² / Σ truth²)`.
pub fn relative_rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    (num / den).sqrt()
}

/// Coefficient of determination of `pred` against the identity line.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.len() < 2 {
        return Err(Error::Config(format!(
            "r_squared needs equal lengths of at least 2, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTruth);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Distance between two fiber angles on the circle of period π.
pub fn fiber_angle_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

/// One `(Ĩ₁ − 3, Ĩ₂ − 3, (J − 1)²)` sample; `values` is `None` for an
/// element with non-positive Jacobian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub element: usize,
    pub t: usize,
    pub values: Option<[f64; 3]>,
}

/// Invariant triples of every element in every snapshot, snapshot-major.
pub fn invariant_cloud(mesh: &Mesh, snapshots: &[Vec<[f64; 2]>]) -> Result<Vec<CloudPoint>> {
    let geoms = mesh.geometries()?;
    let mut out = Vec::with_capacity(snapshots.len() * geoms.len());
    for (t, disp) in snapshots.iter().enumerate() {
        let step: Vec<CloudPoint> = geoms
            .par_iter()
            .enumerate()
            .map(|(e, g)| {
                let f = deformation_gradient(g, &element_displacements(mesh, e, disp));
                CloudPoint {
                    element: e,
                    t,
                    values: invariants(&f, &[]).ok().map(|inv| inv.shifted_isotropic()),
                }
            })
            .collect();
        out.extend(step);
    }
    Ok(out)
}

/// Invariant triples along the six paths; `element` holds the path index and
/// `t` the sample index.
pub fn path_cloud(gammas: &[f64]) -> Result<Vec<CloudPoint>> {
    let mut out = Vec::new();
    for (k, &path) in PathId::ALL.iter().enumerate() {
        for (t, &g) in gammas.iter().enumerate() {
            let f = deformation_path(path, g)?;
            out.push(CloudPoint {
                element: k,
                t,
                values: Some(invariants(&f, &[])?.shifted_isotropic()),
            });
        }
    }
    Ok(out)
}

/// Agreement between a learned and a true model redeployed on the same
/// boundary-value problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeployScore {
    /// Load levels, starting with the unloaded state `δ = 0`.
    pub deltas: Vec<f64>,
    /// Per-element values, step-major over the loaded steps.
    pub i1_true: Vec<f64>,
    pub i1_pred: Vec<f64>,
    pub j_true: Vec<f64>,
    pub j_pred: Vec<f64>,
    pub r2_i1: Option<f64>,
    pub r2_j: Option<f64>,
    /// Top-surface reaction per entry of `deltas`.
    pub reaction_true: Vec<f64>,
    pub reaction_pred: Vec<f64>,
    pub truth_failure: Option<String>,
    pub model_failure: Option<String>,
    /// Invariant cloud of the ground-truth solution over the loaded steps.
    pub truth_cloud: Vec<CloudPoint>,
}

fn element_invariants(mesh: &Mesh, result: &SolveResult) -> Result<(Vec<f64>, Vec<f64>)> {
    let geoms = mesh.geometries()?;
    let mut i1 = Vec::new();
    let mut j = Vec::new();
    for disp in &result.displacements {
        for (e, g) in geoms.iter().enumerate() {
            let f = deformation_gradient(g, &element_displacements(mesh, e, disp));
            let inv = invariants(&f, &[])?;
            i1.push(inv.i1_bar);
            j.push(inv.j);
        }
    }
    Ok((i1, j))
}

fn top_reactions(result: &SolveResult) -> Vec<f64> {
    let k = result
        .partition
        .fixed_groups
        .iter()
        .position(|g| g.name == "top_y");
    let mut out = vec![0.0];
    out.extend(result.reactions.iter().map(|r| k.map_or(f64::NAN, |k| r[k])));
    out
}

/// Solves the specimen of `config` with both models and compares the
/// per-element invariants and the top-surface reaction.
pub fn deploy_and_score(
    trained: &dyn ConstitutiveModel,
    truth: &dyn ConstitutiveModel,
    config: &SpecimenConfig,
) -> Result<DeployScore> {
    let mesh = generate_specimen(config)?;
    deploy_on_mesh(trained, truth, &mesh, config)
}

/// [`deploy_and_score`] on an already meshed specimen.
pub fn deploy_on_mesh(
    trained: &dyn ConstitutiveModel,
    truth: &dyn ConstitutiveModel,
    mesh: &Mesh,
    config: &SpecimenConfig,
) -> Result<DeployScore> {
    let problem = Problem::new(mesh, &config.boundary_conditions())?;
    let opts = SolverOptions::default();
    let (truth_run, model_run) = rayon::join(
        || problem.solve(truth, &config.deltas, &opts),
        || problem.solve(trained, &config.deltas, &opts),
    );
    let mut deltas = vec![0.0];
    deltas.extend(&config.deltas);
    let mut score = DeployScore {
        deltas,
        i1_true: Vec::new(),
        i1_pred: Vec::new(),
        j_true: Vec::new(),
        j_pred: Vec::new(),
        r2_i1: None,
        r2_j: None,
        reaction_true: Vec::new(),
        reaction_pred: Vec::new(),
        truth_failure: None,
        model_failure: None,
        truth_cloud: Vec::new(),
    };
    match &truth_run {
        Ok(r) => {
            (score.i1_true, score.j_true) = element_invariants(mesh, r)?;
            score.reaction_true = top_reactions(r);
            score.truth_cloud = invariant_cloud(mesh, &r.displacements)?;
        }
        Err(e) => score.truth_failure = Some(e.to_string()),
    }
    match &model_run {
        Ok(r) => {
            (score.i1_pred, score.j_pred) = element_invariants(mesh, r)?;
            score.reaction_pred = top_reactions(r);
        }
        Err(e) => score.model_failure = Some(e.to_string()),
    }
    if truth_run.is_ok() && model_run.is_ok() {
        score.r2_i1 = Some(r_squared(&score.i1_pred, &score.i1_true)?);
        score.r2_j = Some(r_squared(&score.j_pred, &score.j_true)?);
    }
    Ok(score)
}

/// Path curves of one trained model, flagged by ensemble acceptance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub label: String,
    pub accepted: bool,
    pub pairs: Vec<CurvePair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudSet {
    pub label: String,
    pub points: Vec<CloudPoint>,
}

/// Everything a report can contain; empty parts produce no files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportInput {
    pub path_sets: Vec<PathSet>,
    pub deploy: Option<DeployScore>,
    pub clouds: Vec<CloudSet>,
}

pub const INDEX_FILE: &str = "index.md";

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(name.to_string());
    Ok(())
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn paths_table(sets: &[PathSet]) -> String {
    let mut out = String::from(
        "set,accepted,path_id,gamma,W_true,W_pred,P11_true,P11_pred,P12_true,P12_pred,P21_true,P21_pred,P22_true,P22_pred\n",
    );
    for set in sets {
        for pair in &set.pairs {
            out.push_str(&pair_rows(&set.label, set.accepted, pair));
        }
    }
    out
}

fn pair_rows(label: &str, accepted: bool, pair: &CurvePair) -> String {
    let (t, m) = (&pair.truth, &pair.model);
    let mut out = String::new();
    for k in 0..t.gammas.len() {
        out.push_str(&format!(
            "{label},{accepted},{},{},{},{}",
            t.path, t.gammas[k], t.w[k], m.w[k]
        ));
        for c in 0..4 {
            out.push_str(&format!(",{},{}", t.p[k][c], m.p[k][c]));
        }
        out.push('\n');
    }
    out
}

fn pair_chart(label: &str, pair: &CurvePair) -> String {
    let pts = |c: &PathCurve| c.gammas.iter().copied().zip(c.w.iter().copied()).collect();
    svg::line_chart(
        &format!("{label} {}", pair.truth.path),
        "gamma",
        "W",
        &[
            Series { name: "truth", points: pts(&pair.truth), dashed: false },
            Series { name: "model", points: pts(&pair.model), dashed: true },
        ],
    )
}

/// Writes CSV tables, SVG charts and an index listing them into `out_dir`.
/// Returns the file names written, index last.
pub fn emit_report(input: &ReportInput, out_dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    if input.path_sets.iter().any(|s| !s.pairs.is_empty()) {
        write(out_dir, "paths.csv", &paths_table(&input.path_sets), &mut written)?;
        for set in &input.path_sets {
            for pair in &set.pairs {
                let stem = format!("path_{}_{}", slug(&set.label), pair.truth.path);
                let header = "path_id,gamma,W_true,W_pred,P11_true,P11_pred,P12_true,P12_pred,P21_true,P21_pred,P22_true,P22_pred\n";
                let rows: String = pair_rows("", false, pair)
                    .lines()
                    .map(|l| format!("{}\n", l.splitn(3, ',').nth(2).unwrap_or("")))
                    .collect();
                write(out_dir, &format!("{stem}.csv"), &format!("{header}{rows}"), &mut written)?;
                write(out_dir, &format!("{stem}.svg"), &pair_chart(&set.label, pair), &mut written)?;
            }
        }
    }

    if let Some(score) = &input.deploy {
        let mut table = String::from("invariant,r_squared\n");
        for (name, r2) in [("I1", score.r2_i1), ("J", score.r2_j)] {
            table.push_str(&format!("{name},{}\n", r2.map_or("NaN".to_string(), |v| v.to_string())));
        }
        write(out_dir, "scores.csv", &table, &mut written)?;
        let mut reactions = String::from("delta,R_true,R_pred\n");
        for (k, d) in score.deltas.iter().enumerate() {
            let get = |v: &Vec<f64>| v.get(k).map_or("NaN".to_string(), |x| x.to_string());
            reactions.push_str(&format!("{d},{},{}\n", get(&score.reaction_true), get(&score.reaction_pred)));
        }
        write(out_dir, "reactions.csv", &reactions, &mut written)?;
        let zip = |a: &[f64], b: &[f64]| a.iter().copied().zip(b.iter().copied()).collect::<Vec<_>>();
        write(
            out_dir,
            "deploy_i1.svg",
            &svg::scatter_chart(
                "element I1",
                "truth",
                "model",
                &[Series { name: "I1", points: zip(&score.i1_true, &score.i1_pred), dashed: false }],
                true,
            ),
            &mut written,
        )?;
        write(
            out_dir,
            "deploy_j.svg",
            &svg::scatter_chart(
                "element J",
                "truth",
                "model",
                &[Series { name: "J", points: zip(&score.j_true, &score.j_pred), dashed: false }],
                true,
            ),
            &mut written,
        )?;
        write(
            out_dir,
            "reactions.svg",
            &svg::line_chart(
                "top reaction",
                "delta",
                "R",
                &[
                    Series { name: "truth", points: zip(&score.deltas, &score.reaction_true), dashed: false },
                    Series { name: "model", points: zip(&score.deltas, &score.reaction_pred), dashed: true },
                ],
            ),
            &mut written,
        )?;
    }

    if input.clouds.iter().any(|c| !c.points.is_empty()) {
        let mut table = String::from("source,element,t,i1_shift,i2_shift,j_shift_sq\n");
        for cloud in &input.clouds {
            for p in &cloud.points {
                let v = p.values.unwrap_or([f64::NAN; 3]);
                table.push_str(&format!("{},{},{},{},{},{}\n", cloud.label, p.element, p.t, v[0], v[1], v[2]));
            }
        }
        write(out_dir, "cloud.csv", &table, &mut written)?;
        for (name, a, b) in [("cloud_i1_i2.svg", 0, 1), ("cloud_i1_j.svg", 0, 2)] {
            let series: Vec<Series> = input
                .clouds
                .iter()
                .map(|c| Series {
                    name: &c.label,
                    points: c.points.iter().filter_map(|p| p.values.map(|v| (v[a], v[b]))).collect(),
                    dashed: false,
                })
                .collect();
            let labels = ["I1-3", "I2-3", "(J-1)^2"];
            write(out_dir, name, &svg::scatter_chart("invariants", labels[a], labels[b], &series, false), &mut written)?;
        }
    }

    let mut index = String::from("# Report\n\n");
    if written.is_empty() {
        index.push_str("No results.\n");
    }
    for name in &written {
        index.push_str(&format!("- [{name}]({name})\n"));
    }
    write(out_dir, INDEX_FILE, &index, &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::{init_parameters, IcnnArchitecture, IcnnModel};
    use crate::materials::{BenchmarkModel, ModelId};

    #[test]
    fn path_matrices() {
        for p in PathId::ALL {
            assert_eq!(deformation_path(p, 0.0).unwrap(), Matrix3::identity());
        }
        let ss = deformation_path(PathId::SS, 0.3).unwrap();
        assert_eq!(ss, plane_strain(1.0, 0.3, 0.0, 1.0));
        let ps = deformation_path(PathId::PS, 0.5).unwrap();
        assert_eq!(ps, plane_strain(1.5, 0.0, 0.0, 1.0 / 1.5));
        assert!(deformation_path(PathId::UT, 1.2).is_err());
        assert!(matches!("XX".parse::<PathId>(), Err(Error::UnknownPath(_))));
        assert_eq!("ps".parse::<PathId>().unwrap(), PathId::PS);
    }

    #[test]
    fn path_jacobians_positive() {
        for p in PathId::ALL {
            for g in gamma_grid(1.0, 101) {
                assert!(deformation_path(p, g).unwrap().determinant() > 0.0);
            }
        }
    }

    #[test]
    fn identical_models_give_identical_curves() {
        let nh = BenchmarkModel::new(ModelId::NH);
        let pairs = evaluate_paths(&nh, &nh, &gamma_grid(1.0, 11)).unwrap();
        assert_eq!(pairs.len(), 6);
        for pair in &pairs {
            for (a, b) in pair.truth.w.iter().zip(&pair.model.w) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        let ut = pairs.iter().find(|p| p.truth.path == PathId::UT).unwrap();
        assert!((ut.truth.w[5] - 0.49668).abs() < 5e-6);
    }

    #[test]
    fn corrected_network_vanishes_at_zero_gamma() {
        let arch = IcnnArchitecture::default();
        let model = IcnnModel::new(arch.clone(), init_parameters(&arch, 3)).unwrap();
        let nh = BenchmarkModel::new(ModelId::NH);
        for pair in evaluate_paths(&model, &nh, &[0.0, 0.2]).unwrap() {
            assert!(pair.model.w[0].abs() <= 1e-12);
            assert!(pair.model.p[0].iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn r_squared_cases() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0; 3], &t).unwrap(), 0.0);
        assert!((r_squared(&[1.0, 2.0, 4.0], &t).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(r_squared(&t, &[1.0; 3]), Err(Error::DegenerateTruth)));
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn fiber_error_wraps_at_pi() {
        let d = std::f64::consts::PI / 180.0;
        assert!((fiber_angle_error(1.0 * d, 179.0 * d) - 2.0 * d).abs() < 1e-12);
        assert!((fiber_angle_error(45.0 * d, 45.0 * d + std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn relative_rmse_scale() {
        assert_eq!(relative_rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_rmse(&[1.1, 2.2], &[1.0, 2.0]) - 0.1).abs() < 1e-12);
    }
}
