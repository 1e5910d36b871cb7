use std::collections::BTreeMap;
use std::fs;

use euclid_core::evaluation::*;
use euclid_core::fem::{solve_quasistatic, BoundaryCondition};
use euclid_core::materials::{BenchmarkModel, ModelId};
use euclid_core::mesh::{structured_rectangle, Direction, Mesh};
use euclid_core::pipeline::SpecimenConfig;

fn patch_displacements(mesh: &Mesh) -> Vec<[f64; 2]> {
    mesh.nodes.iter().map(|p| [0.1 * p[0], 0.0]).collect()
}

#[test]
fn cloud_of_homogeneous_stretch() {
    let mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 4, 3);
    let zero = vec![[0.0; 2]; mesh.n_nodes()];
    let cloud = invariant_cloud(&mesh, &[zero, patch_displacements(&mesh)]).unwrap();
    assert_eq!(cloud.len(), 2 * mesh.n_elements());
    for p in cloud.iter().filter(|p| p.t == 0) {
        assert_eq!(p.values.unwrap(), [0.0; 3]);
    }
    for p in cloud.iter().filter(|p| p.t == 1) {
        let v = p.values.unwrap();
        assert!((v[0] - 0.01240).abs() < 5e-5);
        assert!((v[1] - 0.01190).abs() < 5e-5);
        assert!((v[2] - 0.01).abs() < 1e-12);
    }
}

#[test]
fn cloud_flags_inverted_elements() {
    let mesh = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], BTreeMap::new()).unwrap();
    let flipped = vec![[0.0, 0.0], [-2.0, 0.0], [0.0, 0.0]];
    let cloud = invariant_cloud(&mesh, &[flipped]).unwrap();
    assert_eq!(cloud[0].values, None);
}

#[test]
fn deploying_the_truth_scores_one() {
    let mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 6, 6);
    let mut config = SpecimenConfig::validation();
    config.deltas = vec![0.02, 0.05, 0.1];
    let mut mesh = mesh;
    let corner = mesh.boundary("bottom").unwrap()[0];
    mesh.boundaries.insert("pin".into(), vec![corner]);
    let nh = BenchmarkModel::new(ModelId::NH);
    let score = deploy_on_mesh(&nh, &nh, &mesh, &config).unwrap();
    assert_eq!(score.r2_i1, Some(1.0));
    assert_eq!(score.r2_j, Some(1.0));
    assert_eq!(score.reaction_true[0], 0.0);
    assert_eq!(score.reaction_pred[0], 0.0);
    assert_eq!(score.reaction_true.len(), 4);
    assert!(score.reaction_true[3] > score.reaction_true[1]);
    assert_eq!(score.i1_true.len(), 3 * mesh.n_elements());
}

#[test]
fn deploy_records_a_solver_failure() {
    let mut mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 3, 3);
    let corner = mesh.boundary("bottom").unwrap()[0];
    mesh.boundaries.insert("pin".into(), vec![corner]);
    let mut config = SpecimenConfig::validation();
    config.deltas = vec![0.05];
    // a material that cannot be evaluated anywhere
    struct Broken;
    impl euclid_core::ConstitutiveModel for Broken {
        fn energy(&self, _: &nalgebra::Matrix3<f64>) -> euclid_core::Result<f64> {
            Err(euclid_core::Error::NonPositiveJacobian(0.0))
        }
        fn stress(&self, _: &nalgebra::Matrix3<f64>) -> euclid_core::Result<nalgebra::Matrix3<f64>> {
            Err(euclid_core::Error::NonPositiveJacobian(0.0))
        }
        fn tangent(&self, _: &nalgebra::Matrix3<f64>) -> euclid_core::Result<euclid_core::tensor::Tensor4> {
            Err(euclid_core::Error::NonPositiveJacobian(0.0))
        }
        fn label(&self) -> String {
            "broken".into()
        }
    }
    let nh = BenchmarkModel::new(ModelId::NH);
    let score = deploy_on_mesh(&Broken, &nh, &mesh, &config).unwrap();
    assert!(score.model_failure.is_some());
    assert!(score.truth_failure.is_none());
    assert_eq!(score.r2_i1, None);
}

fn one_pair() -> ReportInput {
    let nh = BenchmarkModel::new(ModelId::NH);
    let gt = BenchmarkModel::new(ModelId::GT);
    let pair = sample_pair(&gt, &nh);
    ReportInput {
        path_sets: vec![PathSet {
            label: "member_000".into(),
            accepted: true,
            pairs: vec![pair],
        }],
        ..ReportInput::default()
    }
}

fn sample_pair(model: &BenchmarkModel, truth: &BenchmarkModel) -> CurvePair {
    let g = gamma_grid(1.0, 5);
    CurvePair {
        truth: sample_path(truth, PathId::UT, &g, "truth").unwrap(),
        model: sample_path(model, PathId::UT, &g, "model").unwrap(),
    }
}

fn listing(dir: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn one_pair_report_layout() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&one_pair(), dir.path()).unwrap();
    let files = listing(dir.path());
    assert_eq!(files.iter().filter(|f| f.ends_with(".csv")).count(), 2);
    assert_eq!(files.iter().filter(|f| f.ends_with(".svg")).count(), 1);
    assert!(files.contains(&INDEX_FILE.to_string()));
    let paths = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    assert!(paths.starts_with("set,accepted,path_id,gamma,W_true,W_pred,P11_true,P11_pred"));
    assert_eq!(paths.lines().count(), 6);
    let index = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
    for f in files.iter().filter(|f| *f != INDEX_FILE) {
        assert!(index.contains(f.as_str()));
    }
}

#[test]
fn report_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut input = one_pair();
    let mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 3, 3);
    input.clouds.push(CloudSet {
        label: "training".into(),
        points: invariant_cloud(&mesh, &[patch_displacements(&mesh)]).unwrap(),
    });
    emit_report(&input, a.path()).unwrap();
    emit_report(&input, b.path()).unwrap();
    let files = listing(a.path());
    assert_eq!(files, listing(b.path()));
    for f in files {
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn empty_report_is_index_only() {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&ReportInput::default(), dir.path()).unwrap();
    assert_eq!(written, vec![INDEX_FILE.to_string()]);
    assert_eq!(listing(dir.path()), vec![INDEX_FILE.to_string()]);
}

#[test]
fn solved_patch_cloud_is_homogeneous() {
    let mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, 3, 3);
    let bcs = [
        BoundaryCondition::new("left", Direction::X, 0.0),
        BoundaryCondition::new("bottom", Direction::Y, 0.0),
        BoundaryCondition::new("top", Direction::Y, 0.0),
        BoundaryCondition::new("right", Direction::X, 0.1),
    ];
    let nh = BenchmarkModel::new(ModelId::NH);
    let result = solve_quasistatic(&mesh, &bcs, &nh, &[1.0], 1e-10, 25).unwrap();
    let cloud = invariant_cloud(&mesh, &result.displacements).unwrap();
    assert!(cloud.iter().all(|p| (p.values.unwrap()[2] - 0.01).abs() < 1e-10));
}
