use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use euclid_core::evaluation::{
    deploy_and_score, emit_report, evaluate_paths, fiber_angle_error, gamma_grid, invariant_cloud, path_cloud,
    CloudSet, DeployScore, PathSet, ReportInput,
};
use euclid_core::icnn::{IcnnArchitecture, IcnnModel};
use euclid_core::materials::{BenchmarkModel, ModelId};
use euclid_core::pipeline::{
    add_noise, denoise_krr, generate_specimen, project_to_coarse, read_dataset, run_experiment, write_dataset,
    SpecimenConfig,
};
use euclid_core::trainer::{train_ensemble, EnsembleReport};
use serde_json::json;

use crate::config::RunConfig;
use crate::UsageError;

fn model_id(cfg: &RunConfig) -> anyhow::Result<ModelId> {
    Ok(cfg.model.parse::<ModelId>()?)
}

fn run_config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn training_specimen(cfg: &RunConfig, id: ModelId, nodes: usize) -> SpecimenConfig {
    let mut s = SpecimenConfig::training(id).with_target(nodes);
    s.hole_radius = cfg.specimen.hole_radius;
    s.biaxial_ratio = cfg.specimen.biaxial_ratio;
    s
}

pub fn generate(cfg: &RunConfig) -> anyhow::Result<()> {
    let id = model_id(cfg)?;
    let truth = BenchmarkModel::new(id);
    let fine_cfg = training_specimen(cfg, id, cfg.specimen.fine_nodes);
    let fine = generate_specimen(&fine_cfg).context("stage mesh")?;
    log::info!("simulating {id} on {} nodes", fine.n_nodes());
    let raw = run_experiment(&fine, &fine_cfg, &truth).context("stage raw")?;
    let source = if cfg.noise.sigma_u > 0.0 {
        let noisy = add_noise(&raw, cfg.noise.sigma_u, cfg.noise.seed);
        let ridge = cfg.krr.ridge_per_node * fine.n_nodes() as f64;
        let mut denoised = denoise_krr(&noisy, cfg.krr.bandwidth, ridge).context("stage denoised")?;
        let before = noisy.displacement_mse(&raw);
        let after = denoised.displacement_mse(&raw);
        log::info!("denoising: displacement MSE {before:e} -> {after:e}");
        let p = &mut denoised.provenance.parameters;
        p.insert("mse_noisy".into(), json!(before));
        p.insert("mse_denoised".into(), json!(after));
        denoised
    } else {
        raw
    };
    let coarse_cfg = training_specimen(cfg, id, cfg.specimen.coarse_nodes);
    let coarse = generate_specimen(&coarse_cfg).context("stage coarse mesh")?;
    let mut projected = project_to_coarse(&source, &coarse).context("stage projected")?;
    projected
        .provenance
        .parameters
        .insert("fine_nodes".into(), json!(fine.n_nodes()));
    projected.provenance.parameters.insert("run_config".into(), run_config_json(cfg));
    write_dataset(&projected, &cfg.paths.data_dir).context("writing dataset")?;
    println!(
        "dataset {}: {} nodes, {} snapshots, {} reaction groups, stage {:?}",
        cfg.paths.data_dir.display(),
        projected.mesh.n_nodes(),
        projected.n_snapshots(),
        projected.partition.n_groups(),
        projected.provenance.stage
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, fibers: Option<usize>) -> anyhow::Result<()> {
    let ds = read_dataset(&cfg.paths.data_dir).context("reading dataset")?;
    let n_fibers = fibers.unwrap_or_else(|| {
        ds.provenance
            .model_id
            .parse::<ModelId>()
            .map(|id| id.fiber_angles().len())
            .unwrap_or(cfg.architecture.n_fibers)
    });
    let arch = IcnnArchitecture {
        n_fibers,
        ..cfg.architecture.clone()
    };
    log::info!(
        "training {} members for {} epochs on {} ({} fibers)",
        cfg.train.ensemble_size,
        cfg.train.epochs,
        cfg.paths.data_dir.display(),
        n_fibers
    );
    let mut report = train_ensemble(&ds, &arch, &cfg.train)?;
    let mut prov = BTreeMap::new();
    prov.insert("run_config".into(), run_config_json(cfg));
    prov.insert("dataset".into(), serde_json::to_value(&ds.provenance).expect("provenance serializes"));
    report.save(&cfg.paths.models_dir, &prov).context("writing ensemble")?;
    for (k, m) in report.members.iter().enumerate() {
        match (m.final_loss, &m.failure) {
            (Some(l), _) => println!("member {k:03} seed {}: loss {l:e}{}", m.seed, if m.accepted { " accepted" } else { "" }),
            (None, Some(f)) => println!("member {k:03} seed {}: failed ({f})", m.seed),
            (None, None) => println!("member {k:03} seed {}: failed", m.seed),
        }
    }
    println!(
        "{} of {} accepted, best member {:03}",
        report.accepted_indices().len(),
        report.members.len(),
        report.best_index
    );
    Ok(())
}

fn load_ensemble(dir: &Path) -> anyhow::Result<EnsembleReport> {
    if !dir.join("ensemble.json").is_file() {
        return Err(UsageError(format!("MissingModel: no ensemble.json in {}", dir.display())).into());
    }
    Ok(EnsembleReport::load(dir)?)
}

fn path_sets(cfg: &RunConfig, report: &EnsembleReport, truth: &BenchmarkModel) -> anyhow::Result<Vec<PathSet>> {
    let gammas = gamma_grid(cfg.evaluation.gamma_max, cfg.evaluation.samples);
    let mut sets = Vec::new();
    for (k, m) in report.members.iter().enumerate() {
        let Some(params) = &m.params else { continue };
        let model = IcnnModel::new(report.architecture.clone(), params.clone())?;
        for (q, (&a, &t)) in model.fiber_angles().iter().zip(&truth.fiber_angles).enumerate() {
            log::info!(
                "member {k:03} fiber {q}: {:.2} deg (error {:.2} deg)",
                a.to_degrees(),
                fiber_angle_error(a, t).to_degrees()
            );
        }
        sets.push(PathSet {
            label: format!("member_{k:03}"),
            accepted: m.accepted,
            pairs: evaluate_paths(&model, truth, &gammas)?,
        });
    }
    if sets.is_empty() {
        return Err(UsageError("MissingModel: no trained member has parameters".into()).into());
    }
    Ok(sets)
}

fn deploy_best(cfg: &RunConfig, report: &EnsembleReport, truth: &BenchmarkModel) -> anyhow::Result<DeployScore> {
    let best = report.best_model()?;
    let validation = SpecimenConfig::validation().with_target(cfg.specimen.validation_nodes);
    log::info!("redeploying member {:03} on the validation specimen", report.best_index);
    let score = deploy_and_score(&best, truth, &validation).context("deployment")?;
    if let Some(f) = &score.truth_failure {
        log::warn!("ground-truth solve failed: {f}");
    }
    if let Some(f) = &score.model_failure {
        log::warn!("trained-model solve failed: {f}");
    }
    Ok(score)
}

fn finish(input: &ReportInput, out: &Path) -> anyhow::Result<()> {
    let written = emit_report(input, out)?;
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn print_scores(score: &DeployScore) {
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |r| format!("{r:.4}"));
    println!("R2(I1) = {}, R2(J) = {}", show(score.r2_i1), show(score.r2_j));
}

pub fn evaluate(cfg: &RunConfig) -> anyhow::Result<()> {
    let truth = BenchmarkModel::new(model_id(cfg)?);
    let report = load_ensemble(&cfg.paths.models_dir)?;
    let input = ReportInput {
        path_sets: path_sets(cfg, &report, &truth)?,
        ..ReportInput::default()
    };
    finish(&input, &cfg.paths.out_dir)
}

pub fn deploy(cfg: &RunConfig) -> anyhow::Result<()> {
    let truth = BenchmarkModel::new(model_id(cfg)?);
    let report = load_ensemble(&cfg.paths.models_dir)?;
    let score = deploy_best(cfg, &report, &truth)?;
    print_scores(&score);
    finish(
        &ReportInput {
            deploy: Some(score),
            ..ReportInput::default()
        },
        &cfg.paths.out_dir,
    )
}

pub fn report(cfg: &RunConfig) -> anyhow::Result<()> {
    let truth = BenchmarkModel::new(model_id(cfg)?);
    let report = load_ensemble(&cfg.paths.models_dir)?;
    let path_sets = path_sets(cfg, &report, &truth)?;
    let mut clouds = Vec::new();
    if cfg.paths.data_dir.join("mesh.json").is_file() {
        let ds = read_dataset(&cfg.paths.data_dir).context("reading dataset")?;
        clouds.push(CloudSet {
            label: "training".into(),
            points: invariant_cloud(&ds.mesh, &ds.displacements)?,
        });
    } else {
        log::warn!("no dataset in {}; training cloud omitted", cfg.paths.data_dir.display());
    }
    let score = deploy_best(cfg, &report, &truth)?;
    print_scores(&score);
    clouds.push(CloudSet {
        label: "validation".into(),
        points: score.truth_cloud.clone(),
    });
    clouds.push(CloudSet {
        label: "paths".into(),
        points: path_cloud(&gamma_grid(cfg.evaluation.gamma_max, cfg.evaluation.samples))?,
    });
    finish(
        &ReportInput {
            path_sets,
            deploy: Some(score),
            clouds,
        },
        &cfg.paths.out_dir,
    )
}
