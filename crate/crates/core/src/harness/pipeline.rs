//! End-to-end run behind `lfxlms run`. Artifacts are cached in the output
//! directory under content keys, so reruns with an unchanged config skip
//! dataset generation and training.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::{default_fxlms_grid, ControllerSpec, ExperimentConfig, ModelSpec};
use super::experiment::{
    run_trials, secondary_paths, streams, tune_controller, tuning_scenario, ControllerKind,
    ResolvedController, SecondaryPaths,
};
use super::report::{build_report, write_outputs, MetricsReport};
use crate::anc::DEFAULT_EPSILON;
use crate::error::{Error, Result};
use crate::latent::default_grid;
use crate::neural::{AutoencoderModel, ModelMetadata};
use crate::training::{derive_seed, generate_dataset, train, DatasetAncConfig, FilterDataset, TrainingConfig};

fn content_key<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn cached(key_path: &Path, key: &str, artifact: &Path) -> bool {
    artifact.exists() && std::fs::read_to_string(key_path).map(|k| k.trim() == key).unwrap_or(false)
}

pub fn dataset_anc_config(config: &ExperimentConfig) -> DatasetAncConfig {
    let d = &config.dataset;
    DatasetAncConfig {
        step_size: d.step_size,
        stop: d.stop.clone(),
        noise_variance: config.anc.noise_variance,
        seed: derive_seed(config.seed, streams::DATASET),
        max_retries: d.max_retries,
    }
}

/// Generate (or reuse) the converged-filter dataset in `out`.
pub fn prepare_dataset(config: &ExperimentConfig, out: &Path) -> Result<FilterDataset> {
    std::fs::create_dir_all(out)?;
    let anc = dataset_anc_config(config);
    let key = content_key(&(&config.room, &config.geometry, &anc, config.dataset.n_positions))?;
    let path = out.join("dataset.ancds");
    let key_path = out.join("dataset.key");
    if cached(&key_path, &key, &path) {
        log::info!("reusing dataset {}", path.display());
        return FilterDataset::load(&path);
    }
    log::info!("generating dataset of {} positions", config.dataset.n_positions);
    let ds = generate_dataset(&config.room, &config.geometry, config.dataset.n_positions, &anc)?;
    ds.save(&path)?;
    crate::io::save_positions(&out.join("dataset.positions.txt"), ds.positions())?;
    std::fs::write(key_path, key)?;
    Ok(ds)
}

fn name_seed(base: u64, name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    derive_seed(base, u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
}

/// Seeds and effective training settings for one model entry.
pub fn model_plan(config: &ExperimentConfig, spec: &ModelSpec) -> (u64, TrainingConfig) {
    let init_seed = name_seed(derive_seed(config.seed, streams::MODEL_INIT), &spec.name);
    let mut training = config.training.clone();
    training.mixup = spec.mixup;
    training.epochs = spec.epochs.unwrap_or(training.epochs);
    training.seed = name_seed(derive_seed(config.seed, streams::MODEL_TRAIN), &spec.name);
    (init_seed, training)
}

/// Train one model on the dataset.
pub fn train_model(
    config: &ExperimentConfig,
    spec: &ModelSpec,
    dataset: &FilterDataset,
) -> Result<(AutoencoderModel, ModelMetadata, crate::training::TrainingReport)> {
    let (init_seed, training) = model_plan(config, spec);
    let mut model = AutoencoderModel::new(
        spec.variant,
        dataset.filter_len(),
        config.model.hidden_dim,
        config.model.latent_dim,
        init_seed,
    )?;
    log::info!("training {} ({} epochs)", spec.name, training.epochs);
    let report = train(&mut model, &dataset.normalized().view(), &training)?;
    let metadata = ModelMetadata {
        init_seed,
        train_seed: Some(training.seed),
        epochs: training.epochs,
        learning_rate: Some(training.learning_rate),
        mixup: training.mixup,
        dataset_scale: dataset.scale(),
        final_loss: report.history.last().map(|h| h.train.total),
    };
    Ok((model, metadata, report))
}

pub type TrainedModels = BTreeMap<String, (Arc<AutoencoderModel>, ModelMetadata)>;

/// Train (or reuse) every model listed in the config, under `out/models`.
pub fn prepare_models(
    config: &ExperimentConfig,
    dataset: &FilterDataset,
    dataset_key: &str,
    out: &Path,
) -> Result<TrainedModels> {
    let dir = out.join("models");
    std::fs::create_dir_all(&dir)?;
    let mut models = BTreeMap::new();
    for spec in &config.models {
        let (init_seed, training) = model_plan(config, spec);
        let key = content_key(&(dataset_key, spec, &config.model, &training, init_seed))?;
        let path = dir.join(format!("{}.json", super::report::file_stem(&spec.name)));
        let key_path = path.with_extension("key");
        let (model, meta) = if cached(&key_path, &key, &path) {
            log::info!("reusing model {}", path.display());
            AutoencoderModel::load(&path)?
        } else {
            let (model, meta, report) = train_model(config, spec, dataset)?;
            model.save(&path, &meta)?;
            std::fs::write(
                path.with_extension("history.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            std::fs::write(&key_path, &key)?;
            (model, meta)
        };
        models.insert(spec.name.clone(), (Arc::new(model), meta));
    }
    Ok(models)
}

/// Turn controller specs into runnable controllers, tuning missing step
/// sizes on probe trials.
pub fn resolve_controllers(
    config: &ExperimentConfig,
    config_dir: &Path,
    models: &TrainedModels,
    paths: &SecondaryPaths,
) -> Result<Vec<ResolvedController>> {
    let mut scenario = None;
    let mut out = Vec::with_capacity(config.controllers.len());
    for spec in &config.controllers {
        let (template, step, grid) = match spec {
            ControllerSpec::Fxlms { name, mu, grid } => (
                ResolvedController {
                    name: name.clone(),
                    kind: ControllerKind::Fxlms { mu: 0.0 },
                    tuning: None,
                },
                *mu,
                grid.clone().unwrap_or_else(default_fxlms_grid),
            ),
            ControllerSpec::Latent {
                name,
                model,
                scheme,
                mu_z,
                grid,
                denominator_mode,
                epsilon,
            } => {
                let (m, meta) = match models.get(model) {
                    Some((m, meta)) => (m.clone(), meta.clone()),
                    None => {
                        let p = PathBuf::from(model);
                        let p = if p.is_absolute() { p } else { config_dir.join(p) };
                        if !p.exists() {
                            return Err(Error::Config(format!(
                                "controller {name:?}: model {model:?} is neither a configured model nor a file"
                            )));
                        }
                        let (m, meta) = AutoencoderModel::load(&p)?;
                        (Arc::new(m), meta)
                    }
                };
                (
                    ResolvedController {
                        name: name.clone(),
                        kind: ControllerKind::Latent {
                            model_name: model.clone(),
                            model: m,
                            dataset_scale: meta.dataset_scale,
                            scheme: *scheme,
                            mu_z: 0.0,
                            epsilon: epsilon.unwrap_or(DEFAULT_EPSILON),
                            denominator_mode: *denominator_mode,
                        },
                        tuning: None,
                    },
                    *mu_z,
                    grid.clone().unwrap_or_else(|| default_grid(*scheme)),
                )
            }
        };
        let resolved = match step {
            Some(s) => template.with_step_size(s),
            None => {
                if scenario.is_none() {
                    scenario = Some(tuning_scenario(config, paths)?);
                }
                tune_controller(config, scenario.as_ref().expect("just built"), &template, &grid)?
            }
        };
        out.push(resolved);
    }
    Ok(out)
}

/// Full run. Returns the report and the directory it was written to.
pub fn run_pipeline(config: &ExperimentConfig, config_dir: &Path, out: &Path) -> Result<MetricsReport> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let needs_models = !config.models.is_empty();
    let models = if needs_models {
        let ds = prepare_dataset(config, out)?;
        let key = std::fs::read_to_string(out.join("dataset.key"))?;
        prepare_models(config, &ds, key.trim(), out)?
    } else {
        BTreeMap::new()
    };
    let paths = secondary_paths(config)?;
    let controllers = resolve_controllers(config, config_dir, &models, &paths)?;
    log::info!("running {} trials", config.experiment.n_trials);
    let trials = run_trials(config, &paths, &controllers)?;
    let (report, means) = build_report(config, &controllers, &trials)?;
    write_outputs(out, &report, &means, &trials)?;
    Ok(report)
}
