//! Paired trials: every controller in a trial sees the same noise and the
//! same primary-path schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::sync::Arc;

use super::config::ExperimentConfig;
use crate::acoustics::{simulate_rir, ImpulseResponse, Point3};
use crate::anc::{
    generate_noise, run_anc_trial, Controller, ErrorTrace, FxLmsController, NoiseSource, PathChange,
    TrialSetup,
};
use crate::error::{Error, Result};
use crate::latent::{
    tune_step_size, DenominatorMode, LatentController, LatentScheme, TuningProbe, TuningScenario,
    TuningTrial,
};
use crate::neural::AutoencoderModel;
use crate::training::derive_seed;

/// Independent random streams derived from the master seed.
pub mod streams {
    pub const DATASET: u64 = 1;
    pub const G_HAT: u64 = 2;
    pub const TRIALS: u64 = 3;
    pub const TUNING: u64 = 4;
    pub const MODEL_INIT: u64 = 5;
    pub const MODEL_TRAIN: u64 = 6;
}

/// Secondary path and its estimate.
#[derive(Debug, Clone)]
pub struct SecondaryPaths {
    pub g: ImpulseResponse,
    pub g_hat: ImpulseResponse,
}

pub fn secondary_paths(config: &ExperimentConfig) -> Result<SecondaryPaths> {
    let g = simulate_rir(
        &config.room,
        &config.geometry.secondary_source,
        &config.geometry.error_mic,
    )?;
    let g_hat = g.perturbed(
        config.anc.g_hat_error,
        derive_seed(config.seed, streams::G_HAT),
    );
    Ok(SecondaryPaths { g, g_hat })
}

/// Inputs shared by all controllers in one trial.
#[derive(Debug, Clone)]
pub struct TrialRealization {
    pub index: usize,
    /// Segment parameters of the initial and post-switch positions.
    pub params: [f64; 2],
    pub positions: [Point3; 2],
    pub schedule: Vec<PathChange>,
    pub noise: Vec<f64>,
}

/// Draw trial `index` from the stream `stream`.
pub fn draw_trial(config: &ExperimentConfig, stream: u64, index: usize) -> Result<TrialRealization> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        derive_seed(config.seed, stream),
        index as u64,
    ));
    let params = [rng.gen::<f64>(), rng.gen::<f64>()];
    let noise_seed = rng.gen::<u64>();
    let positions = params.map(|t| config.geometry.point_on_segment(t));
    let mic = &config.geometry.error_mic;
    let t = &config.experiment;
    let schedule = vec![
        PathChange {
            block: 0,
            path: simulate_rir(&config.room, &positions[0], mic)?,
        },
        PathChange {
            block: t.switch_block,
            path: simulate_rir(&config.room, &positions[1], mic)?,
        },
    ];
    let noise = generate_noise(
        &NoiseSource::white(config.anc.noise_variance, noise_seed),
        TrialSetup::samples_needed(t.n_blocks, t.block_size, config.preroll()),
    )?;
    Ok(TrialRealization {
        index,
        params,
        positions,
        schedule,
        noise,
    })
}

/// SHA-256 over everything a trial consumes: noise, primary-path schedule,
/// secondary paths and block layout.
pub fn realization_hash(setup: &TrialSetup<'_>) -> String {
    let mut h = Sha256::new();
    let mut put = |v: &[f64]| {
        for x in v {
            h.update(x.to_le_bytes());
        }
    };
    put(setup.noise);
    for c in setup.schedule {
        put(&[c.block as f64]);
        put(&c.path.taps);
    }
    put(&setup.g.taps);
    put(&setup.g_hat.taps);
    put(&[setup.n_blocks as f64, setup.block_size as f64, setup.preroll as f64]);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub enum ControllerKind {
    Fxlms {
        mu: f64,
    },
    Latent {
        model_name: String,
        model: Arc<AutoencoderModel>,
        dataset_scale: f64,
        scheme: LatentScheme,
        mu_z: f64,
        epsilon: f64,
        denominator_mode: DenominatorMode,
    },
}

/// A controller with a concrete step size, ready to instantiate per trial.
#[derive(Debug, Clone)]
pub struct ResolvedController {
    pub name: String,
    pub kind: ControllerKind,
    /// Probe outcomes when the step size was tuned.
    pub tuning: Option<Vec<TuningProbe>>,
}

impl ResolvedController {
    pub fn step_size(&self) -> f64 {
        match &self.kind {
            ControllerKind::Fxlms { mu } => *mu,
            ControllerKind::Latent { mu_z, .. } => *mu_z,
        }
    }

    pub fn with_step_size(&self, step: f64) -> Self {
        let mut out = self.clone();
        match &mut out.kind {
            ControllerKind::Fxlms { mu } => *mu = step,
            ControllerKind::Latent { mu_z, .. } => *mu_z = step,
        }
        out
    }

    pub fn build(&self, filter_len: usize, epsilon: f64) -> Result<Box<dyn Controller + Send>> {
        Ok(match &self.kind {
            ControllerKind::Fxlms { mu } => Box::new(FxLmsController::new(filter_len, *mu, epsilon)?),
            ControllerKind::Latent {
                model,
                dataset_scale,
                scheme,
                mu_z,
                epsilon,
                denominator_mode,
                ..
            } => {
                if model.filter_len != filter_len {
                    return Err(Error::Config(format!(
                        "controller {:?}: model has {} taps, room has {filter_len}",
                        self.name, model.filter_len
                    )));
                }
                Box::new(
                    LatentController::new(model.clone(), *dataset_scale, *scheme, *mu_z, *epsilon)?
                        .with_denominator_mode(*denominator_mode),
                )
            }
        })
    }
}

fn setup<'a>(
    config: &ExperimentConfig,
    paths: &'a SecondaryPaths,
    trial: &'a TrialRealization,
    divergence_limit: Option<f64>,
) -> TrialSetup<'a> {
    TrialSetup {
        schedule: &trial.schedule,
        g: &paths.g,
        g_hat: &paths.g_hat,
        noise: &trial.noise,
        n_blocks: config.experiment.n_blocks,
        block_size: config.experiment.block_size,
        preroll: config.preroll(),
        divergence_limit,
    }
}

/// The ANC-off reference: zero weights, no adaptation.
pub fn anc_off_trace(
    config: &ExperimentConfig,
    paths: &SecondaryPaths,
    trial: &TrialRealization,
) -> Result<ErrorTrace> {
    let mut off = FxLmsController::new(config.room.rir_length, 0.0, config.anc.epsilon)?;
    run_anc_trial(&setup(config, paths, trial, None), &mut off)
}

/// Probe trials for step-size tuning, drawn from their own stream.
pub fn tuning_scenario(config: &ExperimentConfig, paths: &SecondaryPaths) -> Result<TuningScenario> {
    let trials = (0..config.experiment.tuning_trials.max(1))
        .into_par_iter()
        .map(|i| {
            let t = draw_trial(config, streams::TUNING, i)?;
            let off = anc_off_trace(config, paths, &t)?;
            let level = off.block_mse.iter().sum::<f64>() / off.len() as f64;
            Ok(TuningTrial {
                schedule: t.schedule,
                noise: t.noise,
                anc_off_level: level,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TuningScenario {
        trials,
        g: paths.g.clone(),
        g_hat: paths.g_hat.clone(),
        n_blocks: config.experiment.n_blocks,
        block_size: config.experiment.block_size,
        preroll: config.preroll(),
    })
}

/// Pick the largest stable step size from `grid` for `template`.
pub fn tune_controller(
    config: &ExperimentConfig,
    scenario: &TuningScenario,
    template: &ResolvedController,
    grid: &[f64],
) -> Result<ResolvedController> {
    let len = config.room.rir_length;
    let eps = config.anc.epsilon;
    let factory = |mu: f64| -> Result<Box<dyn Controller>> {
        let c = template.with_step_size(mu).build(len, eps)?;
        Ok(c)
    };
    let (mu, probes) = tune_step_size(factory, scenario, grid)
        .map_err(|e| match e {
            Error::Tuning(msg) => Error::Tuning(format!("{}: {msg}", template.name)),
            other => other,
        })?;
    log::info!("tuned {}: step size {mu}", template.name);
    let mut out = template.with_step_size(mu);
    out.tuning = Some(probes);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ControllerRun {
    pub result: std::result::Result<ErrorTrace, String>,
    pub realization: String,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub index: usize,
    pub positions: [Point3; 2],
    pub realization: String,
    pub anc_off: ErrorTrace,
    /// One entry per controller, in configuration order.
    pub runs: Vec<ControllerRun>,
}

/// Run every controller on every trial. Trials run in parallel; results come
/// back in trial order.
pub fn run_trials(
    config: &ExperimentConfig,
    paths: &SecondaryPaths,
    controllers: &[ResolvedController],
) -> Result<Vec<TrialOutcome>> {
    let len = config.room.rir_length;
    let eps = config.anc.epsilon;
    (0..config.experiment.n_trials)
        .into_par_iter()
        .map(|i| {
            let trial = draw_trial(config, streams::TRIALS, i)?;
            let base = setup(config, paths, &trial, None);
            let realization = realization_hash(&base);
            let anc_off = anc_off_trace(config, paths, &trial)?;
            let mut runs = Vec::with_capacity(controllers.len());
            for c in controllers {
                let s = setup(config, paths, &trial, None);
                let hash = realization_hash(&s);
                let result = c
                    .build(len, eps)
                    .and_then(|mut ctl| run_anc_trial(&s, ctl.as_mut()))
                    .map_err(|e| e.to_string());
                if let Err(e) = &result {
                    log::warn!("trial {i}, controller {}: {e}", c.name);
                }
                runs.push(ControllerRun {
                    result,
                    realization: hash,
                });
            }
            Ok(TrialOutcome {
                index: i,
                positions: trial.positions,
                realization,
                anc_off,
                runs,
            })
        })
        .collect()
}
