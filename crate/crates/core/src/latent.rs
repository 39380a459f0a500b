//! Latent FxLMS: the adaptive filter is `w = D(z) / s`, and adaptation moves
//! `z` by pulling the FxLMS gradient back through the decoder.
//!
//! With `s` the dataset scale, the chain rule gives `∂w/∂z = Υ(z) / s`, so
//! every tap-domain gradient is divided by `s` before the vector-Jacobian
//! product.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::anc::{run_anc_trial, Block, Controller, FilterWeights, PathChange, DEFAULT_EPSILON, DIVERGENCE_FACTOR};
use crate::acoustics::ImpulseResponse;
use crate::error::{ensure_finite, Error, Result};
use crate::neural::{AutoencoderModel, LatentVector, ModelMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentScheme {
    /// Normalize the tap-domain gradient, then pull it back.
    Data,
    /// Pull back the raw gradient, then normalize in latent space.
    Latent,
}

/// How the latent-normalized denominator is evaluated inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenominatorMode {
    /// One VJP on the block's final filtered-reference vector.
    #[default]
    Blockend,
    /// One VJP per sample; each sample's term has its own denominator.
    Persample,
}

/// Controller config file: `{"scheme", "mu_z", "epsilon", "model", "denominator_mode"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentControllerConfig {
    pub scheme: LatentScheme,
    pub mu_z: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub model: PathBuf,
    #[serde(default)]
    pub denominator_mode: DenominatorMode,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl LatentControllerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Load the referenced model (relative paths resolve against `base`).
    pub fn load_model(&self, base: &Path) -> Result<(AutoencoderModel, ModelMetadata)> {
        let path = if self.model.is_absolute() {
            self.model.clone()
        } else {
            base.join(&self.model)
        };
        AutoencoderModel::load(&path)
    }
}

/// What the latent controller needs from a decoder: a forward map and its
/// vector-Jacobian product.
pub trait LatentDecoder: std::fmt::Debug + Send + Sync {
    fn latent_dim(&self) -> usize;
    fn filter_len(&self) -> usize;
    fn decode(&self, z: &[f64]) -> Result<FilterWeights>;
    /// `Υ(z) v` for a tap-domain vector `v`.
    fn vjp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>>;
}

impl LatentDecoder for AutoencoderModel {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn filter_len(&self) -> usize {
        self.filter_len
    }

    fn decode(&self, z: &[f64]) -> Result<FilterWeights> {
        AutoencoderModel::decode(self, z)
    }

    fn vjp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.decoder_vjp(z, v)
    }
}

/// `w = A z` with `A` stored as an L × k matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    pub matrix: Array2<f64>,
}

impl LinearDecoder {
    pub fn new(matrix: Array2<f64>) -> Self {
        Self { matrix }
    }

    fn check(&self, what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Shape { what, expected, got })
        }
    }
}

impl LatentDecoder for LinearDecoder {
    fn latent_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn filter_len(&self) -> usize {
        self.matrix.nrows()
    }

    fn decode(&self, z: &[f64]) -> Result<FilterWeights> {
        self.check("latent vector", self.latent_dim(), z.len())?;
        Ok(FilterWeights(self.matrix.dot(&ArrayView1::from(z)).to_vec()))
    }

    fn vjp(&self, _z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check("tap-domain vector", self.filter_len(), v.len())?;
        Ok(self.matrix.t().dot(&ArrayView1::from(v)).to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct LatentController {
    decoder: Arc<dyn LatentDecoder>,
    z: LatentVector,
    pub scheme: LatentScheme,
    pub mu_z: f64,
    pub epsilon: f64,
    pub denominator_mode: DenominatorMode,
    dataset_scale: f64,
    weights: FilterWeights,
}

impl LatentController {
    /// Start from `z₀ = E(0)` (mean head).
    pub fn new(
        model: Arc<AutoencoderModel>,
        dataset_scale: f64,
        scheme: LatentScheme,
        mu_z: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let z = init_latent(&model)?;
        Self::from_decoder(model, z, dataset_scale, scheme, mu_z, epsilon)
    }

    /// Controller over an arbitrary decoder, starting at `z0`.
    pub fn from_decoder(
        decoder: Arc<dyn LatentDecoder>,
        z0: LatentVector,
        dataset_scale: f64,
        scheme: LatentScheme,
        mu_z: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(mu_z >= 0.0 && mu_z.is_finite()) {
            return Err(Error::Config(format!("latent step size must be >= 0, got {mu_z}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(dataset_scale > 0.0 && dataset_scale.is_finite()) {
            return Err(Error::Config("dataset scale must be positive".into()));
        }
        if z0.len() != decoder.latent_dim() {
            return Err(Error::Shape {
                what: "latent vector",
                expected: decoder.latent_dim(),
                got: z0.len(),
            });
        }
        let mut c = Self {
            decoder,
            z: z0,
            scheme,
            mu_z,
            epsilon,
            denominator_mode: DenominatorMode::Blockend,
            dataset_scale,
            weights: FilterWeights(Vec::new()),
        };
        c.refresh()?;
        Ok(c)
    }

    pub fn with_denominator_mode(mut self, mode: DenominatorMode) -> Self {
        self.denominator_mode = mode;
        self
    }

    pub fn latent(&self) -> &LatentVector {
        &self.z
    }

    pub fn decoder(&self) -> &dyn LatentDecoder {
        self.decoder.as_ref()
    }

    pub fn dataset_scale(&self) -> f64 {
        self.dataset_scale
    }

    /// Replace the latent state and re-decode the active weights.
    pub fn set_latent(&mut self, z: LatentVector) -> Result<()> {
        if z.len() != self.decoder.latent_dim() {
            return Err(Error::Shape {
                what: "latent vector",
                expected: self.decoder.latent_dim(),
                got: z.len(),
            });
        }
        self.z = z;
        self.refresh()
    }

    /// `D(z) / s`, the filter in physical units.
    pub fn current_weights(&self) -> &FilterWeights {
        &self.weights
    }

    fn refresh(&mut self) -> Result<()> {
        let mut w = self.decoder.decode(&self.z)?;
        let inv = 1.0 / self.dataset_scale;
        w.iter_mut().for_each(|v| *v *= inv);
        ensure_finite(&w, None, "decoded weights")?;
        self.weights = w;
        Ok(())
    }

    fn pull_back(&self, v: &[f64]) -> Result<Vec<f64>> {
        let inv = 1.0 / self.dataset_scale;
        let scaled: Vec<f64> = v.iter().map(|x| x * inv).collect();
        self.decoder.vjp(&self.z, &scaled)
    }

    /// Latent step for one block without applying it.
    pub fn latent_step(&self, block: &Block) -> Result<Vec<f64>> {
        block.check_finite()?;
        if block.is_empty() {
            return Ok(vec![0.0; self.decoder.latent_dim()]);
        }
        let step = match self.scheme {
            LatentScheme::Data => {
                let g = block.normalized_gradient(self.epsilon);
                self.pull_back(&g)?
            }
            LatentScheme::Latent => match self.denominator_mode {
                DenominatorMode::Blockend => {
                    let u = self.pull_back(&block.mean_gradient())?;
                    let last = block.xhat_row(block.len() - 1);
                    let d = squared_norm(&self.pull_back(last)?) + self.epsilon;
                    u.iter().map(|x| x / d).collect()
                }
                DenominatorMode::Persample => {
                    let k = self.decoder.latent_dim();
                    let mut acc = vec![0.0; k];
                    for (e, x) in block.rows() {
                        let j = self.pull_back(x)?;
                        let d = squared_norm(&j) + self.epsilon;
                        for (a, v) in acc.iter_mut().zip(&j) {
                            *a += e * v / d;
                        }
                    }
                    let inv = 1.0 / block.len() as f64;
                    acc.iter().map(|a| a * inv).collect()
                }
            },
        };
        ensure_finite(&step, Some(block.index), "latent gradient")?;
        Ok(step)
    }
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `z₀ = E(0)` using the mean head.
pub fn init_latent(model: &AutoencoderModel) -> Result<LatentVector> {
    model.encode_mean(&vec![0.0; model.filter_len])
}

impl Controller for LatentController {
    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn update(&mut self, block: &Block) -> Result<()> {
        if self.mu_z == 0.0 {
            return Ok(());
        }
        let step = self.latent_step(block)?;
        let z: Vec<f64> = self
            .z
            .iter()
            .zip(&step)
            .map(|(z, s)| z - self.mu_z * s)
            .collect();
        ensure_finite(&z, Some(block.index), "latent state")?;
        self.z = LatentVector(z);
        self.refresh().map_err(|e| e.at_block(block.index))
    }
}

/// Probe trials shared by every step-size candidate.
#[derive(Debug, Clone)]
pub struct TuningScenario {
    pub trials: Vec<TuningTrial>,
    pub g: ImpulseResponse,
    pub g_hat: ImpulseResponse,
    pub n_blocks: usize,
    pub block_size: usize,
    pub preroll: usize,
}

#[derive(Debug, Clone)]
pub struct TuningTrial {
    pub schedule: Vec<PathChange>,
    pub noise: Vec<f64>,
    /// Mean block MSE with the controller switched off.
    pub anc_off_level: f64,
}

/// Outcome of one candidate in [`tune_step_size`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningProbe {
    pub step_size: f64,
    pub stable: bool,
}

/// Largest positive grid value for which no probe trial diverges (block MSE
/// above 10× the ANC-off level, or a numeric failure).
pub fn tune_step_size<F>(
    factory: F,
    scenario: &TuningScenario,
    grid: &[f64],
) -> Result<(f64, Vec<TuningProbe>)>
where
    F: Fn(f64) -> Result<Box<dyn Controller>>,
{
    let mut candidates: Vec<f64> = grid.iter().copied().filter(|m| *m > 0.0).collect();
    if candidates.is_empty() {
        return Err(Error::Tuning("step-size grid has no positive value".into()));
    }
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let mut probes = Vec::new();
    for mu in candidates {
        let mut stable = true;
        for t in &scenario.trials {
            let mut ctl = factory(mu)?;
            let setup = crate::anc::TrialSetup {
                schedule: &t.schedule,
                g: &scenario.g,
                g_hat: &scenario.g_hat,
                noise: &t.noise,
                n_blocks: scenario.n_blocks,
                block_size: scenario.block_size,
                preroll: scenario.preroll,
                divergence_limit: Some(DIVERGENCE_FACTOR * t.anc_off_level),
            };
            match run_anc_trial(&setup, ctl.as_mut()) {
                Ok(_) => {}
                Err(Error::Instability { .. } | Error::Numeric { .. }) => {
                    stable = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        probes.push(TuningProbe {
            step_size: mu,
            stable,
        });
        if stable {
            return Ok((mu, probes));
        }
    }
    Err(Error::Tuning(format!(
        "every candidate diverged: {:?}",
        probes.iter().map(|p| p.step_size).collect::<Vec<_>>()
    )))
}

/// Default grids: log-spaced over [0.05, 0.3] for the latent-normalized
/// scheme and [5, 100] for the data-normalized one.
pub fn default_grid(scheme: LatentScheme) -> Vec<f64> {
    let (lo, hi): (f64, f64) = match scheme {
        LatentScheme::Latent => (0.05, 0.3),
        LatentScheme::Data => (5.0, 100.0),
    };
    let n = 8;
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}
