use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{objective, reconstruction_loss, BatchNoise, LossTerms, LossWeights, ObjectiveSpec};
use crate::error::{Error, Result};
use crate::neural::AutoencoderModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    /// Mixed pairs drawn per batch.
    pub mixup_count: usize,
    pub mixup: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,
    pub kernel_variance: f64,
    pub info_alpha: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            mixup_count: 256,
            mixup: false,
            epochs: 500,
            learning_rate: 1e-3,
            loss_weights: LossWeights::default(),
            kernel_variance: 0.01,
            info_alpha: 1.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.kernel_variance > 0.0) {
            return Err(Error::Config("kernel_variance must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn objective_spec(&self) -> ObjectiveSpec {
        ObjectiveSpec {
            weights: self.loss_weights.clone(),
            kernel_variance: self.kernel_variance,
            info_alpha: self.info_alpha,
            mixup: self.mixup,
        }
    }
}

/// Adam with bias-corrected moment estimates over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

/// Indices `(train, validation)`: every tenth row is held out.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    if n < 10 {
        return ((0..n).collect(), Vec::new());
    }
    (0..n).partition(|i| i % 10 != 9)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Batch-averaged terms over the epoch.
    pub train: LossTerms,
    pub validation_recon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub history: Vec<EpochLoss>,
    pub final_train_recon: f64,
    pub final_validation_recon: Option<f64>,
}

/// Consecutive chunks of `size`; a trailing single row joins the previous
/// chunk, since MMD and mixup need two rows per batch.
fn batch_slices(idx: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    let n = idx.len();
    let mut cut: Vec<usize> = (0..n).step_by(size).collect();
    if n % size == 1 && cut.len() > 1 {
        cut.pop();
    }
    cut.push(n);
    (0..cut.len() - 1).map(move |i| &idx[cut[i]..cut[i + 1]])
}

/// Train `model` in place on rows of `data` (already in training units).
pub fn train(
    model: &mut AutoencoderModel,
    data: &ArrayView2<f64>,
    config: &TrainingConfig,
) -> Result<TrainingReport> {
    config.validate()?;
    if data.ncols() != model.filter_len {
        return Err(Error::Shape {
            what: "training rows",
            expected: model.filter_len,
            got: data.ncols(),
        });
    }
    let (mut train_idx, val_idx) = split_indices(data.nrows());
    if train_idx.is_empty() {
        return Err(Error::Config("no training rows".into()));
    }
    let val = data.select(Axis(0), &val_idx);
    let spec = config.objective_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.parameter_count(), config.learning_rate);
    let mut params = model.parameters();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        let mut batches = 0usize;
        for (b, idx) in batch_slices(&train_idx, config.batch_size).enumerate() {
            let batch = data.select(Axis(0), idx);
            let noise = BatchNoise::sample(
                model.variant,
                model.latent_dim,
                batch.nrows(),
                config.mixup.then_some(config.mixup_count),
                &mut rng,
            )?;
            let mut spec_b = spec.clone();
            spec_b.mixup = noise.mixup.is_some();
            let mut grads = model.zero_gradients();
            let terms = objective(model, &batch.view(), &spec_b, &noise, Some(&mut grads))
                .map_err(|e| match e {
                    Error::Numeric { msg, .. } => Error::numeric(
                        None,
                        format!("{msg} (epoch {epoch}, batch {b})"),
                    ),
                    other => other,
                })?;
            let flat = grads.flatten();
            if flat.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(
                    None,
                    format!("non-finite gradient (epoch {epoch}, batch {b})"),
                ));
            }
            adam.step(&mut params, &flat);
            model.set_parameters(&params)?;
            sum.total += terms.total;
            sum.recon += terms.recon;
            sum.kl += terms.kl;
            sum.mmd += terms.mmd;
            sum.mixup_c += terms.mixup_c;
            sum.mixup_z += terms.mixup_z;
            batches += 1;
        }
        let inv = 1.0 / batches as f64;
        let train = LossTerms {
            total: sum.total * inv,
            recon: sum.recon * inv,
            kl: sum.kl * inv,
            mmd: sum.mmd * inv,
            mixup_c: sum.mixup_c * inv,
            mixup_z: sum.mixup_z * inv,
        };
        let validation_recon = if val.nrows() > 0 {
            Some(reconstruction_loss(model, &val.view())?)
        } else {
            None
        };
        if epoch % 100 == 0 || epoch + 1 == config.epochs {
            log::info!(
                "{} epoch {epoch}: loss {:.4e} recon {:.4e}",
                model.variant.as_str(),
                train.total,
                train.recon
            );
        }
        history.push(EpochLoss {
            epoch,
            train,
            validation_recon,
        });
    }
    let train_rows = data.select(Axis(0), &train_idx);
    Ok(TrainingReport {
        history,
        final_train_recon: reconstruction_loss(model, &train_rows.view())?,
        final_validation_recon: if val.nrows() > 0 {
            Some(reconstruction_loss(model, &val.view())?)
        } else {
            None
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_single_row_joins_previous_batch() {
        let idx: Vec<usize> = (0..9).collect();
        let sizes: Vec<usize> = batch_slices(&idx, 4).map(|b| b.len()).collect();
        assert_eq!(sizes, [4, 5]);
        let sizes: Vec<usize> = batch_slices(&idx[..8], 4).map(|b| b.len()).collect();
        assert_eq!(sizes, [4, 4]);
        let sizes: Vec<usize> = batch_slices(&idx[..1], 4).map(|b| b.len()).collect();
        assert_eq!(sizes, [1]);
        let sizes: Vec<usize> = batch_slices(&idx[..3], 1).map(|b| b.len()).collect();
        assert_eq!(sizes, [1, 1, 1]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut adam = Adam::new(1, 0.05);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn stride_split() {
        let (tr, va) = split_indices(25);
        assert_eq!(va, vec![9, 19]);
        assert_eq!(tr.len(), 23);
        assert_eq!(split_indices(3).1, Vec::<usize>::new());
    }
}
