//! Converged-filter dataset construction and autoencoder training.

pub mod dataset;
pub mod losses;
pub mod train;

pub use dataset::{
    derive_seed, generate_dataset, DatasetAncConfig, DatasetRecord, FilterDataset, Geometry,
};
pub use losses::{
    kl_loss, mixup_losses, mixup_losses_with, mmd_loss, objective, reconstruction_loss,
    BatchNoise, LossTerms, LossWeights, MixupDraws, ObjectiveSpec,
};
pub use train::{split_indices, train, Adam, EpochLoss, TrainingConfig, TrainingReport};
