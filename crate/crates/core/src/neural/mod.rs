//! Autoencoder over adaptive-filter weights.

pub mod layers;
pub mod model;
pub mod spectral;

pub use layers::{DenseLayer, LAYERNORM_FLOOR};
pub use model::{
    AutoencoderModel, DecoderTape, EncoderTape, Encoding, LatentVector, ModelGradients,
    ModelMetadata, Variant,
};
pub use spectral::SpectralTransform;
