//! Spectral-domain two-layer autoencoder.
//!
//! ```text
//! encoder: w -> rfft_concat -> E1 -> layernorm -> SiLU -> E2 -> z | (mean, logvar)
//! decoder: z -> D1 -> layernorm -> SiLU -> D2 -> irfft_concat -> w
//! ```
//!
//! Batched passes record a tape so parameter gradients can be accumulated by
//! reverse-mode sweeps. Single-vector helpers cover what the latent
//! controller needs at run time: `decode`, the decoder vector-Jacobian product
//! and, for verification, the forward-mode Jacobian-vector product.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Deref;
use std::path::Path;

use super::layers::{layernorm, layernorm_backward, silu, silu_grad, DenseLayer, NormCache};
use super::spectral::SpectralTransform;
use crate::anc::FilterWeights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Vae,
    Infovae,
}

impl Variant {
    pub fn is_variational(self) -> bool {
        !matches!(self, Variant::Plain)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Vae => "vae",
            Variant::Infovae => "infovae",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "vae" => Ok(Variant::Vae),
            "infovae" => Ok(Variant::Infovae),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

/// Latent state `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f64>);

impl Deref for LatentVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Encoder output. Variational models also report the log-variance head.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub mean: LatentVector,
    pub logvar: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub variant: Variant,
    pub filter_len: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub encoder_l1: DenseLayer,
    pub encoder_l2: DenseLayer,
    pub decoder_l1: DenseLayer,
    pub decoder_l2: DenseLayer,
    spectral: SpectralTransform,
}

/// Activations of a batched encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTape {
    spectra: Array2<f64>,
    normed: Array2<f64>,
    norm: NormCache,
    hidden: Array2<f64>,
    /// Raw `E2` output, n × k (plain) or n × 2k (mean then log-variance).
    pub out: Array2<f64>,
}

/// Activations of a batched decoder pass.
#[derive(Debug, Clone)]
pub struct DecoderTape {
    latent: Array2<f64>,
    normed: Array2<f64>,
    norm: NormCache,
    hidden: Array2<f64>,
    /// Decoded taps, n × L.
    pub out: Array2<f64>,
}

impl EncoderTape {
    pub fn rows(&self) -> usize {
        self.out.nrows()
    }

    /// Mean head, n × k.
    pub fn mean(&self, latent_dim: usize) -> ArrayView2<'_, f64> {
        self.out.slice(s![.., ..latent_dim])
    }

    /// Log-variance head of variational models, n × k.
    pub fn logvar(&self, latent_dim: usize) -> Option<ArrayView2<'_, f64>> {
        (self.out.ncols() == 2 * latent_dim).then(|| self.out.slice(s![.., latent_dim..]))
    }
}

/// Gradient of a scalar loss with respect to every layer, shaped like the
/// model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub encoder_l1: DenseLayer,
    pub encoder_l2: DenseLayer,
    pub decoder_l1: DenseLayer,
    pub decoder_l2: DenseLayer,
}

impl ModelGradients {
    pub fn layers(&self) -> [&DenseLayer; 4] {
        [&self.encoder_l1, &self.encoder_l2, &self.decoder_l1, &self.decoder_l2]
    }

    pub fn layers_mut(&mut self) -> [&mut DenseLayer; 4] {
        [
            &mut self.encoder_l1,
            &mut self.encoder_l2,
            &mut self.decoder_l1,
            &mut self.decoder_l2,
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(self.layers())
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in self.layers_mut() {
            layer.weight *= factor;
            layer.bias *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &ModelGradients) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|v| *v == 0.0)
    }
}

fn flatten_layers(layers: [&DenseLayer; 4]) -> Vec<f64> {
    let total: usize = layers.iter().map(|l| l.parameter_count()).sum();
    let mut out = Vec::with_capacity(total);
    for l in layers {
        out.extend(l.weight.iter());
        out.extend(l.bias.iter());
    }
    out
}

fn silu_map(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(silu)
}

impl AutoencoderModel {
    /// Fresh model with seeded uniform initialization.
    pub fn new(
        variant: Variant,
        filter_len: usize,
        hidden_dim: usize,
        latent_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let spectral = SpectralTransform::new(filter_len)?;
        if hidden_dim == 0 || latent_dim == 0 {
            return Err(Error::Config("hidden and latent sizes must be positive".into()));
        }
        let f = spectral.spectral_len();
        let head = if variant.is_variational() { 2 * latent_dim } else { latent_dim };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            variant,
            filter_len,
            hidden_dim,
            latent_dim,
            encoder_l1: DenseLayer::init(f, hidden_dim, &mut rng),
            encoder_l2: DenseLayer::init(hidden_dim, head, &mut rng),
            decoder_l1: DenseLayer::init(latent_dim, hidden_dim, &mut rng),
            decoder_l2: DenseLayer::init(hidden_dim, f, &mut rng),
            spectral,
        })
    }

    /// Assemble a model from explicit layers, validating every shape.
    pub fn from_layers(
        variant: Variant,
        filter_len: usize,
        layers: [DenseLayer; 4],
    ) -> Result<Self> {
        let spectral = SpectralTransform::new(filter_len)?;
        let f = spectral.spectral_len();
        let [e1, e2, d1, d2] = layers;
        let hidden_dim = e1.output_dim();
        let latent_dim = d1.input_dim();
        let head = if variant.is_variational() { 2 * latent_dim } else { latent_dim };
        let checks = [
            ("E1 input", f, e1.input_dim()),
            ("E2 input", hidden_dim, e2.input_dim()),
            ("E2 output", head, e2.output_dim()),
            ("D1 output", hidden_dim, d1.output_dim()),
            ("D2 input", hidden_dim, d2.input_dim()),
            ("D2 output", f, d2.output_dim()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Shape { what, expected, got });
            }
        }
        for l in [&e1, &e2, &d1, &d2] {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape {
                    what: "bias",
                    expected: l.output_dim(),
                    got: l.bias.len(),
                });
            }
        }
        Ok(Self {
            variant,
            filter_len,
            hidden_dim,
            latent_dim,
            encoder_l1: e1,
            encoder_l2: e2,
            decoder_l1: d1,
            decoder_l2: d2,
            spectral,
        })
    }

    pub fn spectral(&self) -> &SpectralTransform {
        &self.spectral
    }

    pub fn layers(&self) -> [&DenseLayer; 4] {
        [&self.encoder_l1, &self.encoder_l2, &self.decoder_l1, &self.decoder_l2]
    }

    pub fn layers_mut(&mut self) -> [&mut DenseLayer; 4] {
        [
            &mut self.encoder_l1,
            &mut self.encoder_l2,
            &mut self.decoder_l1,
            &mut self.decoder_l2,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.parameter_count()).sum()
    }

    /// All parameters in file order: E1.W, E1.b, E2.W, E2.b, D1.W, D1.b,
    /// D2.W, D2.b, weights row-major.
    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(self.layers())
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape {
                what: "parameter vector",
                expected: self.parameter_count(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in self.layers_mut() {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> ModelGradients {
        let z = |l: &DenseLayer| DenseLayer::zeros(l.input_dim(), l.output_dim());
        ModelGradients {
            encoder_l1: z(&self.encoder_l1),
            encoder_l2: z(&self.encoder_l2),
            decoder_l1: z(&self.decoder_l1),
            decoder_l2: z(&self.decoder_l2),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    fn check_len(&self, what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Shape { what, expected, got })
        }
    }

    /// Batched encoder pass over rows of `w` (n × L).
    pub fn encode_batch(&self, w: &ArrayView2<f64>) -> Result<EncoderTape> {
        self.check_len("filter taps", self.filter_len, w.ncols())?;
        let f = self.spectral.spectral_len();
        let mut spectra = Array2::zeros((w.nrows(), f));
        for (row, mut out) in w.rows().into_iter().zip(spectra.rows_mut()) {
            let s = match row.as_slice() {
                Some(sl) => self.spectral.rfft_concat(sl)?,
                None => self.spectral.rfft_concat(&row.to_vec())?,
            };
            out.assign(&ndarray::ArrayView1::from(&s));
        }
        let pre = self.encoder_l1.forward(&spectra.view());
        let (normed, norm) = layernorm(&pre.view());
        let hidden = silu_map(&normed);
        let out = self.encoder_l2.forward(&hidden.view());
        Ok(EncoderTape {
            spectra,
            normed,
            norm,
            hidden,
            out,
        })
    }

    /// Batched decoder pass over rows of `z` (n × k).
    pub fn decode_batch(&self, z: &ArrayView2<f64>) -> Result<DecoderTape> {
        self.check_len("latent vector", self.latent_dim, z.ncols())?;
        let pre = self.decoder_l1.forward(z);
        let (normed, norm) = layernorm(&pre.view());
        let hidden = silu_map(&normed);
        let spec = self.decoder_l2.forward(&hidden.view());
        let mut out = Array2::zeros((z.nrows(), self.filter_len));
        for (row, mut dst) in spec.rows().into_iter().zip(out.rows_mut()) {
            let w = self.spectral.irfft_concat(row.as_slice().expect("standard layout"))?;
            dst.assign(&ndarray::ArrayView1::from(&w));
        }
        Ok(DecoderTape {
            latent: z.to_owned(),
            normed,
            norm,
            hidden,
            out,
        })
    }

    /// Reverse sweep through the encoder. `d_out` is the loss gradient with
    /// respect to the raw `E2` output. Returns the gradient with respect to
    /// the time-domain input taps.
    pub fn encoder_backward(
        &self,
        tape: &EncoderTape,
        d_out: &ArrayView2<f64>,
        grads: &mut ModelGradients,
    ) -> Result<Array2<f64>> {
        if d_out.dim() != tape.out.dim() || tape.spectra.ncols() != self.spectral.spectral_len() {
            return Err(Error::Usage(format!(
                "encoder adjoint {:?} does not match the recorded pass {:?}",
                d_out.dim(),
                tape.out.dim()
            )));
        }
        let d_hidden = self
            .encoder_l2
            .backward(&tape.hidden.view(), d_out, &mut grads.encoder_l2);
        let mut d_normed = d_hidden;
        d_normed.zip_mut_with(&tape.normed, |d, &x| *d *= silu_grad(x));
        let d_pre = layernorm_backward(&tape.normed.view(), &tape.norm, &d_normed.view());
        let d_spec = self
            .encoder_l1
            .backward(&tape.spectra.view(), &d_pre.view(), &mut grads.encoder_l1);
        let mut d_w = Array2::zeros((d_spec.nrows(), self.filter_len));
        for (row, mut dst) in d_spec.rows().into_iter().zip(d_w.rows_mut()) {
            let v = self.spectral.rfft_adjoint(row.as_slice().expect("standard layout"))?;
            dst.assign(&ndarray::ArrayView1::from(&v));
        }
        Ok(d_w)
    }

    /// Reverse sweep through the decoder. `d_w` is the loss gradient with
    /// respect to the decoded taps. Returns the gradient with respect to `z`.
    pub fn decoder_backward(
        &self,
        tape: &DecoderTape,
        d_w: &ArrayView2<f64>,
        grads: &mut ModelGradients,
    ) -> Result<Array2<f64>> {
        if d_w.dim() != tape.out.dim() || tape.latent.ncols() != self.latent_dim {
            return Err(Error::Usage(format!(
                "decoder adjoint {:?} does not match the recorded pass {:?}",
                d_w.dim(),
                tape.out.dim()
            )));
        }
        let f = self.spectral.spectral_len();
        let mut d_spec = Array2::zeros((d_w.nrows(), f));
        for (row, mut dst) in d_w.rows().into_iter().zip(d_spec.rows_mut()) {
            let v = match row.as_slice() {
                Some(sl) => self.spectral.irfft_adjoint(sl)?,
                None => self.spectral.irfft_adjoint(&row.to_vec())?,
            };
            dst.assign(&ndarray::ArrayView1::from(&v));
        }
        let d_hidden = self
            .decoder_l2
            .backward(&tape.hidden.view(), &d_spec.view(), &mut grads.decoder_l2);
        let mut d_normed = d_hidden;
        d_normed.zip_mut_with(&tape.normed, |d, &x| *d *= silu_grad(x));
        let d_pre = layernorm_backward(&tape.normed.view(), &tape.norm, &d_normed.view());
        Ok(self
            .decoder_l1
            .backward(&tape.latent.view(), &d_pre.view(), &mut grads.decoder_l1))
    }

    /// Encode one filter. Variational models return both heads.
    pub fn encode(&self, w: &[f64]) -> Result<Encoding> {
        let view = ArrayView2::from_shape((1, w.len()), w).expect("contiguous slice");
        let tape = self.encode_batch(&view)?;
        let row = tape.out.row(0);
        let k = self.latent_dim;
        let mean = LatentVector(row.slice(s![..k]).to_vec());
        let logvar = self
            .variant
            .is_variational()
            .then(|| row.slice(s![k..]).to_vec());
        Ok(Encoding { mean, logvar })
    }

    /// Deterministic latent code: the mean head for variational models.
    pub fn encode_mean(&self, w: &[f64]) -> Result<LatentVector> {
        Ok(self.encode(w)?.mean)
    }

    pub fn decode(&self, z: &[f64]) -> Result<FilterWeights> {
        let view = ArrayView2::from_shape((1, z.len()), z).expect("contiguous slice");
        let tape = self.decode_batch(&view)?;
        Ok(FilterWeights(tape.out.index_axis(Axis(0), 0).to_vec()))
    }

    /// `Υ(z) v`: the decoder Jacobian (k × L, entry (i, j) = ∂w_j/∂z_i)
    /// applied to a tap-domain vector `v`.
    pub fn decoder_vjp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len("tap-domain vector", self.filter_len, v.len())?;
        let zv = ArrayView2::from_shape((1, z.len()), z).expect("contiguous slice");
        let tape = self.decode_batch(&zv)?;
        let dv = ArrayView2::from_shape((1, v.len()), v).expect("contiguous slice");
        let mut scratch = self.zero_gradients_decoder_only();
        let dz = self.decoder_backward(&tape, &dv, &mut scratch)?;
        let out = dz.into_raw_vec();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric(None, "decoder VJP produced a non-finite value"));
        }
        Ok(out)
    }

    // Encoder gradients are never touched by a decoder sweep; keep them empty.
    fn zero_gradients_decoder_only(&self) -> ModelGradients {
        let z = |l: &DenseLayer| DenseLayer::zeros(l.input_dim(), l.output_dim());
        ModelGradients {
            encoder_l1: DenseLayer::zeros(0, 0),
            encoder_l2: DenseLayer::zeros(0, 0),
            decoder_l1: z(&self.decoder_l1),
            decoder_l2: z(&self.decoder_l2),
        }
    }

    /// Forward-mode `Υ(z)ᵀ u`: directional derivative of the decoder at `z`
    /// along latent direction `u`.
    pub fn decoder_jvp(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_len("latent tangent", self.latent_dim, u.len())?;
        let zv = ArrayView2::from_shape((1, z.len()), z).expect("contiguous slice");
        let tape = self.decode_batch(&zv)?;
        let uv = ArrayView2::from_shape((1, u.len()), u).expect("contiguous slice");
        let d_pre = uv.dot(&self.decoder_l1.weight.t());
        let mut d_normed = layernorm_backward(&tape.normed.view(), &tape.norm, &d_pre.view());
        d_normed.zip_mut_with(&tape.normed, |d, &x| *d *= silu_grad(x));
        let d_spec = d_normed.dot(&self.decoder_l2.weight.t());
        self.spectral
            .irfft_concat(d_spec.as_slice().expect("standard layout"))
    }
}

/// Training provenance stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub init_seed: u64,
    #[serde(default)]
    pub train_seed: Option<u64>,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub mixup: bool,
    /// Global factor applied to dataset filters before training; decoded
    /// filters are divided by it to return to physical units.
    #[serde(default = "one")]
    pub dataset_scale: f64,
    #[serde(default)]
    pub final_loss: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelMetadata {
    fn default() -> Self {
        Self {
            init_seed: 0,
            train_seed: None,
            epochs: 0,
            learning_rate: None,
            mixup: false,
            dataset_scale: 1.0,
            final_loss: None,
        }
    }
}

pub const MODEL_FORMAT: &str = "lfxlms-autoencoder";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const LAYER_ORDER: [&str; 8] = ["E1.W", "E1.b", "E2.W", "E2.b", "D1.W", "D1.b", "D2.W", "D2.b"];

/// On-disk model: JSON manifest with the parameter blob embedded as
/// base-16 little-endian f64 values.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    variant: Variant,
    filter_len: usize,
    hidden_dim: usize,
    latent_dim: usize,
    layer_order: Vec<String>,
    metadata: ModelMetadata,
    parameter_count: usize,
    parameters_hex: String,
}

impl AutoencoderModel {
    pub fn to_json(&self, metadata: &ModelMetadata) -> Result<String> {
        let params = self.parameters();
        let mut bytes = Vec::with_capacity(params.len() * 8);
        for p in &params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            variant: self.variant,
            filter_len: self.filter_len,
            hidden_dim: self.hidden_dim,
            latent_dim: self.latent_dim,
            layer_order: LAYER_ORDER.iter().map(|s| s.to_string()).collect(),
            metadata: metadata.clone(),
            parameter_count: params.len(),
            parameters_hex: hex::encode(bytes),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<(Self, ModelMetadata)> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unexpected model format {:?}", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", file.version)));
        }
        if file.layer_order != LAYER_ORDER {
            return Err(Error::Format("unexpected layer order".into()));
        }
        let bytes = hex::decode(&file.parameters_hex)
            .map_err(|e| Error::Format(format!("parameter blob: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("parameter blob is not a whole number of f64".into()));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if params.len() != file.parameter_count {
            return Err(Error::Shape {
                what: "parameter blob",
                expected: file.parameter_count,
                got: params.len(),
            });
        }
        let mut model = AutoencoderModel::new(
            file.variant,
            file.filter_len,
            file.hidden_dim,
            file.latent_dim,
            0,
        )?;
        model.set_parameters(&params)?;
        if !model.is_finite() {
            return Err(Error::Format("model parameters are not finite".into()));
        }
        Ok((model, file.metadata))
    }

    pub fn save(&self, path: &Path, metadata: &ModelMetadata) -> Result<()> {
        std::fs::write(path, self.to_json(metadata)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ModelMetadata)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(variant: Variant, seed: u64) -> AutoencoderModel {
        AutoencoderModel::new(variant, 4, 3, 2, seed).unwrap()
    }

    fn zero_layers(f: usize, h: usize, k: usize, head: usize) -> [DenseLayer; 4] {
        [
            DenseLayer::zeros(f, h),
            DenseLayer::zeros(h, head),
            DenseLayer::zeros(k, h),
            DenseLayer::zeros(h, f),
        ]
    }

    #[test]
    fn zero_parameters_propagate_biases_only() {
        let mut layers = zero_layers(6, 3, 2, 2);
        layers[1].bias = array![0.25, -0.5];
        let m = AutoencoderModel::from_layers(Variant::Plain, 4, layers).unwrap();
        let z = m.encode_mean(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(z.0, vec![0.25, -0.5]);
    }

    #[test]
    fn zero_decoder_gives_zero_filter() {
        let m = AutoencoderModel::from_layers(Variant::Plain, 4, zero_layers(6, 3, 2, 2)).unwrap();
        assert_eq!(m.decode(&[0.3, -1.0]).unwrap().0, vec![0.0; 4]);
    }

    /// Encoder arithmetic written out with explicit loops.
    fn hand_encode(m: &AutoencoderModel, w: &[f64]) -> Vec<f64> {
        let n = w.len();
        let bins = n / 2 + 1;
        let mut spec = vec![0.0; 2 * bins];
        for k in 0..bins {
            for (t, v) in w.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                spec[k] += v * a.cos();
                spec[bins + k] += v * a.sin();
            }
        }
        let affine = |l: &DenseLayer, x: &[f64]| -> Vec<f64> {
            (0..l.output_dim())
                .map(|i| l.bias[i] + (0..x.len()).map(|j| l.weight[[i, j]] * x[j]).sum::<f64>())
                .collect()
        };
        let a = affine(&m.encoder_l1, &spec);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        let h: Vec<f64> = a
            .iter()
            .map(|v| {
                let x = (v - mean) / var.max(1e-5).sqrt();
                x / (1.0 + (-x).exp())
            })
            .collect();
        affine(&m.encoder_l2, &h)
    }

    fn hand_decode(m: &AutoencoderModel, z: &[f64]) -> Vec<f64> {
        let affine = |l: &DenseLayer, x: &[f64]| -> Vec<f64> {
            (0..l.output_dim())
                .map(|i| l.bias[i] + (0..x.len()).map(|j| l.weight[[i, j]] * x[j]).sum::<f64>())
                .collect()
        };
        let a = affine(&m.decoder_l1, z);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        let h: Vec<f64> = a
            .iter()
            .map(|v| {
                let x = (v - mean) / var.max(1e-5).sqrt();
                x / (1.0 + (-x).exp())
            })
            .collect();
        let s = affine(&m.decoder_l2, &h);
        // L = 4: bins 0..=2, real parts s[0..3], imaginary parts s[3..6].
        let n = 4;
        (0..n)
            .map(|t| {
                let tf = t as f64;
                let mut acc = s[0] + s[2] * (std::f64::consts::PI * tf).cos();
                let a = 2.0 * std::f64::consts::PI * tf / n as f64;
                acc += 2.0 * (s[1] * a.cos() - s[4] * a.sin());
                acc / n as f64
            })
            .collect()
    }

    #[test]
    fn tiny_model_matches_hand_arithmetic() {
        for variant in [Variant::Plain, Variant::Vae] {
            let m = tiny(variant, 9);
            let w = [0.3, -0.8, 1.1, 0.05];
            let enc = m.encode(&w).unwrap();
            let hand = hand_encode(&m, &w);
            for (a, b) in enc.mean.iter().zip(&hand[..2]) {
                assert!((a - b).abs() < 1e-12);
            }
            if let Some(lv) = enc.logvar {
                for (a, b) in lv.iter().zip(&hand[2..]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            let z = [0.4, -1.3];
            let dec = m.decode(&z).unwrap();
            for (a, b) in dec.iter().zip(hand_decode(&m, &z)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let m = tiny(Variant::Plain, 1);
        assert!(matches!(m.encode(&[0.0; 5]), Err(Error::Shape { .. })));
        assert!(matches!(m.decode(&[0.0; 3]), Err(Error::Shape { .. })));
        assert!(matches!(m.decoder_vjp(&[0.0; 2], &[0.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn vjp_of_zero_is_zero() {
        let m = tiny(Variant::Plain, 2);
        assert_eq!(m.decoder_vjp(&[0.2, 0.1], &[0.0; 4]).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let m = tiny(Variant::Plain, 3);
        let tape = m
            .decode_batch(&array![[0.1, 0.2], [0.3, 0.4]].view())
            .unwrap();
        let mut g = m.zero_gradients();
        let wrong = Array2::zeros((1, 4));
        assert!(matches!(
            m.decoder_backward(&tape, &wrong.view(), &mut g),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn model_file_round_trip_and_validation() {
        let m = tiny(Variant::Infovae, 4);
        let meta = ModelMetadata {
            init_seed: 4,
            dataset_scale: 2.5,
            ..ModelMetadata::default()
        };
        let text = m.to_json(&meta).unwrap();
        let (back, meta_back) = AutoencoderModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta_back, meta);

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["hidden_dim"] = serde_json::json!(5);
        assert!(AutoencoderModel::from_json(&v.to_string()).is_err());
    }
}
