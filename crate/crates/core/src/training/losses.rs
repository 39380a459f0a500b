//! Training objectives and their exact gradients.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{AutoencoderModel, ModelGradients, Variant};

/// Mean over all entries of `(D(E(w)) − w)²`, using the mean head.
pub fn reconstruction_loss(model: &AutoencoderModel, batch: &ArrayView2<f64>) -> Result<f64> {
    let enc = model.encode_batch(batch)?;
    let z = enc.mean(model.latent_dim).to_owned();
    let dec = model.decode_batch(&z.view())?;
    Ok(mse(&dec.out.view(), batch))
}

fn mse(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Gaussian KL against N(0, I), summed over latent coordinates and averaged
/// over rows.
pub fn kl_loss(mean: &ArrayView2<f64>, logvar: &ArrayView2<f64>) -> Result<f64> {
    if mean.dim() != logvar.dim() {
        return Err(Error::Shape {
            what: "log-variance head",
            expected: mean.len(),
            got: logvar.len(),
        });
    }
    let rows = mean.nrows().max(1) as f64;
    let total: f64 = mean
        .iter()
        .zip(logvar.iter())
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum();
    Ok(total / rows)
}

fn kernel(a: &[f64], b: &[f64], kernel_variance: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * kernel_variance)).exp()
}

fn row(m: &ArrayView2<f64>, i: usize) -> Vec<f64> {
    m.row(i).to_vec()
}

/// Unbiased MMD² estimate with a Gaussian kernel of the given variance.
pub fn mmd_loss(
    samples: &ArrayView2<f64>,
    prior: &ArrayView2<f64>,
    kernel_variance: f64,
) -> Result<f64> {
    Ok(mmd_with_gradient(samples, prior, kernel_variance, false)?.0)
}

/// MMD² and, optionally, its gradient with respect to `samples`.
fn mmd_with_gradient(
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    kernel_variance: f64,
    want_grad: bool,
) -> Result<(f64, Array2<f64>)> {
    let (m, n) = (x.nrows(), y.nrows());
    if m < 2 || n < 2 {
        return Err(Error::Domain(format!(
            "unbiased MMD needs at least 2 samples per set, got {m} and {n}"
        )));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::Shape {
            what: "MMD sample dimension",
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    if !(kernel_variance > 0.0) {
        return Err(Error::Domain("kernel variance must be positive".into()));
    }
    let xs: Vec<Vec<f64>> = (0..m).map(|i| row(x, i)).collect();
    let ys: Vec<Vec<f64>> = (0..n).map(|i| row(y, i)).collect();
    let cxx = 1.0 / (m * (m - 1)) as f64;
    let cyy = 1.0 / (n * (n - 1)) as f64;
    let cxy = 2.0 / (m * n) as f64;
    let mut grad = Array2::zeros(if want_grad { x.dim() } else { (0, 0) });
    let mut sxx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let k = kernel(&xs[i], &xs[j], kernel_variance);
            sxx += k;
            if want_grad {
                // Pair (i, j) and (j, i) both depend on x_i.
                for d in 0..x.ncols() {
                    grad[[i, d]] -= 2.0 * cxx * k * (xs[i][d] - xs[j][d]) / kernel_variance;
                }
            }
        }
    }
    let mut syy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                syy += kernel(&ys[i], &ys[j], kernel_variance);
            }
        }
    }
    let mut sxy = 0.0;
    for i in 0..m {
        for j in 0..n {
            let k = kernel(&xs[i], &ys[j], kernel_variance);
            sxy += k;
            if want_grad {
                for d in 0..x.ncols() {
                    grad[[i, d]] += cxy * k * (xs[i][d] - ys[j][d]) / kernel_variance;
                }
            }
        }
    }
    Ok((cxx * sxx + cyy * syy - cxy * sxy, grad))
}

/// Pair indices and mixing weights for the convex-combination losses.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupDraws {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub gamma: Vec<f64>,
}

impl MixupDraws {
    pub fn sample<R: Rng>(batch_len: usize, count: usize, rng: &mut R) -> Result<Self> {
        if batch_len < 2 {
            return Err(Error::Domain(format!(
                "mixup needs a batch of at least 2 rows, got {batch_len}"
            )));
        }
        let mut d = Self {
            first: Vec::with_capacity(count),
            second: Vec::with_capacity(count),
            gamma: Vec::with_capacity(count),
        };
        for _ in 0..count {
            d.first.push(rng.gen_range(0..batch_len));
            d.second.push(rng.gen_range(0..batch_len));
            d.gamma.push(rng.gen::<f64>());
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    fn mixed(&self, batch: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), batch.ncols()));
        for (r, mut dst) in out.rows_mut().into_iter().enumerate() {
            let g = self.gamma[r];
            let a = batch.row(self.first[r]);
            let b = batch.row(self.second[r]);
            dst.zip_mut_with(&a, |d, &x| *d = g * x);
            dst.zip_mut_with(&b, |d, &y| *d += (1.0 - g) * y);
        }
        out
    }
}

/// `(L_C, L_z)` for a fixed set of draws. `L_C` is the mean squared
/// reconstruction error of the mixed filters; `L_z` the mean over draws of
/// `‖γE(w₁) + (1−γ)E(w₂) − E(γw₁ + (1−γ)w₂)‖²` with the mean head as `E`.
pub fn mixup_losses_with(
    model: &AutoencoderModel,
    batch: &ArrayView2<f64>,
    draws: &MixupDraws,
) -> Result<(f64, f64)> {
    if batch.nrows() < 2 {
        return Err(Error::Domain("mixup needs a batch of at least 2 rows".into()));
    }
    let k = model.latent_dim;
    let enc = model.encode_batch(batch)?;
    let mu = enc.mean(k);
    let mixed = draws.mixed(batch);
    let enc_m = model.encode_batch(&mixed.view())?;
    let zm = enc_m.mean(k).to_owned();
    let dec_m = model.decode_batch(&zm.view())?;
    let lc = mse(&dec_m.out.view(), &mixed.view());
    let mut lz = 0.0;
    for r in 0..draws.len() {
        let g = draws.gamma[r];
        for d in 0..k {
            let t = g * mu[[draws.first[r], d]] + (1.0 - g) * mu[[draws.second[r], d]] - zm[[r, d]];
            lz += t * t;
        }
    }
    Ok((lc, lz / draws.len().max(1) as f64))
}

/// Draws `count` mixup triples from a seeded stream, then evaluates both
/// losses.
pub fn mixup_losses(
    model: &AutoencoderModel,
    batch: &ArrayView2<f64>,
    count: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let draws = MixupDraws::sample(batch.nrows(), count, &mut rng)?;
    mixup_losses_with(model, batch, &draws)
}

/// Relative weights of the objective's terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    /// λ of the MMD term.
    pub mmd: f64,
    pub mixup_c: f64,
    pub mixup_z: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            kl: 1.0,
            mmd: 1000.0,
            mixup_c: 1.0,
            mixup_z: 1.0,
        }
    }
}

/// Scalar settings the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub weights: LossWeights,
    pub kernel_variance: f64,
    pub info_alpha: f64,
    pub mixup: bool,
}

impl ObjectiveSpec {
    /// Coefficients `(kl, mmd)` for a variant. InfoVAE uses
    /// `(1 − α)·KL + (α + λ − 1)·MMD`.
    pub fn divergence_coefficients(&self, variant: Variant) -> (f64, f64) {
        match variant {
            Variant::Plain => (0.0, 0.0),
            Variant::Vae => (self.weights.kl, 0.0),
            Variant::Infovae => (
                (1.0 - self.info_alpha) * self.weights.kl,
                self.info_alpha + self.weights.mmd - 1.0,
            ),
        }
    }
}

/// Random inputs of one objective evaluation, fixed up front so the
/// objective is a deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNoise {
    /// Reparameterization noise, n × k (variational models).
    pub eta: Option<Array2<f64>>,
    /// Prior samples for MMD, n × k (InfoVAE).
    pub prior: Option<Array2<f64>>,
    pub mixup: Option<MixupDraws>,
}

impl BatchNoise {
    pub fn none() -> Self {
        Self {
            eta: None,
            prior: None,
            mixup: None,
        }
    }

    pub fn sample<R: Rng>(
        variant: Variant,
        latent_dim: usize,
        batch_len: usize,
        mixup_count: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut gauss = |rows: usize| {
            Array2::from_shape_fn((rows, latent_dim), |_| rng.sample::<f64, _>(StandardNormal))
        };
        let eta = variant.is_variational().then(|| gauss(batch_len));
        let prior = matches!(variant, Variant::Infovae).then(|| gauss(batch_len));
        let mixup = match mixup_count {
            Some(count) if batch_len >= 2 => Some(MixupDraws::sample(batch_len, count, rng)?),
            _ => None,
        };
        Ok(Self { eta, prior, mixup })
    }
}

/// Individual terms of one objective evaluation, unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub mmd: f64,
    pub mixup_c: f64,
    pub mixup_z: f64,
}

/// Evaluate the full objective on one batch and, if `grads` is given,
/// accumulate its parameter gradient.
pub fn objective(
    model: &AutoencoderModel,
    batch: &ArrayView2<f64>,
    spec: &ObjectiveSpec,
    noise: &BatchNoise,
    mut grads: Option<&mut ModelGradients>,
) -> Result<LossTerms> {
    let n = batch.nrows();
    let k = model.latent_dim;
    let l = model.filter_len;
    if n == 0 {
        return Err(Error::Domain("empty training batch".into()));
    }
    let (kl_coef, mmd_coef) = spec.divergence_coefficients(model.variant);
    let enc = model.encode_batch(batch)?;
    let mean = enc.mean(k).to_owned();
    let logvar = enc.logvar(k).map(|v| v.to_owned());

    let z = match (&logvar, &noise.eta) {
        (Some(lv), Some(eta)) => {
            if eta.dim() != (n, k) {
                return Err(Error::Shape {
                    what: "reparameterization noise",
                    expected: n * k,
                    got: eta.len(),
                });
            }
            &mean + &(lv.mapv(|v| (0.5 * v).exp()) * eta)
        }
        (Some(_), None) => {
            return Err(Error::Usage("variational objective needs reparameterization noise".into()))
        }
        _ => mean.clone(),
    };
    let dec = model.decode_batch(&z.view())?;
    let mut terms = LossTerms {
        recon: mse(&dec.out.view(), batch),
        ..LossTerms::default()
    };
    terms.total = spec.weights.recon * terms.recon;

    let mut d_mean = Array2::<f64>::zeros((n, k));
    let mut d_logvar = Array2::<f64>::zeros((n, k));
    let mut d_z = Array2::<f64>::zeros((n, k));

    if let Some(g) = grads.as_deref_mut() {
        let c = 2.0 * spec.weights.recon / (n * l) as f64;
        let d_w = (&dec.out - batch) * c;
        d_z += &model.decoder_backward(&dec, &d_w.view(), g)?;
    }

    if let Some(lv) = &logvar {
        terms.kl = kl_loss(&mean.view(), &lv.view())?;
        terms.total += kl_coef * terms.kl;
        if grads.is_some() && kl_coef != 0.0 {
            let c = kl_coef / n as f64;
            d_mean.scaled_add(c, &mean);
            d_logvar += &lv.mapv(|v| 0.5 * c * (v.exp() - 1.0));
        }
    }

    if matches!(model.variant, Variant::Infovae) {
        let prior = noise
            .prior
            .as_ref()
            .ok_or_else(|| Error::Usage("InfoVAE objective needs prior samples".into()))?;
        let (value, g) = mmd_with_gradient(&z.view(), &prior.view(), spec.kernel_variance, grads.is_some())?;
        terms.mmd = value;
        terms.total += mmd_coef * value;
        if grads.is_some() {
            d_z.scaled_add(mmd_coef, &g);
        }
    }

    let mut enc_out_grad = None;
    if spec.mixup {
        let draws = noise
            .mixup
            .as_ref()
            .ok_or_else(|| Error::Usage("mixup objective needs mixup draws".into()))?;
        let mixed = draws.mixed(batch);
        let enc_m = model.encode_batch(&mixed.view())?;
        let zm = enc_m.mean(k).to_owned();
        let dec_m = model.decode_batch(&zm.view())?;
        let m = draws.len();
        terms.mixup_c = mse(&dec_m.out.view(), &mixed.view());
        let mut resid = Array2::<f64>::zeros((m, k));
        for r in 0..m {
            let g = draws.gamma[r];
            for d in 0..k {
                resid[[r, d]] = g * mean[[draws.first[r], d]] + (1.0 - g) * mean[[draws.second[r], d]]
                    - zm[[r, d]];
            }
        }
        terms.mixup_z = resid.iter().map(|v| v * v).sum::<f64>() / m as f64;
        terms.total += spec.weights.mixup_c * terms.mixup_c + spec.weights.mixup_z * terms.mixup_z;

        if let Some(gr) = grads.as_deref_mut() {
            let c = 2.0 * spec.weights.mixup_c / (m * l) as f64;
            let d_w = (&dec_m.out - &mixed) * c;
            let mut d_zm = model.decoder_backward(&dec_m, &d_w.view(), gr)?;
            let cz = 2.0 * spec.weights.mixup_z / m as f64;
            d_zm.scaled_add(-cz, &resid);
            for r in 0..m {
                let g = draws.gamma[r];
                for d in 0..k {
                    d_mean[[draws.first[r], d]] += cz * g * resid[[r, d]];
                    d_mean[[draws.second[r], d]] += cz * (1.0 - g) * resid[[r, d]];
                }
            }
            let mut d_out_m = Array2::zeros(enc_m.out.dim());
            d_out_m.slice_mut(s![.., ..k]).assign(&d_zm);
            enc_out_grad = Some((enc_m, d_out_m));
        }
    }

    if !terms.total.is_finite() {
        return Err(Error::numeric(None, "training loss is not finite"));
    }

    if let Some(g) = grads {
        if let Some((enc_m, d_out_m)) = enc_out_grad {
            model.encoder_backward(&enc_m, &d_out_m.view(), g)?;
        }
        // z = mean + exp(logvar / 2) · η
        d_mean += &d_z;
        if let (Some(lv), Some(eta)) = (&logvar, &noise.eta) {
            let mut t = d_z.clone();
            t.zip_mut_with(lv, |a, &v| *a *= 0.5 * (0.5 * v).exp());
            t *= eta;
            d_logvar += &t;
        }
        let mut d_out = Array2::zeros(enc.out.dim());
        d_out.slice_mut(s![.., ..k]).assign(&d_mean);
        if logvar.is_some() {
            d_out.slice_mut(s![.., k..]).assign(&d_logvar);
        }
        model.encoder_backward(&enc, &d_out.view(), g)?;
    }
    Ok(terms)
}

/// Rows of `m` selected by `idx`.
pub fn select_rows(m: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kl_closed_forms() {
        let z = Array2::zeros((3, 4));
        assert_eq!(kl_loss(&z.view(), &z.view()).unwrap(), 0.0);
        let m = array![[1.0]];
        let lv = array![[0.0]];
        assert_eq!(kl_loss(&m.view(), &lv.view()).unwrap(), 0.5);
    }

    #[test]
    fn mmd_point_masses_by_hand() {
        // Two points per set: x = {0, 0}, y = {d, d} in one dimension.
        let d: f64 = 0.1;
        let var = 0.01;
        let x = array![[0.0], [0.0]];
        let y = array![[d], [d]];
        let kxy = (-d * d / (2.0 * var)).exp();
        let expected = 1.0 + 1.0 - 2.0 * kxy;
        let got = mmd_loss(&x.view(), &y.view(), var).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn mmd_needs_two_samples() {
        let a = array![[0.0, 1.0]];
        let b = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(matches!(mmd_loss(&a.view(), &b.view(), 0.01), Err(Error::Domain(_))));
    }

    #[test]
    fn mixup_requires_two_rows() {
        let m = AutoencoderModel::new(Variant::Plain, 4, 3, 2, 0).unwrap();
        let b = array![[1.0, 0.0, 0.0, 0.0]];
        assert!(matches!(mixup_losses(&m, &b.view(), 8, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn infovae_weighting() {
        let spec = ObjectiveSpec {
            weights: LossWeights::default(),
            kernel_variance: 0.01,
            info_alpha: 1.0,
            mixup: false,
        };
        assert_eq!(spec.divergence_coefficients(Variant::Infovae), (0.0, 1000.0));
        assert_eq!(spec.divergence_coefficients(Variant::Vae), (1.0, 0.0));
    }
}
