use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

/// Variance floor of the layer normalization.
pub const LAYERNORM_FLOOR: f64 = 1e-5;

/// Fully connected layer `y = W x + b` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform in ±sqrt(1 / fan_in) for weights and biases.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        let weight = Array2::from_shape_fn((output, input), |_| rng.gen_range(-bound..=bound));
        let bias = Array1::from_shape_fn(output, |_| rng.gen_range(-bound..=bound));
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Row-batched forward pass, `x` is n × in.
    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulate parameter gradients for upstream `dy` and return `dx`.
    pub fn backward(
        &self,
        x: &ArrayView2<f64>,
        dy: &ArrayView2<f64>,
        grad: &mut DenseLayer,
    ) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Per-row statistics recorded by [`layernorm`] for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub inv_std: Array1<f64>,
    /// Rows whose variance fell below the floor.
    pub clamped: Vec<bool>,
}

/// Row-wise normalization to zero mean and unit variance, without affine
/// parameters. The variance is floored at [`LAYERNORM_FLOOR`].
pub fn layernorm(x: &ArrayView2<f64>) -> (Array2<f64>, NormCache) {
    let cols = x.ncols() as f64;
    let mut out = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    let mut clamped = vec![false; x.nrows()];
    for ((mut row, inv), flag) in out
        .rows_mut()
        .into_iter()
        .zip(inv_std.iter_mut())
        .zip(clamped.iter_mut())
    {
        let mean = row.sum() / cols;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / cols;
        *flag = var < LAYERNORM_FLOOR;
        let s = 1.0 / var.max(LAYERNORM_FLOOR).sqrt();
        *inv = s;
        row.mapv_inplace(|v| v * s);
    }
    (out, NormCache { inv_std, clamped })
}

/// Single-vector convenience wrapper around [`layernorm`].
pub fn layernorm_vec(v: &[f64]) -> Vec<f64> {
    let view = ArrayView2::from_shape((1, v.len()), v).expect("contiguous slice");
    layernorm(&view).0.into_raw_vec()
}

/// Backward pass of [`layernorm`]. The Jacobian is symmetric, so the same
/// map also pushes forward tangents.
pub fn layernorm_backward(
    normalized: &ArrayView2<f64>,
    cache: &NormCache,
    dy: &ArrayView2<f64>,
) -> Array2<f64> {
    let cols = normalized.ncols() as f64;
    let mut dx = dy.to_owned();
    for (((mut dxr, yr), &s), &clamped) in dx
        .rows_mut()
        .into_iter()
        .zip(normalized.rows())
        .zip(cache.inv_std.iter())
        .zip(cache.clamped.iter())
    {
        let mean_dy = dxr.sum() / cols;
        // A clamped row is plain centering times a constant.
        let mean_dy_y = if clamped {
            0.0
        } else {
            dxr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / cols
        };
        for (d, y) in dxr.iter_mut().zip(yr.iter()) {
            *d = s * (*d - mean_dy - y * mean_dy_y);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn silu_values() {
        assert_eq!(silu(0.0), 0.0);
        assert!((silu(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((silu(-30.0)).abs() < 1e-11);
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layernorm_moments() {
        let v = [0.3, -1.2, 4.5, 2.0, 0.0, 7.1];
        let y = layernorm_vec(&v);
        let mean = y.iter().sum::<f64>() / 6.0;
        let var = y.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layernorm_floor_on_constant_rows() {
        let y = layernorm_vec(&[2.0, 2.0, 2.0]);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layernorm_backward_matches_difference() {
        let x = array![[0.4, -1.0, 2.5, 0.3], [1e-4, 2e-4, -1e-4, 0.0]];
        let dy = array![[0.2, 0.1, -0.7, 1.3], [1.0, -0.5, 0.25, 2.0]];
        let (y, s) = layernorm(&x.view());
        let dx = layernorm_backward(&y.view(), &s, &dy.view());
        let h = 1e-7;
        for r in 0..2 {
            for c in 0..4 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fp = (&layernorm(&xp.view()).0 * &dy).sum();
                let fm = (&layernorm(&xm.view()).0 * &dy).sum();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - dx[[r, c]]).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", dx[[r, c]]);
            }
        }
    }

    #[test]
    fn dense_backward_matches_manual() {
        let layer = DenseLayer {
            weight: array![[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]],
            bias: array![0.1, 0.2, 0.3],
        };
        let x = array![[1.0, -1.0]];
        let y = layer.forward(&x.view());
        assert_eq!(y, array![[-0.9, 1.7, -2.7]]);
        let dy = array![[1.0, 0.0, 2.0]];
        let mut grad = DenseLayer::zeros(2, 3);
        let dx = layer.backward(&x.view(), &dy.view(), &mut grad);
        assert_eq!(dx, array![[1.0, 8.0]]);
        assert_eq!(grad.weight, array![[1.0, -1.0], [0.0, 0.0], [2.0, -2.0]]);
        assert_eq!(grad.bias, array![1.0, 0.0, 2.0]);
    }
}
