//! Single-channel feedforward ANC simulation with a normalized block FxLMS
//! controller.
//!
//! The error microphone hears `e = p*x + g*y` where `y = w*x` is the control
//! signal actually emitted by the speaker. The controller sees the reference
//! filtered through the secondary-path estimate, `x̂ = ĝ*x`, and updates its
//! weights once per block from the block's errors and `x̂` vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::ops::{Deref, DerefMut};
use std::path::{Path, PathBuf};

use crate::acoustics::ImpulseResponse;
use crate::error::{ensure_finite, Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_BLOCK_SIZE: usize = 100;
/// Block MSE above this multiple of the ANC-off level counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Adaptive FIR filter taps, newest-input tap first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterWeights(pub Vec<f64>);

impl FilterWeights {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for FilterWeights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for FilterWeights {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    WhiteGaussian,
    /// Whitespace-separated decimal samples.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default = "default_variance")]
    pub variance: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_variance() -> f64 {
    1.0
}

impl NoiseSource {
    pub fn white(variance: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::WhiteGaussian,
            variance,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Draw `n_samples` reference samples. White noise is reproducible from the
/// seed; file noise returns the first `n_samples` values of the file.
pub fn generate_noise(src: &NoiseSource, n_samples: usize) -> Result<Vec<f64>> {
    match &src.kind {
        NoiseKind::WhiteGaussian => {
            if !(src.variance.is_finite() && src.variance > 0.0) {
                return Err(Error::Domain(format!(
                    "noise variance must be > 0, got {}",
                    src.variance
                )));
            }
            let normal = Normal::new(0.0, src.variance.sqrt())
                .map_err(|e| Error::Domain(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(src.seed);
            Ok((0..n_samples).map(|_| normal.sample(&mut rng)).collect())
        }
        NoiseKind::File { path } => {
            let file = std::fs::File::open(path)?;
            let mut out = Vec::with_capacity(n_samples);
            'lines: for line in std::io::BufReader::new(file).lines() {
                for tok in line?.split_whitespace() {
                    if out.len() == n_samples {
                        break 'lines;
                    }
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::Format(format!("bad noise sample {tok:?}")))?;
                    out.push(v);
                }
            }
            if out.len() < n_samples {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    format!(
                        "noise file {} holds {} samples, {} requested",
                        path.display(),
                        out.len(),
                        n_samples
                    ),
                )));
            }
            Ok(out)
        }
    }
}

/// Fixed-length signal history; `latest()` yields the last `len` samples
/// newest first as one contiguous slice.
#[derive(Debug, Clone)]
pub struct History {
    buf: Vec<f64>,
    head: usize,
    len: usize,
}

impl History {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "history length must be positive");
        Self {
            buf: vec![0.0; 2 * len],
            head: 0,
            len,
        }
    }

    pub fn push(&mut self, v: f64) {
        self.head = if self.head == 0 { self.len - 1 } else { self.head - 1 };
        self.buf[self.head] = v;
        self.buf[self.head + self.len] = v;
    }

    pub fn latest(&self) -> &[f64] {
        &self.buf[self.head..self.head + self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Error-microphone sample from histories of the reference `x` and of the
/// emitted control signal `y`, both newest first.
pub fn mic_sample(p: &ImpulseResponse, g: &ImpulseResponse, x_history: &[f64], y_history: &[f64]) -> f64 {
    dot(&p.taps, x_history) + dot(&g.taps, y_history)
}

/// `x̂_n = ĝᵀ x_n` over the latest input samples.
pub fn filtered_reference(g_hat: &ImpulseResponse, x_history: &[f64]) -> f64 {
    dot(&g_hat.taps, x_history)
}

/// One block of adaptation data: `B` error samples and the matching
/// filtered-reference vectors, stored row-major.
#[derive(Debug, Clone)]
pub struct Block {
    pub index: usize,
    pub filter_len: usize,
    pub errors: Vec<f64>,
    pub xhat: Vec<f64>,
}

impl Block {
    pub fn new(index: usize, filter_len: usize) -> Self {
        Self {
            index,
            filter_len,
            errors: Vec::new(),
            xhat: Vec::new(),
        }
    }

    pub fn push(&mut self, error: f64, xhat_vector: &[f64]) {
        debug_assert_eq!(xhat_vector.len(), self.filter_len);
        self.errors.push(error);
        self.xhat.extend_from_slice(xhat_vector);
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn xhat_row(&self, n: usize) -> &[f64] {
        &self.xhat[n * self.filter_len..(n + 1) * self.filter_len]
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.errors
            .iter()
            .copied()
            .zip(self.xhat.chunks_exact(self.filter_len))
    }

    pub fn mse(&self) -> f64 {
        self.errors.iter().map(|e| e * e).sum::<f64>() / self.errors.len().max(1) as f64
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        ensure_finite(&self.errors, Some(self.index), "error block")?;
        ensure_finite(&self.xhat, Some(self.index), "filtered reference")
    }

    /// Block average of the normalized FxLMS gradient,
    /// `(1/B) Σ e_n x̂_n / (ε + ‖x̂_n‖²)`.
    pub fn normalized_gradient(&self, epsilon: f64) -> Vec<f64> {
        let mut acc = vec![0.0; self.filter_len];
        for (e, x) in self.rows() {
            let scale = e / (epsilon + dot(x, x));
            for (a, xi) in acc.iter_mut().zip(x) {
                *a += scale * xi;
            }
        }
        let inv = 1.0 / self.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }

    /// Block average of the raw gradient `(1/B) Σ e_n x̂_n`.
    pub fn mean_gradient(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.filter_len];
        for (e, x) in self.rows() {
            for (a, xi) in acc.iter_mut().zip(x) {
                *a += e * xi;
            }
        }
        let inv = 1.0 / self.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }
}

/// Normalized block FxLMS step:
/// `w ← w − μ (1/B) Σ e_n x̂_n / (ε + ‖x̂_n‖²)`.
pub fn fxlms_block_update(
    weights: &FilterWeights,
    step_size: f64,
    epsilon: f64,
    block: &Block,
) -> Result<FilterWeights> {
    if weights.len() != block.filter_len {
        return Err(Error::Shape {
            what: "filtered-reference vector",
            expected: weights.len(),
            got: block.filter_len,
        });
    }
    block.check_finite()?;
    let grad = block.normalized_gradient(epsilon);
    let next: Vec<f64> = weights
        .iter()
        .zip(&grad)
        .map(|(w, g)| w - step_size * g)
        .collect();
    ensure_finite(&next, Some(block.index), "filter weights")?;
    Ok(FilterWeights(next))
}

/// An adaptive controller driven by the ANC loop: it exposes the weights to
/// use for the next block and consumes each finished block.
pub trait Controller {
    fn weights(&self) -> &[f64];
    fn update(&mut self, block: &Block) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct FxLmsController {
    pub weights: FilterWeights,
    pub step_size: f64,
    pub epsilon: f64,
}

impl FxLmsController {
    pub fn new(filter_len: usize, step_size: f64, epsilon: f64) -> Result<Self> {
        if !(step_size.is_finite() && step_size >= 0.0) {
            return Err(Error::Config(format!("step size must be >= 0, got {step_size}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(Self {
            weights: FilterWeights::zeros(filter_len),
            step_size,
            epsilon,
        })
    }
}

impl Controller for FxLmsController {
    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn update(&mut self, block: &Block) -> Result<()> {
        if self.step_size == 0.0 {
            return Ok(());
        }
        self.weights = fxlms_block_update(&self.weights, self.step_size, self.epsilon, block)?;
        Ok(())
    }
}

/// Sample-by-sample acoustic plant: histories of `x`, `y` and `x̂`.
#[derive(Debug, Clone)]
pub struct Plant {
    x: History,
    y: History,
    xhat: History,
}

impl Plant {
    pub fn new(filter_len: usize) -> Self {
        Self {
            x: History::new(filter_len),
            y: History::new(filter_len),
            xhat: History::new(filter_len),
        }
    }

    /// Advance one sample with control weights `w`; returns `e_n`.
    pub fn step(
        &mut self,
        x_n: f64,
        w: &[f64],
        p: &ImpulseResponse,
        g: &ImpulseResponse,
        g_hat: &ImpulseResponse,
    ) -> f64 {
        self.x.push(x_n);
        let xs = self.x.latest();
        let y_n = dot(w, xs);
        let xhat_n = filtered_reference(g_hat, xs);
        self.y.push(y_n);
        self.xhat.push(xhat_n);
        mic_sample(p, g, self.x.latest(), self.y.latest())
    }

    pub fn xhat_vector(&self) -> &[f64] {
        self.xhat.latest()
    }
}

/// Per-block mean squared error of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub block_mse: Vec<f64>,
    pub block_size: usize,
    pub sample_rate: f64,
}

impl ErrorTrace {
    pub fn len(&self) -> usize {
        self.block_mse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_mse.is_empty()
    }

    /// Sub-trace over `range` of blocks.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ErrorTrace {
        ErrorTrace {
            block_mse: self.block_mse[range].to_vec(),
            block_size: self.block_size,
            sample_rate: self.sample_rate,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "block,mse")?;
        for (i, m) in self.block_mse.iter().enumerate() {
            writeln!(out, "{i},{m:e}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    pub fn read_csv<R: BufRead>(input: R, block_size: usize, sample_rate: f64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim) != Some("block,mse") {
            return Err(Error::Format("trace csv must start with `block,mse`".into()));
        }
        let mut block_mse = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (idx, mse) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad trace row {line:?}")))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad block index {idx:?}")))?;
            if idx != row {
                return Err(Error::Format(format!("expected block {row}, found {idx}")));
            }
            let mse: f64 = mse
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad mse {mse:?}")))?;
            block_mse.push(mse);
        }
        Ok(Self {
            block_mse,
            block_size,
            sample_rate,
        })
    }
}

/// Primary-path schedule entry: from `block` onward the primary path is `path`.
#[derive(Debug, Clone)]
pub struct PathChange {
    pub block: usize,
    pub path: ImpulseResponse,
}

/// Fixed inputs of one ANC trial.
#[derive(Debug, Clone)]
pub struct TrialSetup<'a> {
    pub schedule: &'a [PathChange],
    pub g: &'a ImpulseResponse,
    pub g_hat: &'a ImpulseResponse,
    /// Reference samples, `preroll + n_blocks * block_size` long.
    pub noise: &'a [f64],
    pub n_blocks: usize,
    pub block_size: usize,
    /// Warm-up samples run before block 0 with frozen initial weights so the
    /// acoustic paths are filled when recording starts.
    pub preroll: usize,
    /// Abort with [`Error::Instability`] when a block MSE exceeds this.
    pub divergence_limit: Option<f64>,
}

impl TrialSetup<'_> {
    pub fn samples_needed(n_blocks: usize, block_size: usize, preroll: usize) -> usize {
        preroll + n_blocks * block_size
    }
}

/// Simulate a trial; returns the per-block MSE trace.
///
/// Weights are frozen inside a block and the controller updates at each block
/// boundary. The primary path swaps at the blocks listed in the schedule.
pub fn run_anc_trial(setup: &TrialSetup<'_>, controller: &mut dyn Controller) -> Result<ErrorTrace> {
    let first = setup
        .schedule
        .first()
        .ok_or_else(|| Error::Config("primary-path schedule is empty".into()))?;
    if first.block != 0 {
        return Err(Error::Config("primary-path schedule must start at block 0".into()));
    }
    if setup.block_size == 0 {
        return Err(Error::Config("block size must be >= 1".into()));
    }
    let len = controller.weights().len();
    for (what, ir) in [("secondary path", setup.g), ("secondary-path estimate", setup.g_hat)] {
        if ir.len() != len {
            return Err(Error::Config(format!(
                "{what} has {} taps, filter has {len}",
                ir.len()
            )));
        }
    }
    for change in setup.schedule {
        if change.path.len() != len {
            return Err(Error::Config(format!(
                "primary path has {} taps, filter has {len}",
                change.path.len()
            )));
        }
    }
    let needed = TrialSetup::samples_needed(setup.n_blocks, setup.block_size, setup.preroll);
    if setup.noise.len() < needed {
        return Err(Error::Config(format!(
            "trial needs {needed} noise samples, got {}",
            setup.noise.len()
        )));
    }

    let mut plant = Plant::new(len);
    let mut p = &first.path;
    let mut next_change = 1;
    let mut w = controller.weights().to_vec();
    for &x in &setup.noise[..setup.preroll] {
        plant.step(x, &w, p, setup.g, setup.g_hat);
    }

    let mut block_mse = Vec::with_capacity(setup.n_blocks);
    let mut offset = setup.preroll;
    for k in 0..setup.n_blocks {
        while next_change < setup.schedule.len() && setup.schedule[next_change].block <= k {
            p = &setup.schedule[next_change].path;
            next_change += 1;
        }
        w.copy_from_slice(controller.weights());
        let mut block = Block::new(k, len);
        block.errors.reserve(setup.block_size);
        block.xhat.reserve(setup.block_size * len);
        for &x in &setup.noise[offset..offset + setup.block_size] {
            let e = plant.step(x, &w, p, setup.g, setup.g_hat);
            block.push(e, plant.xhat_vector());
        }
        offset += setup.block_size;
        let mse = block.mse();
        if !mse.is_finite() {
            return Err(Error::numeric(Some(k), "block mse is not finite"));
        }
        if let Some(limit) = setup.divergence_limit {
            if mse > limit {
                return Err(Error::Instability { block: k, mse, limit });
            }
        }
        block_mse.push(mse);
        controller.update(&block).map_err(|e| e.at_block(k))?;
    }
    Ok(ErrorTrace {
        block_mse,
        block_size: setup.block_size,
        sample_rate: first.path.sample_rate,
    })
}

/// Stop rule for [`converge_filter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopConfig {
    pub max_blocks: usize,
    /// Relative change between consecutive trailing-window means.
    pub tol: f64,
    pub window: usize,
    pub block_size: usize,
    pub epsilon: f64,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            max_blocks: 1000,
            tol: 1e-3,
            window: 40,
            block_size: DEFAULT_BLOCK_SIZE,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Run FxLMS from zero weights on a static primary path until the trailing
/// block-MSE window settles or `max_blocks` elapse; returns the final weights.
pub fn converge_filter(
    p: &ImpulseResponse,
    g: &ImpulseResponse,
    g_hat: &ImpulseResponse,
    noise: &NoiseSource,
    step_size: f64,
    stop: &StopConfig,
) -> Result<FilterWeights> {
    let len = p.len();
    if stop.window == 0 || stop.block_size == 0 {
        return Err(Error::Config("stop window and block size must be >= 1".into()));
    }
    let preroll = 2 * len;
    let x = generate_noise(noise, preroll + stop.max_blocks * stop.block_size)?;
    let mut ctl = FxLmsController::new(len, step_size, stop.epsilon)?;
    let mut plant = Plant::new(len);
    for &xn in &x[..preroll] {
        plant.step(xn, &ctl.weights, p, g, g_hat);
    }

    let mut history: Vec<f64> = Vec::with_capacity(stop.max_blocks);
    let mut anc_off = None;
    let mut offset = preroll;
    let mut w = ctl.weights.0.clone();
    for k in 0..stop.max_blocks {
        w.copy_from_slice(&ctl.weights);
        let mut block = Block::new(k, len);
        for &xn in &x[offset..offset + stop.block_size] {
            let e = plant.step(xn, &w, p, g, g_hat);
            block.push(e, plant.xhat_vector());
        }
        offset += stop.block_size;
        let mse = block.mse();
        if !mse.is_finite() {
            return Err(Error::numeric(Some(k), "block mse is not finite"));
        }
        // Block 0 runs with zero weights, i.e. ANC off.
        let off = *anc_off.get_or_insert(mse);
        if off > 0.0 && mse > DIVERGENCE_FACTOR * off {
            return Err(Error::Instability {
                block: k,
                mse,
                limit: DIVERGENCE_FACTOR * off,
            });
        }
        history.push(mse);
        ctl.update(&block).map_err(|e| e.at_block(k))?;

        let n = history.len();
        if n >= 2 * stop.window {
            let recent = history[n - stop.window..].iter().sum::<f64>();
            let before = history[n - 2 * stop.window..n - stop.window].iter().sum::<f64>();
            if before > 0.0 && ((recent - before) / before).abs() < stop.tol {
                break;
            }
            if before == 0.0 && recent == 0.0 {
                break;
            }
        }
    }
    Ok(ctl.weights)
}
