//! Real-FFT representation of filter taps as one real vector:
//! `[Re X_0 .. Re X_{L/2}, Im X_0 .. Im X_{L/2}]`.
//!
//! Both directions are linear maps. The inverse ignores the imaginary slots
//! of the DC and Nyquist bins (the projection onto Hermitian spectra), and
//! the adjoints of both maps are provided for reverse-mode differentiation.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone)]
pub struct SpectralTransform {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralTransform").field("len", &self.len).finish()
    }
}

impl PartialEq for SpectralTransform {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len
    }
}

/// Length of the concatenated spectrum for `filter_len` taps.
pub fn spectral_len(filter_len: usize) -> usize {
    2 * (filter_len / 2 + 1)
}

impl SpectralTransform {
    pub fn new(filter_len: usize) -> Result<Self> {
        if filter_len == 0 || filter_len % 2 != 0 {
            return Err(Error::Domain(format!(
                "spectral transform needs an even, positive length, got {filter_len}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len: filter_len,
            forward: planner.plan_fft_forward(filter_len),
            inverse: planner.plan_fft_inverse(filter_len),
        })
    }

    pub fn filter_len(&self) -> usize {
        self.len
    }

    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    pub fn spectral_len(&self) -> usize {
        2 * self.bins()
    }

    fn check(&self, what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Shape { what, expected, got })
        }
    }

    /// Taps to concatenated one-sided spectrum.
    pub fn rfft_concat(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check("filter taps", self.len, w.len())?;
        let mut buf: Vec<Complex64> = w.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let bins = self.bins();
        let mut out = vec![0.0; 2 * bins];
        for k in 0..bins {
            out[k] = buf[k].re;
            out[bins + k] = buf[k].im;
        }
        // Exactly zero for real input; rounding noise otherwise.
        out[bins] = 0.0;
        out[2 * bins - 1] = 0.0;
        Ok(out)
    }

    /// Concatenated spectrum to taps via the Hermitian extension.
    pub fn irfft_concat(&self, s: &[f64]) -> Result<Vec<f64>> {
        let bins = self.bins();
        self.check("spectral vector", 2 * bins, s.len())?;
        let n = self.len;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(s[0], 0.0);
        buf[n / 2] = Complex64::new(s[bins - 1], 0.0);
        for k in 1..bins - 1 {
            let c = Complex64::new(s[k], s[bins + k]);
            buf[k] = c;
            buf[n - k] = c.conj();
        }
        self.inverse.process(&mut buf);
        let inv = 1.0 / n as f64;
        Ok(buf.iter().map(|c| c.re * inv).collect())
    }

    /// Transpose of [`irfft_concat`](Self::irfft_concat): maps a tap-domain
    /// cotangent to the spectral cotangent.
    pub fn irfft_adjoint(&self, dw: &[f64]) -> Result<Vec<f64>> {
        self.check("filter cotangent", self.len, dw.len())?;
        let n = self.len;
        let bins = self.bins();
        let mut buf: Vec<Complex64> = dw.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let inv = 1.0 / n as f64;
        let mut out = vec![0.0; 2 * bins];
        for k in 0..bins {
            let weight = if k == 0 || k == bins - 1 { inv } else { 2.0 * inv };
            out[k] = weight * buf[k].re;
            out[bins + k] = weight * buf[k].im;
        }
        out[bins] = 0.0;
        out[2 * bins - 1] = 0.0;
        Ok(out)
    }

    /// Transpose of [`rfft_concat`](Self::rfft_concat).
    pub fn rfft_adjoint(&self, ds: &[f64]) -> Result<Vec<f64>> {
        let bins = self.bins();
        self.check("spectral cotangent", 2 * bins, ds.len())?;
        let n = self.len;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..bins {
            buf[k] = Complex64::new(ds[k], ds[bins + k]);
        }
        // The forward map zeroes the DC and Nyquist imaginary slots.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        self.inverse.process(&mut buf);
        Ok(buf.iter().map(|c| c.re).collect())
    }
}
