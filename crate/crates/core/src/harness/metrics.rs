use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::anc::ErrorTrace;
use crate::error::{Error, Result};

/// Mean of the last `window` entries.
pub fn steady_state(trace: &[f64], window: usize) -> Result<f64> {
    if window == 0 || trace.len() < window {
        return Err(Error::Domain(format!(
            "steady-state window {window} does not fit a trace of {} blocks",
            trace.len()
        )));
    }
    let tail = &trace[trace.len() - window..];
    Ok(tail.iter().sum::<f64>() / window as f64)
}

/// Earliest block `k` with `e_k² ≤ (1 + ρ)·e∞²`, where `e∞²` is the mean of
/// the last `steady_window` blocks. `None` if no block qualifies.
pub fn convergence_time(trace: &[f64], rho: f64, steady_window: usize) -> Result<Option<usize>> {
    if trace.len() <= steady_window {
        return Err(Error::Domain(format!(
            "trace of {} blocks is not longer than the steady window {steady_window}",
            trace.len()
        )));
    }
    if !(rho >= 0.0) {
        return Err(Error::Domain(format!("rho must be non-negative, got {rho}")));
    }
    let threshold = (1.0 + rho) * steady_state(trace, steady_window)?;
    Ok(trace.iter().position(|&e| e <= threshold))
}

/// `10·log₁₀(e∞²_off / e∞²_on)`; `+∞` when the ANC-on steady state is zero.
pub fn anc_gain_db(on: &[f64], off: &[f64], steady_window: usize) -> Result<f64> {
    if on.len() != off.len() {
        return Err(Error::Shape {
            what: "ANC-off trace",
            expected: on.len(),
            got: off.len(),
        });
    }
    let s_on = steady_state(on, steady_window)?;
    let s_off = steady_state(off, steady_window)?;
    if s_on == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (s_off / s_on).log10())
}

/// Elementwise mean of equally long traces.
pub fn average_traces(traces: &[ErrorTrace]) -> Result<ErrorTrace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Domain("cannot average an empty set of traces".into()))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for t in traces {
        if t.len() != n {
            return Err(Error::Shape {
                what: "averaged trace",
                expected: n,
                got: t.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(&t.block_mse) {
            *a += v;
        }
    }
    let inv = 1.0 / traces.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(ErrorTrace {
        block_mse: acc,
        block_size: first.block_size,
        sample_rate: first.sample_rate,
    })
}

/// A gain in decibels; non-finite values serialize as `"+inf"`, `"-inf"` or
/// `"nan"` so reports stay valid JSON.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Decibels(pub f64);

impl Serialize for Decibels {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("+inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Decibels {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Decibels(v)),
            Raw::Text(t) => match t.as_str() {
                "+inf" | "inf" => Ok(Decibels(f64::INFINITY)),
                "-inf" => Ok(Decibels(f64::NEG_INFINITY)),
                "nan" => Ok(Decibels(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("bad decibel value {other:?}"))),
            },
        }
    }
}

impl std::fmt::Display for Decibels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_finite() {
            write!(f, "{:.2}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}
