//! The converged-filter dataset: one steady-state FxLMS filter per primary
//! source position.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::acoustics::{distance, simulate_rir, ImpulseResponse, Point3, RoomSpec};
use crate::anc::{converge_filter, NoiseSource, StopConfig};
use crate::error::{Error, Result};
use crate::io::{read_container, write_container, Precision, DATASET_MAGIC};

/// Placement of the control loudspeaker and error microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Primary sources are sampled on the segment between these points.
    pub segment: [Point3; 2],
    pub secondary_source: Point3,
    pub error_mic: Point3,
}

impl Geometry {
    pub fn point_on_segment(&self, t: f64) -> Point3 {
        let [a, b] = &self.segment;
        [
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            a[2] + t * (b[2] - a[2]),
        ]
    }

    pub fn segment_length(&self) -> f64 {
        distance(&self.segment[0], &self.segment[1])
    }
}

/// FxLMS settings used to converge each dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAncConfig {
    pub step_size: f64,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default = "unit")]
    pub noise_variance: f64,
    /// Seed of the reference noise. Every row is converged on the same
    /// realization, so a row depends only on its primary path.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn unit() -> f64 {
    1.0
}

fn default_retries() -> usize {
    3
}

impl DatasetAncConfig {
    pub fn new(step_size: f64, seed: u64) -> Self {
        Self {
            step_size,
            stop: StopConfig::default(),
            noise_variance: 1.0,
            seed,
            max_retries: default_retries(),
        }
    }

    fn noise(&self) -> NoiseSource {
        NoiseSource::white(self.noise_variance, self.seed)
    }
}

/// Decorrelated per-item seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to reproduce a dataset, stored as the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub room: RoomSpec,
    pub geometry: Geometry,
    pub anc: DatasetAncConfig,
    pub positions: Vec<Point3>,
    /// Global factor mapping physical filters into training units
    /// (inverse of the largest row norm).
    pub scale: f64,
    /// Step size actually used for each row after divergence retries.
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDataset {
    /// n × L converged filters in physical units.
    pub filters: Array2<f64>,
    pub record: DatasetRecord,
}

impl FilterDataset {
    pub fn len(&self) -> usize {
        self.filters.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.nrows() == 0
    }

    pub fn filter_len(&self) -> usize {
        self.filters.ncols()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.record.positions
    }

    pub fn scale(&self) -> f64 {
        self.record.scale
    }

    /// Filters multiplied by the dataset scale.
    pub fn normalized(&self) -> Array2<f64> {
        &self.filters * self.record.scale
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Config(format!(
                "a filter dataset needs at least 2 rows, got {}",
                self.len()
            )));
        }
        if self.record.positions.len() != self.len() {
            return Err(Error::Shape {
                what: "dataset positions",
                expected: self.len(),
                got: self.record.positions.len(),
            });
        }
        if self.filters.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(None, "dataset contains non-finite taps"));
        }
        if let Some(i) = self
            .record
            .positions
            .iter()
            .position(|p| !self.record.room.contains(p))
        {
            return Err(Error::Config(format!("dataset position {i} lies outside the room")));
        }
        if !(self.record.scale.is_finite() && self.record.scale > 0.0) {
            return Err(Error::Config("dataset scale must be positive".into()));
        }
        Ok(())
    }

    fn sidecar(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the `ANCDS1` container at `path` and the record at `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<&[f64]> = self
            .filters
            .rows()
            .into_iter()
            .map(|r| r.to_slice().expect("standard layout"))
            .collect();
        write_container(
            std::fs::File::create(path)?,
            DATASET_MAGIC,
            self.record.room.sample_rate,
            self.filter_len(),
            &rows,
            Precision::F64,
        )?;
        std::fs::write(Self::sidecar(path), serde_json::to_string_pretty(&self.record)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, rows) =
            read_container(std::fs::File::open(path)?, DATASET_MAGIC, Precision::F64)?;
        let record: DatasetRecord =
            serde_json::from_str(&std::fs::read_to_string(Self::sidecar(path))?)?;
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let filters = Array2::from_shape_vec((header.count, header.row_len), flat)
            .map_err(|e| Error::Format(e.to_string()))?;
        let ds = Self { filters, record };
        ds.validate()?;
        Ok(ds)
    }
}

/// Evenly spaced parameters `i / (n − 1)` along the segment.
pub fn segment_positions(geometry: &Geometry, n: usize) -> Vec<Point3> {
    if n == 1 {
        return vec![geometry.point_on_segment(0.0)];
    }
    (0..n)
        .map(|i| geometry.point_on_segment(i as f64 / (n - 1) as f64))
        .collect()
}

/// Indices of positions not strictly farther from the error mic than the
/// secondary source.
pub fn distance_violations(geometry: &Geometry, positions: &[Point3]) -> Vec<usize> {
    let d_secondary = distance(&geometry.secondary_source, &geometry.error_mic);
    positions
        .iter()
        .enumerate()
        .filter(|(_, p)| distance(p, &geometry.error_mic) <= d_secondary)
        .map(|(i, _)| i)
        .collect()
}

/// Converge one filter per primary path, halving the step size after each
/// divergence.
pub fn converge_rows(
    primaries: &[ImpulseResponse],
    g: &ImpulseResponse,
    g_hat: &ImpulseResponse,
    anc: &DatasetAncConfig,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let len = g.len();
    let rows: Vec<Result<(Vec<f64>, f64)>> = primaries
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let noise = anc.noise();
            let mut mu = anc.step_size;
            let mut attempt = 0;
            loop {
                match converge_filter(p, g, g_hat, &noise, mu, &anc.stop) {
                    Ok(w) => return Ok((w.0, mu)),
                    Err(e @ (Error::Instability { .. } | Error::Numeric { .. })) => {
                        if attempt == anc.max_retries {
                            return Err(Error::numeric(
                                None,
                                format!("dataset row {i} diverged after {attempt} retries: {e}"),
                            ));
                        }
                        log::warn!("dataset row {i} diverged at mu={mu}; retrying with mu/2");
                        mu *= 0.5;
                        attempt += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut filters = Array2::zeros((primaries.len(), len));
    let mut steps = Vec::with_capacity(primaries.len());
    for (mut dst, row) in filters.rows_mut().into_iter().zip(rows) {
        let (w, mu) = row?;
        dst.assign(&ndarray::ArrayView1::from(&w));
        steps.push(mu);
    }
    Ok((filters, steps))
}

/// Inverse of the largest row norm; 1 for an all-zero matrix.
pub fn global_scale(filters: &Array2<f64>) -> f64 {
    let max = filters
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    if max > 0.0 {
        1.0 / max
    } else {
        1.0
    }
}

/// Simulate `n` primary paths along the segment, converge FxLMS for each and
/// collect the filters.
pub fn generate_dataset(
    room: &RoomSpec,
    geometry: &Geometry,
    n: usize,
    anc: &DatasetAncConfig,
) -> Result<FilterDataset> {
    room.validate()?;
    if n < 2 {
        return Err(Error::Config(format!("a filter dataset needs at least 2 rows, got {n}")));
    }
    for (name, p) in [
        ("segment start", &geometry.segment[0]),
        ("segment end", &geometry.segment[1]),
        ("secondary source", &geometry.secondary_source),
        ("error microphone", &geometry.error_mic),
    ] {
        if !room.contains(p) {
            return Err(Error::Config(format!("{name} {p:?} lies outside the room")));
        }
    }
    let positions = segment_positions(geometry, n);
    let bad = distance_violations(geometry, &positions);
    if !bad.is_empty() {
        return Err(Error::Config(format!(
            "primary positions not farther from the error mic than the secondary source: {bad:?}"
        )));
    }
    let g = simulate_rir(room, &geometry.secondary_source, &geometry.error_mic)?;
    let primaries = positions
        .par_iter()
        .map(|p| simulate_rir(room, p, &geometry.error_mic))
        .collect::<Result<Vec<_>>>()?;
    let (filters, step_sizes) = converge_rows(&primaries, &g, &g, anc)?;
    let scale = global_scale(&filters);
    let ds = FilterDataset {
        filters,
        record: DatasetRecord {
            room: room.clone(),
            geometry: geometry.clone(),
            anc: anc.clone(),
            positions,
            scale,
            step_sizes,
        },
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> Geometry {
        Geometry {
            segment: [[1.5, 1.0, 1.0], [3.0, 2.0, 2.0]],
            secondary_source: [3.0, 2.5, 1.5],
            error_mic: [4.5, 3.0, 1.5],
        }
    }

    #[test]
    fn positions_cover_segment_ends() {
        let pos = segment_positions(&geometry(), 5);
        assert_eq!(pos[0], [1.5, 1.0, 1.0]);
        assert_eq!(pos[4], [3.0, 2.0, 2.0]);
        assert!((distance(&pos[1], &pos[2]) - geometry().segment_length() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn reference_segment_satisfies_distance_rule() {
        let g = geometry();
        assert!(distance_violations(&g, &segment_positions(&g, 64)).is_empty());
        let mut close = g.clone();
        close.segment = [[4.4, 3.0, 1.5], [1.5, 1.0, 1.0]];
        assert_eq!(distance_violations(&close, &segment_positions(&close, 3)), vec![0]);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn global_scale_normalizes_largest_row() {
        let f = ndarray::array![[3.0, 4.0], [0.0, 1.0]];
        assert_eq!(global_scale(&f), 0.2);
        assert_eq!(global_scale(&Array2::zeros((2, 2))), 1.0);
    }
}
