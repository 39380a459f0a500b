//! Binary matrix containers and the position sidecar table.
//!
//! A container starts with one ASCII header line `MAGIC L fs count\n` and is
//! followed by `count × L` little-endian values, row-major. RIR banks
//! (`ANCRIR1`) store 32-bit floats, filter datasets (`ANCDS1`) 64-bit floats.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::acoustics::{ImpulseResponse, Point3};
use crate::error::{Error, Result};

pub const RIR_MAGIC: &str = "ANCRIR1";
pub const DATASET_MAGIC: &str = "ANCDS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub magic: String,
    pub row_len: usize,
    pub sample_rate: f64,
    pub count: usize,
}

pub fn write_container<W: Write>(
    out: W,
    magic: &str,
    sample_rate: f64,
    row_len: usize,
    rows: &[&[f64]],
    precision: Precision,
) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{magic} {row_len} {sample_rate} {}", rows.len())?;
    for row in rows {
        if row.len() != row_len {
            return Err(Error::Shape {
                what: "container row",
                expected: row_len,
                got: row.len(),
            });
        }
        for &v in *row {
            match precision {
                Precision::F32 => out.write_all(&(v as f32).to_le_bytes())?,
                Precision::F64 => out.write_all(&v.to_le_bytes())?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(
    input: R,
    magic: &str,
    precision: Precision,
) -> Result<(ContainerHeader, Vec<Vec<f64>>)> {
    let mut input = BufReader::new(input);
    let mut line = String::new();
    input.read_line(&mut line)?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != magic {
        return Err(Error::Format(format!(
            "expected a `{magic} L fs count` header, got {:?}",
            line.trim_end()
        )));
    }
    let bad = |what: &str| Error::Format(format!("bad {what} in container header"));
    let header = ContainerHeader {
        magic: fields[0].to_string(),
        row_len: fields[1].parse().map_err(|_| bad("row length"))?,
        sample_rate: fields[2].parse().map_err(|_| bad("sample rate"))?,
        count: fields[3].parse().map_err(|_| bad("row count"))?,
    };
    let width = precision.width();
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let expected = header.count * header.row_len * width;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "container body has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = match precision {
        Precision::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Precision::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let rows = if header.row_len == 0 {
        vec![Vec::new(); header.count]
    } else {
        values.chunks(header.row_len).map(<[f64]>::to_vec).collect()
    };
    Ok((header, rows))
}

/// Write impulse responses as an `ANCRIR1` bank. All rows must share length
/// and sample rate.
pub fn save_rir_bank(path: &Path, irs: &[ImpulseResponse]) -> Result<()> {
    let first = irs
        .first()
        .ok_or_else(|| Error::Domain("cannot write an empty RIR bank".into()))?;
    if irs.iter().any(|ir| ir.sample_rate != first.sample_rate) {
        return Err(Error::Domain("RIR bank rows must share a sample rate".into()));
    }
    let rows: Vec<&[f64]> = irs.iter().map(|ir| ir.taps.as_slice()).collect();
    let file = std::fs::File::create(path)?;
    write_container(file, RIR_MAGIC, first.sample_rate, first.len(), &rows, Precision::F32)
}

pub fn load_rir_bank(path: &Path) -> Result<Vec<ImpulseResponse>> {
    let (header, rows) = read_container(std::fs::File::open(path)?, RIR_MAGIC, Precision::F32)?;
    rows.into_iter()
        .map(|taps| ImpulseResponse::new(taps, header.sample_rate))
        .collect()
}

/// Position table with an `index x y z` header line.
pub fn write_positions<W: Write>(out: W, positions: &[Point3]) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "index x y z")?;
    for (i, p) in positions.iter().enumerate() {
        writeln!(out, "{i} {:?} {:?} {:?}", p[0], p[1], p[2])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_positions<R: BufRead>(input: R) -> Result<Vec<Point3>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("index")) {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("bad position row {line:?}")));
        }
        let idx: usize = f[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad position index in {line:?}")))?;
        if idx != out.len() {
            return Err(Error::Format(format!("position rows out of order at index {idx}")));
        }
        let mut p = [0.0; 3];
        for (d, s) in p.iter_mut().zip(&f[1..]) {
            *d = s
                .parse()
                .map_err(|_| Error::Format(format!("bad coordinate in {line:?}")))?;
        }
        out.push(p);
    }
    Ok(out)
}

pub fn save_positions(path: &Path, positions: &[Point3]) -> Result<()> {
    write_positions(std::fs::File::create(path)?, positions)
}

pub fn load_positions(path: &Path) -> Result<Vec<Point3>> {
    read_positions(BufReader::new(std::fs::File::open(path)?))
}
