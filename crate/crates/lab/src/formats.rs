//! File formats: field snapshots, spectra, energy traces and tabulated
//! profiles.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slowmix_core::advdiff::EnergyTrace;
use slowmix_core::profile::{ProfileTable, ShearProfile};
use slowmix_core::spectral::SpectralField;

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub m: usize,
    pub dtype: String,
    pub layout: String,
}

fn with_extension(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<base>.bin` (row-major little-endian `f64`, `x₂` slow) and the
/// header `<base>.json`.
pub fn write_field_snapshot(field: &SpectralField, base: &Path) -> LabResult<()> {
    let header = SnapshotHeader { m: field.resolution(), dtype: "f64-le".into(), layout: "row-major".into() };
    let bytes: Vec<u8> = field.samples().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(with_extension(base, ".bin"), bytes)?;
    std::fs::write(with_extension(base, ".json"), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_field_snapshot(base: &Path) -> LabResult<SpectralField> {
    let header: SnapshotHeader = serde_json::from_str(&std::fs::read_to_string(with_extension(base, ".json"))?)?;
    let bytes = std::fs::read(with_extension(base, ".bin"))?;
    if header.dtype != "f64-le" || bytes.len() != header.m * header.m * 8 {
        return Err(LabError::MalformedResults {
            path: with_extension(base, ".bin"),
            message: format!("expected {}² little-endian f64 values", header.m),
        });
    }
    let samples = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(SpectralField::from_samples(header.m, samples)?)
}

/// CSV of `(k1, k2, re, im)` over the whole grid.
pub fn write_spectrum_csv(field: &SpectralField, path: &Path) -> LabResult<()> {
    let m = field.resolution() as i64;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k1", "k2", "re", "im"])?;
    for k2 in -m / 2..m / 2 {
        for k1 in -m / 2..m / 2 {
            let c = field.coefficient(k1, k2);
            w.serialize((k1, k2, c.re, c.im))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV of `(time, l2_sq, h1_sq)`.
pub fn write_trace_csv(trace: &EnergyTrace, path: &Path) -> LabResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "l2_sq", "h1_sq"])?;
    for s in &trace.samples {
        w.serialize((s.time, s.l2_sq, s.h1_sq))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a profile tabulated as `(x, φ, φ', φ'', φ''')` columns on a
/// uniform grid; a header row is optional. The file stem names the profile.
pub fn read_profile_csv(path: &Path) -> LabResult<ShearProfile> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.len() == 5 => rows.push([v[0], v[1], v[2], v[3], v[4]]),
            Err(_) if i == 0 => continue,
            _ => {
                return Err(LabError::MalformedResults {
                    path: path.into(),
                    message: format!("line {} is not five numbers", i + 1),
                })
            }
        }
    }
    let table = ProfileTable::from_rows(&rows)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("tabulated");
    Ok(ShearProfile::tabulated(name, table))
}

/// Writes `profile` tabulated at `points` uniform nodes of `[0, 2π]`.
pub fn write_profile_csv(profile: &ShearProfile, points: usize, path: &Path) -> LabResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "phi", "d1", "d2", "d3"])?;
    for i in 0..points {
        let x = std::f64::consts::TAU * i as f64 / (points - 1) as f64;
        w.serialize((x, profile.eval(x), profile.d1(x), profile.d2(x), profile.d3(x)))?;
    }
    w.flush()?;
    Ok(())
}
