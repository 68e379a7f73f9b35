//! Append-only results store.
//!
//! One CSV per run with columns
//! `experiment, kappa, amplitude, seed, status, wall_time_s, code_version, payload`,
//! where `payload` is a JSON object with sorted keys. Payload schemas:
//!
//! | experiment | payload keys |
//! |---|---|
//! | tdis | `kappa, s, t_dis_hat, op_norm_at_t, iters, c0, c1_over_kappa, poincare, witness_t` |
//! | mix | `s, n, hminus1, h1_init, ratio, aliased` |
//! | twopoint-drift | `kappa, A, p, band, legs, samples, mean_ratio, ci95_upper, gamma1_hat, k_hat, min_slack` |
//! | twopoint-minorize | `kappa, A, bins, alpha_hat, ci_low` |
//! | bounds | `poincare, c0, c1, c1_over_kappa, grad, corollary, heuristic, tau_kappa, a_kappa, b_kappa, clamped` |
//! | closeness | `t, lhs, rhs, slack, violated` |
//! | prop-check | `gamma, d, tau_kappa, a_kappa, ratio, threshold, holds` |
//! | rescaled-tdis | `eps, t_dis_v, t_dis_inner, scaled_inner, gamma_hat, gamma_source, heuristic, ratio` |
//!
//! Failed cells carry `status = "failed"` and `{"error": …}`. A JSON
//! sidecar `<out>.json` holds the config and code version.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::CODE_VERSION;

pub const STATUS_OK: &str = "ok";
pub const STATUS_FAILED: &str = "failed";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub kappa: f64,
    pub amplitude: f64,
    pub seed: u64,
    pub status: String,
    pub payload: Map<String, Value>,
    pub wall_time_s: f64,
    pub code_version: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    pub fn num(&self, key: &str) -> Option<f64> {
        self.payload.get(key).and_then(Value::as_f64)
    }

    pub fn flag(&self, key: &str) -> Option<bool> {
        self.payload.get(key).and_then(Value::as_bool)
    }
}

#[derive(Serialize, Deserialize)]
struct RawRow {
    experiment: String,
    kappa: f64,
    amplitude: f64,
    seed: u64,
    status: String,
    wall_time_s: f64,
    code_version: String,
    payload: String,
}

/// Single writer; every row reaches the file in one `write_all`.
pub struct ResultsWriter {
    path: PathBuf,
    file: std::fs::File,
}

impl ResultsWriter {
    /// Opens `path` for appending, writing the header if the file is new.
    pub fn open(path: &Path) -> LabResult<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() == 0 {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record([
                "experiment",
                "kappa",
                "amplitude",
                "seed",
                "status",
                "wall_time_s",
                "code_version",
                "payload",
            ])?;
            file.write_all(&w.into_inner().map_err(|e| e.into_error())?)?;
            file.flush()?;
        }
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, row: &ResultRow) -> LabResult<()> {
        let raw = RawRow {
            experiment: row.experiment.clone(),
            kappa: row.kappa,
            amplitude: row.amplitude,
            seed: row.seed,
            status: row.status.clone(),
            wall_time_s: row.wall_time_s,
            code_version: row.code_version.clone(),
            payload: serde_json::to_string(&row.payload)?,
        };
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(raw)?;
        let line = w.into_inner().map_err(|e| e.into_error())?;
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

/// Path of the JSON sidecar for `results`.
pub fn sidecar_path(results: &Path) -> PathBuf {
    let mut name = results.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write_sidecar(results: &Path, config: &ExperimentConfig) -> LabResult<()> {
    let doc = serde_json::json!({ "code_version": CODE_VERSION, "config": config });
    std::fs::write(sidecar_path(results), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Reads every complete row. A trailing partial line (a run killed
/// mid-write) is ignored.
pub fn read_results(path: &Path) -> LabResult<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut reader = csv::Reader::from_reader(complete.as_bytes());
    let mut rows = Vec::new();
    for raw in reader.deserialize::<RawRow>() {
        let raw = raw.map_err(|e| LabError::MalformedResults { path: path.into(), message: e.to_string() })?;
        let payload = match serde_json::from_str::<Value>(&raw.payload) {
            Ok(Value::Object(map)) => map,
            _ => {
                return Err(LabError::MalformedResults { path: path.into(), message: format!("bad payload {:?}", raw.payload) })
            }
        };
        rows.push(ResultRow {
            experiment: raw.experiment,
            kappa: raw.kappa,
            amplitude: raw.amplitude,
            seed: raw.seed,
            status: raw.status,
            payload,
            wall_time_s: raw.wall_time_s,
            code_version: raw.code_version,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, payload: Value) -> ResultRow {
        ResultRow {
            experiment: "mix".into(),
            kappa: 0.0625,
            amplitude: 50.0,
            seed,
            status: STATUS_OK.into(),
            payload: payload.as_object().unwrap().clone(),
            wall_time_s: 0.5,
            code_version: CODE_VERSION.into(),
        }
    }

    #[test]
    fn rows_round_trip_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let a = row(1, serde_json::json!({"ratio": 0.1, "aliased": false, "note": "a,\"b\""}));
        ResultsWriter::open(&path).unwrap().append(&a).unwrap();
        let b = row(2, serde_json::json!({"ratio": 1e-300}));
        ResultsWriter::open(&path).unwrap().append(&b).unwrap();
        assert_eq!(read_results(&path).unwrap(), vec![a, b]);
    }

    #[test]
    fn truncated_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut w = ResultsWriter::open(&path).unwrap();
        w.append(&row(1, serde_json::json!({"x": 1.0}))).unwrap();
        w.file.write_all(b"mix,0.0625,50,2,ok,0.1,v,\"{\"\"x").unwrap();
        assert_eq!(read_results(&path).unwrap().len(), 1);
    }
}
