//! Sweep summaries and plot data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use slowmix_core::bounds::{no_enhancement_constant, poincare_bound};
use slowmix_core::mixmeter::{fit_rate_window, least_squares, MixRecord};

use crate::error::{LabError, LabResult};
use crate::results::{read_results, ResultRow};

/// Mixing-rate fit window used by summaries.
pub const FIT_WINDOW: (usize, usize) = (4, 14);

/// One tidy summary line. `lo`/`hi` bracket `value` where a CI exists.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub quantity: String,
    pub kappa: Option<f64>,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub note: String,
}

/// Log-log least squares with a 95% normal CI on the slope and a
/// curvature test from a quadratic fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub ci: (f64, f64),
    pub quadratic: f64,
    pub curved: bool,
    pub points: usize,
}

/// Fits `ln y = a + b ln x`. Needs two points with positive coordinates.
pub fn loglog_fit(points: &[(f64, f64)]) -> LabResult<LogLogFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let distinct = {
        let mut xs: Vec<f64> = logs.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    };
    if distinct < 2 {
        return Err(LabError::InsufficientData(format!("{distinct} distinct abscissae, need 2")));
    }
    let line = least_squares(&logs);
    let half = if line.slope_stderr.is_finite() { 1.96 * line.slope_stderr } else { 0.0 };
    let (quadratic, quad_se) = if distinct >= 3 { quadratic_term(&logs) } else { (0.0, 0.0) };
    let curved = quadratic.abs() > 1e-3 && (quad_se == 0.0 || quadratic.abs() > 3.0 * quad_se);
    Ok(LogLogFit { slope: line.slope, ci: (line.slope - half, line.slope + half), quadratic, curved, points: logs.len() })
}

/// Coefficient of `x²` in the least-squares quadratic and its standard
/// error (zero when the fit is exact or has no residual degrees of freedom).
fn quadratic_term(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for &(x, y) in pts {
        let row = [1.0, x - xm, (x - xm) * (x - xm)];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
            b[i] += row[i] * y;
        }
    }
    let inv = match invert3(&a) {
        Some(inv) => inv,
        None => return (0.0, 0.0),
    };
    let c: Vec<f64> = (0..3).map(|i| (0..3).map(|j| inv[i][j] * b[j]).sum()).collect();
    let dof = pts.len().saturating_sub(3);
    if dof == 0 {
        return (c[2], 0.0);
    }
    let sse: f64 = pts
        .iter()
        .map(|&(x, y)| {
            let d = x - xm;
            (y - c[0] - c[1] * d - c[2] * d * d).powi(2)
        })
        .sum();
    (c[2], (sse / dof as f64 * inv[2][2]).sqrt())
}

fn invert3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r1, r2) = ((j + 1) % 3, (j + 2) % 3);
            let (c1, c2) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (a[r1][c1] * a[r2][c2] - a[r1][c2] * a[r2][c1]) / det;
        }
    }
    Some(inv)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Rows grouped by experiment, then by κ (keyed by bit pattern, so exact).
type Groups<'a> = BTreeMap<&'a str, BTreeMap<u64, Vec<&'a ResultRow>>>;

fn group(rows: &[ResultRow]) -> Groups<'_> {
    let mut g: Groups<'_> = BTreeMap::new();
    for r in rows {
        g.entry(r.experiment.as_str()).or_default().entry(r.kappa.to_bits()).or_default().push(r);
    }
    g
}

/// Reconstructs mix records per `(κ, seed)` from `mix` rows.
pub fn mix_series(rows: &[&ResultRow]) -> BTreeMap<u64, Vec<MixRecord>> {
    let mut out: BTreeMap<u64, Vec<MixRecord>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let (Some(n), Some(ratio)) = (r.num("n"), r.num("ratio")) else { continue };
        out.entry(r.seed).or_default().push(MixRecord {
            s: r.num("s").unwrap_or(0.0) as usize,
            n: n as usize,
            hminus1: r.num("hminus1").unwrap_or(f64::NAN),
            h1_init: r.num("h1_init").unwrap_or(f64::NAN),
            ratio,
            aliased: r.flag("aliased").unwrap_or(false),
        });
    }
    out
}

/// Per-κ medians of `key` over ok rows, as `(κ, median)`.
fn medians(by_kappa: &BTreeMap<u64, Vec<&ResultRow>>, key: &str) -> Vec<(f64, f64)> {
    by_kappa
        .iter()
        .filter_map(|(k, rows)| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.is_ok()).filter_map(|r| r.num(key)).collect();
            median(&mut v).map(|m| (f64::from_bits(*k), m))
        })
        .collect()
}

pub fn sweep_summary(path: &Path) -> LabResult<Vec<SummaryRow>> {
    summarize_rows(&read_results(path)?)
}

/// Per-experiment summaries of a results table.
pub fn summarize_rows(rows: &[ResultRow]) -> LabResult<Vec<SummaryRow>> {
    let mut kappas: Vec<u64> = rows.iter().map(|r| r.kappa.to_bits()).collect();
    kappas.sort_unstable();
    kappas.dedup();
    if kappas.len() < 2 {
        return Err(LabError::InsufficientData(format!("{} distinct κ values, need 2", kappas.len())));
    }
    let mut out = Vec::new();
    for (experiment, by_kappa) in group(rows) {
        let mut push = |quantity: &str, kappa: Option<f64>, value: f64, ci: Option<(f64, f64)>, note: String| {
            out.push(SummaryRow {
                experiment: experiment.into(),
                quantity: quantity.into(),
                kappa,
                value,
                lo: ci.map(|c| c.0),
                hi: ci.map(|c| c.1),
                note,
            })
        };
        let failures = by_kappa.values().flatten().filter(|r| !r.is_ok()).count();
        push("failed_rows", None, failures as f64, None, String::new());
        let slope = |push: &mut dyn FnMut(&str, Option<f64>, f64, Option<(f64, f64)>, String), name: &str, pts: &[(f64, f64)]| {
            if let Ok(fit) = loglog_fit(pts) {
                let note = if fit.curved { format!("curved (quadratic {:.3e})", fit.quadratic) } else { String::new() };
                push(name, None, fit.slope, Some(fit.ci), note);
            }
        };
        match experiment {
            "tdis" | "rescaled-tdis" => {
                let key = if experiment == "tdis" { "t_dis_hat" } else { "t_dis_v" };
                let med = medians(&by_kappa, key);
                for &(k, m) in &med {
                    push("t_dis_median", Some(k), m, None, String::new());
                }
                slope(&mut push, "t_dis_slope", &med);
                if experiment == "tdis" {
                    for (k, c) in medians(&by_kappa, "c1_over_kappa") {
                        push("c1_over_kappa_median", Some(k), c, None, String::new());
                    }
                } else {
                    for (k, r) in medians(&by_kappa, "ratio") {
                        push("heuristic_ratio_median", Some(k), r, None, String::new());
                    }
                }
            }
            "mix" => {
                let mut per_kappa = Vec::new();
                for (k, rows) in &by_kappa {
                    let series = mix_series(rows);
                    let mut gammas: Vec<f64> = series
                        .values()
                        .filter_map(|recs| fit_rate_window(recs, FIT_WINDOW.0, FIT_WINDOW.1).ok())
                        .map(|f| f.gamma_hat)
                        .collect();
                    let fitted = gammas.len();
                    if let Some(m) = median(&mut gammas) {
                        let kappa = f64::from_bits(*k);
                        push("gamma_median", Some(kappa), m, None, format!("{fitted}/{} seeds fitted", series.len()));
                        per_kappa.push((kappa, m));
                    }
                }
                slope(&mut push, "gamma_slope", &per_kappa);
                if per_kappa.len() >= 2 {
                    let hi = per_kappa.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                    let lo = per_kappa.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                    push("gamma_spread", None, hi / lo, None, String::new());
                }
            }
            "twopoint-drift" => {
                for (k, v) in medians(&by_kappa, "ci95_upper") {
                    push("ci95_upper_median", Some(k), v, None, String::new());
                }
                for (k, v) in medians(&by_kappa, "gamma1_hat") {
                    push("gamma1_median", Some(k), v, None, String::new());
                }
                let k_hat: Vec<(f64, f64)> = medians(&by_kappa, "k_hat").into_iter().map(|(k, v)| (1.0 / k, v)).collect();
                slope(&mut push, "k_hat_slope_inv_kappa", &k_hat);
            }
            "twopoint-minorize" => {
                for (k, rows) in &by_kappa {
                    let min = rows.iter().filter_map(|r| r.num("alpha_hat")).fold(f64::INFINITY, f64::min);
                    push("alpha_min", Some(f64::from_bits(*k)), min, None, String::new());
                }
            }
            "closeness" | "prop-check" => {
                let (key, bad) = if experiment == "closeness" { ("violated", true) } else { ("holds", false) };
                for (k, rows) in &by_kappa {
                    let count = rows.iter().filter(|r| r.flag(key) == Some(bad)).count();
                    let name = if bad { "violations" } else { "failures_of_bound" };
                    push(name, Some(f64::from_bits(*k)), count as f64, None, format!("of {}", rows.len()));
                }
            }
            _ => {
                for (k, rows) in &by_kappa {
                    push("rows", Some(f64::from_bits(*k)), rows.len() as f64, None, String::new());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], out: W) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const PLOT_KINDS: [&str; 3] = ["mix-decay", "tdis-scaling", "drift-ci"];

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PlotPoint {
    x: f64,
    y: f64,
    series: String,
}

/// Writes `<out_dir>/<kind>.csv` with `(x, y, series)` columns.
pub fn emit_plotdata(results: &Path, kind: &str, out_dir: &Path) -> LabResult<PathBuf> {
    if !PLOT_KINDS.contains(&kind) {
        return Err(LabError::UnknownKind(kind.into()));
    }
    let rows = read_results(results)?;
    let groups = group(&rows);
    let empty = BTreeMap::new();
    let mut pts = Vec::new();
    let mut point = |x: f64, y: f64, series: String| pts.push(PlotPoint { x, y, series });
    match kind {
        "mix-decay" => {
            for (k, rows) in groups.get("mix").unwrap_or(&empty) {
                for (seed, recs) in mix_series(rows) {
                    for r in recs.iter().filter(|r| r.ratio > 0.0) {
                        point(r.n as f64, r.ratio.ln(), format!("kappa={},seed={seed}", f64::from_bits(*k)));
                    }
                }
            }
        }
        "tdis-scaling" => {
            for (k, rows) in groups.get("tdis").unwrap_or(&empty) {
                let kappa = f64::from_bits(*k);
                for r in rows.iter().filter(|r| r.is_ok()) {
                    if let Some(t) = r.num("t_dis_hat") {
                        point(1.0 / kappa, t, "measured".into());
                    }
                }
                point(1.0 / kappa, poincare_bound(kappa), "poincare".into());
                let mut c0: Vec<f64> = rows.iter().filter_map(|r| r.num("c0")).collect();
                if let Some(c0) = median(&mut c0) {
                    point(1.0 / kappa, no_enhancement_constant(c0) / kappa, "c1_over_kappa".into());
                }
            }
        }
        _ => {
            for (k, rows) in groups.get("twopoint-drift").unwrap_or(&empty) {
                let kappa = f64::from_bits(*k);
                for r in rows.iter().filter(|r| r.is_ok()) {
                    if let (Some(m), Some(u)) = (r.num("mean_ratio"), r.num("ci95_upper")) {
                        point(kappa, m, "mean_ratio".into());
                        point(kappa, u, "ci95_upper".into());
                    }
                }
            }
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{kind}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    for p in &pts {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(path)
}
