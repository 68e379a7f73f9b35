//! Runs one experiment over its `(κ, seed)` grid.
//!
//! A cell is one `(κ index, seed)` pair and one realization. Cells run in
//! parallel in batches of the pool size; each batch is written in grid
//! order, so the file is identical for any thread count. The realization
//! seed of a cell is `derive_seed(master_seed, κ index, seed)`.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Map, Value};
use slowmix_core::bounds::{
    corollary_bound, heuristic_bound, no_enhancement_constant, poincare_bound, prop_quantities, RateParams,
};
use slowmix_core::flow::{FlowRealization, ShearSchedule};
use slowmix_core::mixmeter::{fit_rate_window, mix_records, theorem3_quantities, MixRecord, NormMeter, TdisOptions};
use slowmix_core::profile::ShearProfile;
use slowmix_core::spectral::SpectralField;
use slowmix_core::transport::TrigPolynomial;
use slowmix_core::twopoint::{drift_estimate, foster_lyapunov_check, minorization_probe, ChainParams, FosterGeometry};
use slowmix_core::{advdiff, derive_seed};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::LabResult;
use crate::results::{write_sidecar, ResultRow, ResultsWriter, STATUS_FAILED, STATUS_OK};
use crate::CODE_VERSION;

/// Quadrature points per profile copy for stream-function norms.
const STREAM_POINTS_PER_COPY: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub path: PathBuf,
    pub rows: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    kappa: f64,
    seed: u64,
    worker_seed: u64,
}

/// Executes `config`, appending rows to `config.out_path`.
pub fn run(config: &ExperimentConfig) -> LabResult<RunOutcome> {
    config.validate()?;
    let profile = config.profile()?;
    let path = PathBuf::from(&config.out_path);
    let mut writer = ResultsWriter::open(&path)?;
    write_sidecar(&path, config)?;
    let seeds: &[u64] = if config.experiment == Experiment::Bounds { &config.seeds[..1] } else { &config.seeds };
    let cells: Vec<Cell> = config
        .kappa_list
        .iter()
        .enumerate()
        .flat_map(|(i, &kappa)| {
            seeds.iter().map(move |&seed| Cell {
                kappa,
                seed,
                worker_seed: derive_seed(config.master_seed, i as u64, seed),
            })
        })
        .collect();
    let batch = rayon::current_num_threads().max(1);
    let (mut rows, mut failures) = (0, 0);
    for chunk in cells.chunks(batch) {
        let outputs: Vec<Vec<ResultRow>> = chunk.par_iter().map(|cell| run_cell(config, &profile, cell)).collect();
        for row in outputs.iter().flatten() {
            writer.append(row)?;
            rows += 1;
            failures += usize::from(!row.is_ok());
        }
    }
    Ok(RunOutcome { path, rows, failures })
}

fn run_cell(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Vec<ResultRow> {
    let start = Instant::now();
    let outcome = match config.experiment {
        Experiment::Tdis => tdis(config, profile, cell),
        Experiment::Mix => mix(config, profile, cell),
        Experiment::TwopointDrift => twopoint_drift(config, profile, cell),
        Experiment::TwopointMinorize => twopoint_minorize(config, profile, cell),
        Experiment::Bounds => bounds(config, profile, cell),
        Experiment::Closeness => closeness(config, profile, cell),
        Experiment::PropCheck => prop_check(config, profile, cell),
        Experiment::RescaledTdis => rescaled_tdis(config, profile, cell),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let row = |status: &str, payload: Map<String, Value>| ResultRow {
        experiment: config.experiment.name().into(),
        kappa: cell.kappa,
        amplitude: config.amplitude,
        seed: cell.seed,
        status: status.into(),
        payload,
        wall_time_s: elapsed,
        code_version: CODE_VERSION.into(),
    };
    match outcome {
        Ok(payloads) => payloads.into_iter().map(|p| row(STATUS_OK, p)).collect(),
        Err(e) => vec![row(STATUS_FAILED, object(json!({ "error": e.to_string() })))],
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("payloads are JSON objects"),
    }
}

/// JSON has no NaN or infinity; non-finite numbers become null.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

type Payloads = LabResult<Vec<Map<String, Value>>>;

fn realize(config: &ExperimentConfig, profile: &ShearProfile, kappa: f64, seed: u64, legs: usize) -> LabResult<FlowRealization> {
    Ok(FlowRealization::realize(kappa, config.amplitude, profile.clone(), seed, legs.max(2))?)
}

/// Legs needed to reach the end of the dissipation-time bracket.
fn tdis_legs(kappa: f64, leg_duration: f64) -> usize {
    (1.1 * poincare_bound(kappa) / leg_duration).ceil() as usize + 2
}

/// `C₀ = max over every leg of the realization of ‖H‖_∞ / κ`.
fn stream_constant(flow: &FlowRealization) -> LabResult<f64> {
    let points = STREAM_POINTS_PER_COPY * flow.n_kappa();
    let mut c0 = 0.0f64;
    for leg in 0..flow.horizon() {
        c0 = c0.max(flow.stream_sup_norm(leg, points)? / flow.kappa());
    }
    Ok(c0)
}

fn tdis_options(config: &ExperimentConfig) -> TdisOptions {
    TdisOptions {
        substeps_per_leg: config.substeps,
        max_power_iters: config.knob("power_iters") as usize,
        ..TdisOptions::default()
    }
}

fn tdis(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Payloads {
    let flow = realize(config, profile, cell.kappa, cell.worker_seed, tdis_legs(cell.kappa, 1.0))?;
    let c0 = stream_constant(&flow)?;
    let mut meter = NormMeter::new(&flow, cell.kappa, config.grid, tdis_options(config))?;
    let r = meter.dissipation_time(config.knob("s"), config.knob("tol"))?;
    Ok(vec![object(json!({
        "kappa": cell.kappa,
        "s": r.s,
        "t_dis_hat": r.t_dis_hat,
        "op_norm_at_t": r.op_norm_at_t,
        "iters": r.power_iters,
        "c0": c0,
        "c1_over_kappa": no_enhancement_constant(c0) / cell.kappa,
        "poincare": poincare_bound(cell.kappa),
        "witness_t": r.witness_t.map(num).unwrap_or(Value::Null),
    }))])
}

fn mix_payload(r: &MixRecord) -> Map<String, Value> {
    object(json!({
        "s": r.s,
        "n": r.n,
        "hminus1": num(r.hminus1),
        "h1_init": r.h1_init,
        "ratio": num(r.ratio),
        "aliased": r.aliased,
    }))
}

fn mix_run(
    config: &ExperimentConfig,
    profile: &ShearProfile,
    kappa: f64,
    seed: u64,
    grid: usize,
) -> LabResult<Vec<MixRecord>> {
    let s = config.knob_or("s", 0.0) as usize;
    let n_max = config.knob("n_max") as usize;
    let flow = realize(config, profile, kappa, seed, s + n_max)?;
    let init = TrigPolynomial::random(derive_seed(seed, 1, 0), config.knob("k_max") as i64)?;
    Ok(mix_records(&flow, &init, s, n_max, grid)?)
}

fn mix(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Payloads {
    let records = mix_run(config, profile, cell.kappa, cell.worker_seed, config.grid)?;
    Ok(records.iter().map(mix_payload).collect())
}

/// Fitted exponential rate of the cell's own realization, falling back to
/// a fit that ignores the aliasing filter. Returns the rate and its source.
fn fitted_rate(
    config: &ExperimentConfig,
    profile: &ShearProfile,
    kappa: f64,
    seed: u64,
    grid: usize,
) -> LabResult<(RateParams, &'static str)> {
    let records = mix_run(config, profile, kappa, seed, grid)?;
    let (lo, hi) = (config.knob("fit_min") as usize, config.knob("n_max") as usize);
    match fit_rate_window(&records, lo, hi) {
        Ok(fit) => Ok((fit.as_rate()?, "filtered")),
        Err(_) => {
            let all: Vec<MixRecord> = records.iter().map(|r| MixRecord { aliased: false, ..*r }).collect();
            Ok((fit_rate_window(&all, lo, hi)?.as_rate()?, "unfiltered"))
        }
    }
}

fn twopoint_drift(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Payloads {
    let params = ChainParams::new(cell.kappa, config.amplitude, cell.worker_seed).with_profile(profile.clone());
    let n = slowmix_core::flow::n_kappa_of(cell.kappa)? as f64;
    let p = config.knob("p");
    let band = config.knob("s_star") / n;
    let d = drift_estimate(&params, p, band, config.knob("samples") as usize, config.knob("legs") as usize)?;
    let geometry = FosterGeometry {
        eta: config.knob("eta"),
        s_star: config.knob("s_star"),
        strata: config.knob("strata") as usize,
        leg_pairs: 3,
    };
    let f = foster_lyapunov_check(&params, p, config.knob("foster_samples") as usize, geometry)?;
    let min_slack = f.strata.iter().map(|s| s.slack).fold(f64::INFINITY, f64::min);
    Ok(vec![object(json!({
        "kappa": cell.kappa,
        "A": config.amplitude,
        "p": p,
        "band": band,
        "legs": d.n_legs,
        "samples": d.samples,
        "mean_ratio": d.mean_ratio,
        "ci95_upper": d.ci95_upper,
        "gamma1_hat": f.gamma1_hat,
        "k_hat": f.k_hat,
        "min_slack": min_slack,
    }))])
}

fn twopoint_minorize(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Payloads {
    let params = ChainParams::new(cell.kappa, config.amplitude, cell.worker_seed).with_profile(profile.clone());
    let bins = config.knob("bins") as usize;
    let m = minorization_probe(&params, config.knob("samples") as usize, bins, config.knob("eta"))?;
    Ok(vec![object(json!({
        "kappa": cell.kappa,
        "A": config.amplitude,
        "bins": bins,
        "alpha_hat": m.alpha_hat,
        "ci_low": m.ci_low,
    }))])
}

/// Every closed-form bound at `κ`. Without overrides, `‖∇u‖_∞` and `C₀`
/// come from a realization at the configured amplitude.
pub fn bounds_payload(config: &ExperimentConfig, profile: &ShearProfile, kappa: f64, seed: u64) -> LabResult<Map<String, Value>> {
    let flow = realize(config, profile, kappa, seed, 2)?;
    let grad = match config.knob("grad") {
        g if g.is_nan() => flow.gradient_bound(),
        g => g,
    };
    let c0 = match config.knob("c0") {
        c if c.is_nan() => stream_constant(&flow)?,
        c => c,
    };
    let rate = RateParams::new(config.knob("d"), config.knob("gamma"), config.knob("p_poly"))?;
    let c1 = no_enhancement_constant(c0);
    let mut payload = object(json!({
        "poincare": poincare_bound(kappa),
        "c0": c0,
        "c1": c1,
        "c1_over_kappa": c1 / kappa,
        "grad": grad,
        "corollary": corollary_bound(&rate, grad, kappa),
        "heuristic": heuristic_bound(&rate, config.knob("c_delta"), config.knob("delta"), 2, kappa),
    }));
    let prop = match prop_quantities(&rate, grad, kappa) {
        Ok(q) => json!({
            "tau_kappa": q.tau_kappa,
            "a_kappa": q.a_kappa,
            "b_kappa": num(q.b_kappa),
            "clamped": q.clamped,
        }),
        Err(e) => json!({ "tau_kappa": null, "a_kappa": null, "b_kappa": null, "clamped": null, "prop_error": e.to_string() }),
    };
    payload.extend(object(prop));
    Ok(payload)
}

fn bounds(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Payloads {
    Ok(vec![bounds_payload(config, profile, cell.kappa, cell.worker_seed)?])
}

/// Relative slack below which a closeness tuple counts as a violation.
pub const CLOSENESS_VIOLATION: f64 = 1e-8;

fn closeness(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Payloads {
    let unit = (derive_seed(cell.worker_seed, 2, 0) >> 11) as f64 / (1u64 << 53) as f64;
    let t = config.knob("t_max") * (1.0 - unit);
    let flow = realize(config, profile, cell.kappa, cell.worker_seed, t.ceil() as usize + 1)?;
    let init = TrigPolynomial::random(derive_seed(cell.worker_seed, 1, 0), config.knob("k_max") as i64)?;
    let c = advdiff::closeness_check(&flow, cell.kappa, &init, t, config.grid, config.substeps)?;
    Ok(vec![object(json!({
        "t": t,
        "lhs": c.lhs,
        "rhs": c.rhs,
        "slack": c.slack(),
        "violated": c.slack() < -CLOSENESS_VIOLATION * c.rhs.max(1.0),
    }))])
}

fn prop_check(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Payloads {
    let (gamma, d) = (config.knob("gamma"), config.knob("d"));
    let rate = if gamma.is_nan() {
        fitted_rate(config, profile, cell.kappa, cell.worker_seed, config.grid)?.0
    } else {
        RateParams::new(if d.is_nan() { 1.0 } else { d }, gamma, 0.0)?
    };
    let probe = realize(config, profile, cell.kappa, cell.worker_seed, 2)?;
    let q = prop_quantities(&rate, probe.gradient_bound(), cell.kappa)?;
    let flow = realize(config, profile, cell.kappa, cell.worker_seed, q.tau_kappa.ceil() as usize + 1)?;
    let theta0 = SpectralField::random_bandlimited(derive_seed(cell.worker_seed, 3, 0), config.knob("k_max") as usize, config.grid)?;
    let check = theorem3_quantities(&rate, flow.gradient_bound(), cell.kappa, &theta0, &flow, config.substeps)?;
    Ok(vec![object(json!({
        "gamma": rate.gamma,
        "d": rate.d,
        "tau_kappa": check.quantities.tau_kappa,
        "a_kappa": check.quantities.a_kappa,
        "ratio": check.ratio,
        "threshold": check.threshold,
        "holds": check.holds,
    }))])
}

/// `κ` is the target diffusivity of the rescaled family; the inner flow is
/// built at `ε = √κ`.
fn rescaled_tdis(config: &ExperimentConfig, profile: &ShearProfile, cell: &Cell) -> Payloads {
    let eps = cell.kappa.sqrt();
    let inner = realize(config, profile, eps, cell.worker_seed, tdis_legs(cell.kappa, 1.0 / eps))?;
    let v = inner.rescale();
    let tol = config.knob("tol");
    let t_v = NormMeter::new(&v, cell.kappa, config.grid, tdis_options(config))?
        .dissipation_time(0.0, tol)?
        .t_dis_hat;
    let t_inner = NormMeter::new(&inner, eps, config.grid, tdis_options(config))?
        .dissipation_time(0.0, tol)?
        .t_dis_hat;
    let (gamma_hat, source) = match config.knob("gamma") {
        g if g.is_nan() => {
            let (rate, source) = fitted_rate(config, profile, eps, cell.worker_seed, config.knob("mix_grid") as usize)?;
            (rate.gamma, source)
        }
        g => (g, "override"),
    };
    let rate = RateParams::new(1.0, gamma_hat * cell.kappa.sqrt(), 0.0)?;
    let heuristic = heuristic_bound(&rate, config.knob("c_delta"), config.knob("delta"), 2, cell.kappa);
    Ok(vec![object(json!({
        "eps": eps,
        "t_dis_v": t_v,
        "t_dis_inner": t_inner,
        "scaled_inner": t_inner / eps,
        "gamma_hat": gamma_hat,
        "gamma_source": source,
        "heuristic": heuristic,
        "ratio": t_v / heuristic,
    }))])
}

impl ExperimentConfig {
    /// Knob value for keys that only some experiments define.
    pub fn knob_or(&self, key: &str, default: f64) -> f64 {
        match self.experiment.default_overrides().iter().any(|(k, _)| *k == key) {
            true => self.knob(key),
            false => default,
        }
    }
}
