//! The two-point chain: pairs of tracers advected by one realization, the
//! Lyapunov function `V = |x − y|_∞^{−p}` and Monte Carlo probes of its
//! drift and of minorization.
//!
//! Every estimate draws a fresh realization per sample, keyed by a seed
//! derived from `(seed, sample index)`, so results do not depend on the
//! number of worker threads.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowRealization, ShearSchedule};
use crate::profile::ShearProfile;
use crate::transport::leg_map;
use crate::{derive_seed, Point};

/// Distance on `T¹ = ℝ/2πℤ`.
pub fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % TAU;
    d.min(TAU - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub x: Point,
    pub y: Point,
}

impl PointPair {
    pub fn new(x: Point, y: Point) -> Result<Self> {
        let pair = Self { x, y };
        if pair.sep_inf() <= f64::EPSILON {
            return Err(Error::OnDiagonal);
        }
        Ok(pair)
    }

    pub fn sep_inf(&self) -> f64 {
        circle_distance(self.x[0], self.y[0]).max(circle_distance(self.x[1], self.y[1]))
    }

    pub fn swapped(&self) -> Self {
        Self { x: self.y, y: self.x }
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0 / 12.0) {
        return Err(Error::InvalidExponent(p));
    }
    Ok(())
}

/// `V(x, y) = |x − y|_∞^{−p}`.
pub fn lyapunov_v(pair: &PointPair, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let sep = pair.sep_inf();
    if sep <= f64::EPSILON {
        return Err(Error::OnDiagonal);
    }
    Ok(sep.powf(-p))
}

/// Advances both points through legs `start .. start + legs`.
pub fn two_point_advance_from<S: ShearSchedule + ?Sized>(
    flow: &S,
    start: usize,
    pair: &PointPair,
    legs: usize,
) -> Result<PointPair> {
    if start + legs > flow.horizon_legs() {
        let d = flow.leg_duration();
        return Err(Error::HorizonExceeded { requested: (start + legs) as f64 * d, horizon: flow.horizon_time() });
    }
    let (mut x, mut y) = (pair.x, pair.y);
    for leg in start..start + legs {
        x = leg_map(flow, leg, x, 1.0);
        y = leg_map(flow, leg, y, 1.0);
    }
    Ok(PointPair { x, y })
}

pub fn two_point_advance<S: ShearSchedule + ?Sized>(flow: &S, pair: &PointPair, legs: usize) -> Result<PointPair> {
    two_point_advance_from(flow, 0, pair, legs)
}

/// Inputs shared by the Monte Carlo probes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainParams {
    pub kappa: f64,
    pub amplitude: f64,
    pub profile: ShearProfile,
    pub seed: u64,
}

impl ChainParams {
    pub fn new(kappa: f64, amplitude: f64, seed: u64) -> Self {
        Self { kappa, amplitude, profile: ShearProfile::cosine_bump(), seed }
    }

    pub fn with_profile(self, profile: ShearProfile) -> Self {
        Self { profile, ..self }
    }

    fn realization(&self, seed: u64, horizon: usize) -> Result<FlowRealization> {
        FlowRealization::realize(self.kappa, self.amplitude, self.profile.clone(), seed, horizon.max(2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub p: f64,
    pub n_legs: usize,
    pub samples: usize,
    /// Estimate of `E[V ∘ Φ⁽²⁾] / V`.
    pub mean_ratio: f64,
    pub ci95_upper: f64,
    /// Separations are drawn uniformly from `[band/10, band]`.
    pub band: f64,
}

const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Mean of `V_after / V_before` over pairs with separation in
/// `[band/10, band]`, each advanced `2·legs` legs by a fresh realization.
pub fn drift_estimate(params: &ChainParams, p: f64, band: f64, samples: usize, legs: usize) -> Result<DriftEstimate> {
    check_exponent(p)?;
    if !(band > 0.0 && band <= PI) {
        return Err(Error::InvalidArgument(format!("band {band} outside (0, π]")));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("at least two samples are required".into()));
    }
    let ratios: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let seed = derive_seed(params.seed, 0, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sep = rng.gen_range(band / 10.0..=band);
            let pair = random_pair(&mut rng, sep);
            let flow = params.realization(seed, 2 * legs)?;
            let after = two_point_advance(&flow, &pair, 2 * legs)?;
            Ok(v_floor(&after, p) / v_floor(&pair, p))
        })
        .collect::<Result<_>>()?;
    let mean_ratio = tree_sum(&ratios) / samples as f64;
    let ci95_upper = bootstrap_upper(&ratios, derive_seed(params.seed, 1, 0)).max(mean_ratio);
    Ok(DriftEstimate { p, n_legs: legs, samples, mean_ratio, ci95_upper, band })
}

/// `V` with separations floored at the smallest positive double, so that
/// pairs collapsing onto the diagonal in floating point stay finite.
fn v_floor(pair: &PointPair, p: f64) -> f64 {
    pair.sep_inf().max(f64::MIN_POSITIVE).powf(-p)
}

/// A uniform point `x` and a point `y` on the `ℓ^∞` sphere of radius `sep`
/// around it.
fn random_pair(rng: &mut ChaCha8Rng, sep: f64) -> PointPair {
    let x = [rng.gen::<f64>() * TAU, rng.gen::<f64>() * TAU];
    let side = rng.gen_range(0..4usize);
    let along = rng.gen_range(-sep..=sep);
    let (axis, sign) = (side % 2, if side < 2 { 1.0 } else { -1.0 });
    let mut y = x;
    y[axis] = (x[axis] + sign * sep).rem_euclid(TAU);
    y[1 - axis] = (x[1 - axis] + along).rem_euclid(TAU);
    PointPair { x, y }
}

/// Pairwise summation; the result does not depend on how work was split.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => tree_sum(&values[..n / 2]) + tree_sum(&values[n / 2..]),
    }
}

/// 97.5th percentile of bootstrap means.
fn bootstrap_upper(values: &[f64], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    means[((0.975 * BOOTSTRAP_RESAMPLES as f64).ceil() as usize).min(BOOTSTRAP_RESAMPLES - 1)]
}

/// Per-stratum outcome of the drift fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumSlack {
    pub sep_lo: f64,
    pub sep_hi: f64,
    pub mean_v: f64,
    pub mean_pv: f64,
    /// `γ₁·mean_v + K − mean_pv`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FosterReport {
    pub gamma1_hat: f64,
    pub k_hat: f64,
    pub strata: Vec<StratumSlack>,
}

/// Geometry of the drift fit: strata cover `[η/N³, π]` in log scale, and
/// `γ₁` is read off the strata below `s*/N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FosterGeometry {
    pub eta: f64,
    pub s_star: f64,
    pub strata: usize,
    /// Pairs of legs per transition.
    pub leg_pairs: usize,
}

impl Default for FosterGeometry {
    fn default() -> Self {
        Self { eta: 0.5, s_star: 0.5, strata: 12, leg_pairs: 3 }
    }
}

/// Fits `E[V ∘ Φ⁽²⁾] ≤ γ₁ V + K` over separation strata. `γ₁` is the
/// largest stratum ratio `mean_pv / mean_v` in the near-diagonal region,
/// and `K` the smallest constant making the bound hold on every stratum.
pub fn foster_lyapunov_check(params: &ChainParams, p: f64, samples: usize, geometry: FosterGeometry) -> Result<FosterReport> {
    check_exponent(p)?;
    if geometry.strata == 0 || samples < geometry.strata {
        return Err(Error::InvalidArgument("need at least one sample per stratum".into()));
    }
    let n = crate::flow::n_kappa_of(params.kappa)? as f64;
    let (lo, hi) = ((geometry.eta / (n * n * n)).ln(), PI.ln());
    let width = (hi - lo) / geometry.strata as f64;
    let per = samples / geometry.strata;
    let legs = 2 * geometry.leg_pairs;
    let mut raw = Vec::with_capacity(geometry.strata);
    for s in 0..geometry.strata {
        let (a, b) = ((lo + s as f64 * width).exp(), (lo + (s + 1) as f64 * width).exp());
        let pairs: Vec<(f64, f64)> = (0..per)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let seed = derive_seed(params.seed, 2 + s as u64, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sep = (rng.gen_range(a.ln()..=b.ln())).exp();
                let pair = random_pair(&mut rng, sep);
                let flow = params.realization(seed, legs)?;
                let after = two_point_advance(&flow, &pair, legs)?;
                Ok((v_floor(&pair, p), v_floor(&after, p)))
            })
            .collect::<Result<_>>()?;
        let v: Vec<f64> = pairs.iter().map(|q| q.0).collect();
        let pv: Vec<f64> = pairs.iter().map(|q| q.1).collect();
        raw.push((a, b, tree_sum(&v) / per as f64, tree_sum(&pv) / per as f64));
    }
    let near = geometry.s_star / n;
    let gamma1 = raw
        .iter()
        .filter(|r| r.1 <= near)
        .map(|r| r.3 / r.2)
        .fold(f64::NEG_INFINITY, f64::max);
    let gamma1 = if gamma1.is_finite() { gamma1 } else { raw[0].3 / raw[0].2 };
    let k = raw.iter().map(|r| r.3 - gamma1 * r.2).fold(0.0, f64::max);
    let strata = raw
        .iter()
        .map(|&(a, b, v, pv)| StratumSlack { sep_lo: a, sep_hi: b, mean_v: v, mean_pv: pv, slack: gamma1 * v + k - pv })
        .collect();
    Ok(FosterReport { gamma1_hat: gamma1, k_hat: k, strata })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinorizationEstimate {
    pub alpha_hat: f64,
    /// Normal-approximation 95% lower bound for the minimising cell.
    pub ci_low: f64,
    pub bins: usize,
    pub samples: usize,
    pub start_pairs: usize,
}

/// Empirical 3-step transition masses on a `bins⁴` partition of `T² × T²`,
/// relative to the uniform measure on the cells that stay clear of the
/// diagonal band of width `η/N`. Start pairs have separation at least `η/N³`.
pub fn minorization_probe(params: &ChainParams, samples: usize, bins: usize, eta: f64) -> Result<MinorizationEstimate> {
    if bins == 0 || bins > 16 {
        return Err(Error::InvalidArgument(format!("{bins} bins per axis; expected 1..=16")));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let n = crate::flow::n_kappa_of(params.kappa)? as f64;
    let band = eta / n;
    let w = TAU / bins as f64;
    let cells = bins.pow(4);
    let cell_index = |pair: &PointPair| {
        let b = |v: f64| ((v.rem_euclid(TAU) / w) as usize).min(bins - 1);
        ((b(pair.x[0]) * bins + b(pair.x[1])) * bins + b(pair.y[0])) * bins + b(pair.y[1])
    };
    let off_diagonal: Vec<bool> = (0..cells)
        .map(|c| {
            let (x0, x1, y0, y1) = (c / bins.pow(3), (c / bins.pow(2)) % bins, (c / bins) % bins, c % bins);
            let gap = |i: usize, j: usize| {
                let d = i.abs_diff(j).min(bins - i.abs_diff(j));
                d.saturating_sub(1) as f64 * w
            };
            gap(x0, y0).max(gap(x1, y1)) >= band
        })
        .collect();
    let kept = off_diagonal.iter().filter(|&&k| k).count();
    if kept == 0 {
        return Err(Error::InvalidArgument("no cells clear of the diagonal band".into()));
    }
    let reference = 1.0 / kept as f64;
    let min_sep = eta / (n * n * n);
    let mut start_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, u64::MAX, 0));
    let starts: Vec<PointPair> = (0..4)
        .map(|_| {
            let sep = (start_rng.gen_range(min_sep.ln()..=PI.ln())).exp();
            random_pair(&mut start_rng, sep)
        })
        .collect();
    let mut best = (f64::INFINITY, 0.0);
    for (j, start) in starts.iter().enumerate() {
        let landed: Vec<usize> = (0..samples)
            .into_par_iter()
            .map(|i| -> Result<usize> {
                let seed = derive_seed(params.seed, 1000 + j as u64, i as u64);
                let flow = params.realization(seed, 6)?;
                Ok(cell_index(&two_point_advance(&flow, start, 6)?))
            })
            .collect::<Result<_>>()?;
        let mut counts = vec![0usize; cells];
        landed.iter().for_each(|&c| counts[c] += 1);
        for (c, &count) in counts.iter().enumerate() {
            if !off_diagonal[c] {
                continue;
            }
            let mass = count as f64 / samples as f64;
            let alpha = mass / reference;
            if alpha < best.0 {
                let low = mass - 1.96 * (mass * (1.0 - mass) / samples as f64).sqrt();
                best = (alpha, low.max(0.0) / reference);
            }
        }
    }
    Ok(MinorizationEstimate { alpha_hat: best.0, ci_low: best.1, bins, samples, start_pairs: starts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(kappa: f64, a: f64, seed: u64) -> FlowRealization {
        FlowRealization::realize(kappa, a, ShearProfile::cosine_bump(), seed, 8).unwrap()
    }

    #[test]
    fn lyapunov_values() {
        let pair = PointPair::new([0.0, 0.0], [PI, 0.5]).unwrap();
        assert!((lyapunov_v(&pair, 1.0 / 16.0).unwrap() - 0.930_954).abs() < 1e-6);
        let unit = PointPair::new([0.2, 0.3], [1.2, 0.1]).unwrap();
        assert!((lyapunov_v(&unit, 0.05).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(lyapunov_v(&unit, 0.1), Err(Error::InvalidExponent(_))));
        assert!(matches!(PointPair::new([1.0, 1.0], [1.0, 1.0]), Err(Error::OnDiagonal)));
        let wrapped = PointPair::new([0.05, 1.0], [TAU - 0.05, 1.0]).unwrap();
        assert!((wrapped.sep_inf() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_symmetry_and_level_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let sep = rng.gen_range(1e-3..PI);
            let pair = random_pair(&mut rng, sep);
            let v = lyapunov_v(&pair, 1.0 / 16.0).unwrap();
            assert_eq!(v, lyapunov_v(&pair.swapped(), 1.0 / 16.0).unwrap());
            assert!(v >= PI.powf(-1.0 / 16.0) - 1e-15);
            let r = rng.gen_range(1.0..1.5);
            assert_eq!(v <= r, pair.sep_inf() >= r.powf(-16.0));
        }
    }

    #[test]
    fn advance_matches_single_points() {
        let r = flow(1.0 / 16.0, 50.0, 3);
        let pair = PointPair::new([0.3, 1.7], [2.2, 0.4]).unwrap();
        let out = two_point_advance(&r, &pair, 4).unwrap();
        let single = |mut p: Point| {
            for leg in 0..4 {
                p = leg_map(&r, leg, p, 1.0);
            }
            p
        };
        assert_eq!(out.x, single(pair.x));
        assert_eq!(out.y, single(pair.y));
        assert_eq!(two_point_advance(&r, &pair.swapped(), 4).unwrap(), out.swapped());
        assert!(two_point_advance(&r, &pair, 9).is_err());
    }

    #[test]
    fn horizontal_leg_keeps_vertical_separation() {
        let r = flow(1.0 / 16.0, 50.0, 4);
        let pair = PointPair::new([0.3, 1.7], [2.2, 1.7]).unwrap();
        let out = two_point_advance(&r, &pair, 1).unwrap();
        assert_eq!(out.x[1], out.y[1]);
    }

    #[test]
    fn two_leg_separation_bound() {
        let r = flow(1.0 / 16.0, 50.0, 5);
        let c = (10.0 * 50.0 * 16.0 * r.profile().c1_norm()).powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let sep = rng.gen_range(1e-6..1e-3);
            let pair = random_pair(&mut rng, sep);
            let out = two_point_advance(&r, &pair, 2).unwrap();
            let ratio = out.sep_inf() / pair.sep_inf();
            assert!(ratio <= c && ratio >= 1.0 / c);
        }
    }

    #[test]
    fn translation_equivariance() {
        let r = flow(1.0 / 16.0, 2.0, 6);
        let tau = [0.37, 1.1];
        let moved = r.translated(tau);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let pair = random_pair(&mut rng, 0.2);
            let shift = |p: Point| [(p[0] + tau[0]).rem_euclid(TAU), (p[1] + tau[1]).rem_euclid(TAU)];
            let a = two_point_advance(&r, &pair, 3).unwrap();
            let b = two_point_advance(&moved, &PointPair { x: shift(pair.x), y: shift(pair.y) }, 3).unwrap();
            for (u, v) in [(shift(a.x), b.x), (shift(a.y), b.y)] {
                assert!(circle_distance(u[0], v[0]) < 1e-9 && circle_distance(u[1], v[1]) < 1e-9);
            }
        }
    }

    #[test]
    fn frozen_flow_drift_is_one() {
        let est = drift_estimate(&ChainParams::new(1.0 / 16.0, 0.0, 1), 1.0 / 16.0, 0.1, 1000, 1).unwrap();
        assert_eq!(est.mean_ratio, 1.0);
        assert!(est.ci95_upper >= est.mean_ratio);
    }

    #[test]
    fn drift_is_deterministic_and_bounded_far_from_diagonal() {
        let params = ChainParams::new(1.0 / 8.0, 50.0, 7);
        let a = drift_estimate(&params, 1.0 / 16.0, PI, 1000, 1).unwrap();
        let b = drift_estimate(&params, 1.0 / 16.0, PI, 1000, 1).unwrap();
        assert_eq!(a, b);
        let c1 = ShearProfile::cosine_bump().c1_norm();
        let trivial = (10.0 * 50.0 * 8.0 * c1).powf(2.0 / 16.0);
        assert!(a.mean_ratio <= trivial);
    }

    #[test]
    fn tree_sum_is_exact_on_small_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(tree_sum(&v), 500_500.0);
    }

    #[test]
    fn frozen_flow_has_no_minorization() {
        let est = minorization_probe(&ChainParams::new(1.0 / 8.0, 0.0, 1), 2000, 4, 0.5).unwrap();
        assert_eq!(est.alpha_hat, 0.0);
        assert!(minorization_probe(&ChainParams::new(1.0 / 8.0, 0.0, 1), 10, 17, 0.5).is_err());
    }

    #[test]
    fn foster_fit_covers_every_stratum() {
        let report =
            foster_lyapunov_check(&ChainParams::new(1.0 / 8.0, 50.0, 9), 1.0 / 16.0, 1200, FosterGeometry::default())
                .unwrap();
        assert_eq!(report.strata.len(), 12);
        assert!(report.strata.iter().all(|s| s.slack >= -1e-12));
        assert!(report.k_hat >= 0.0);
    }
}
