//! Estimators for mixing rates of the transport dynamics and for
//! dissipation times of the advection-diffusion dynamics.

use std::f64::consts::LN_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::advdiff::{EvolveSpec, Propagator, DEFAULT_SUBSTEPS};
use crate::bounds::{prop_quantities, MixingRate, PropQuantities, RateParams};
use crate::error::{Error, Result};
use crate::flow::ShearSchedule;
use crate::spectral::SpectralField;
use crate::transport::{pullback_between, TrigPolynomial};

/// Top-octave energy fraction above which a field counts as unresolved.
pub const ALIAS_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub s: usize,
    pub n: usize,
    pub hminus1: f64,
    pub h1_init: f64,
    pub ratio: f64,
    pub aliased: bool,
}

/// `‖φ_{s+n}‖_{H⁻¹} / ‖φ_s‖_{H¹}` for `n = 0, 2, …, n_max`, with `φ`
/// transported exactly from `init` at leg `s`.
pub fn mix_records<S: ShearSchedule + ?Sized>(
    flow: &S,
    init: &TrigPolynomial,
    s: usize,
    n_max: usize,
    m: usize,
) -> Result<Vec<MixRecord>> {
    if s % 2 != 0 || n_max % 2 != 0 {
        return Err(Error::InvalidArgument("initial leg and window must be even".into()));
    }
    if s + n_max > flow.horizon_legs() {
        let d = flow.leg_duration();
        return Err(Error::HorizonExceeded { requested: (s + n_max) as f64 * d, horizon: flow.horizon_time() });
    }
    let h1_init = init.sobolev_norm(1.0);
    (0..=n_max)
        .step_by(2)
        .map(|n| {
            let field = pullback_between(flow, s, n, init, m)?.mean_free();
            let hminus1 = field.sobolev_norm(-1.0)?;
            Ok(MixRecord {
                s,
                n,
                hminus1,
                h1_init,
                ratio: hminus1 / h1_init,
                aliased: field.top_octave_fraction() > ALIAS_THRESHOLD,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub gamma_hat: f64,
    pub prefactor_hat: f64,
    pub fit_window: (usize, usize),
    /// RMS of the log-linear residuals.
    pub residual: f64,
    /// Standard error of the fitted slope.
    pub gamma_stderr: f64,
    pub points: usize,
}

impl RateFit {
    pub fn as_rate(&self) -> Result<RateParams> {
        RateParams::new(self.prefactor_hat.max(1.0), self.gamma_hat, 0.0)
    }
}

/// Least-squares fit of `log ratio` against `n` over the non-aliased
/// records with positive ratio.
pub fn fit_rate(records: &[MixRecord]) -> Result<RateFit> {
    let pts: Vec<(f64, f64, usize)> = records
        .iter()
        .filter(|r| !r.aliased && r.ratio > 0.0)
        .map(|r| (r.n as f64, r.ratio.ln(), r.n))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!("{} usable records, need 4", pts.len())));
    }
    let line = least_squares(&pts.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>());
    let lo = pts.iter().map(|p| p.2).min().unwrap();
    let hi = pts.iter().map(|p| p.2).max().unwrap();
    Ok(RateFit {
        gamma_hat: -line.slope,
        prefactor_hat: line.intercept.exp(),
        fit_window: (lo, hi),
        residual: line.rms,
        gamma_stderr: line.slope_stderr,
        points: pts.len(),
    })
}

/// Restricts to records with `n_min ≤ n ≤ n_max` before fitting.
pub fn fit_rate_window(records: &[MixRecord], n_min: usize, n_max: usize) -> Result<RateFit> {
    let window: Vec<MixRecord> = records.iter().filter(|r| r.n >= n_min && r.n <= n_max).copied().collect();
    fit_rate(&window)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
    pub rms: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn least_squares(pts: &[(f64, f64)]) -> Line {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let dof = (n - 2.0).max(1.0);
    let slope_stderr = if sxx > 0.0 { (sse / dof / sxx).sqrt() } else { f64::INFINITY };
    Line { slope, intercept, rms: (sse / n).sqrt(), slope_stderr }
}

/// Knobs of the dissipation-time estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdisOptions {
    pub substeps_per_leg: usize,
    pub max_power_iters: usize,
    /// Relative change of the Rayleigh quotient that stops the iteration.
    pub rayleigh_tol: f64,
    /// Seed of the random starting field.
    pub start_seed: u64,
    pub max_bisections: usize,
}

impl Default for TdisOptions {
    fn default() -> Self {
        Self {
            substeps_per_leg: DEFAULT_SUBSTEPS,
            max_power_iters: 20,
            rayleigh_tol: 1e-4,
            start_seed: 0x5eed,
            max_bisections: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub t: f64,
    pub norm: f64,
    pub iterations: usize,
    /// Rayleigh quotients `‖Tf‖²/‖f‖²` in iteration order.
    pub quotients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdisResult {
    pub s: f64,
    pub kappa: f64,
    pub t_dis_hat: f64,
    pub op_norm_at_t: f64,
    pub power_iters: usize,
    pub bisection_tol: f64,
    /// Every `(t, N(t))` evaluated, in evaluation order.
    pub trace: Vec<(f64, f64)>,
    /// Half-life of `sin(x₁)` started at `s`, if reached within the bracket.
    pub witness_t: Option<f64>,
}

impl TdisResult {
    /// Whether the evaluated norms are non-increasing in `t` up to `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        let mut sorted = self.trace.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        sorted.windows(2).all(|w| w[1].1 <= w[0].1 + slack)
    }
}

/// Operator-norm and dissipation-time estimator bound to one flow and grid.
pub struct NormMeter<'a> {
    flow: &'a dyn ShearSchedule,
    kappa: f64,
    m: usize,
    opts: TdisOptions,
    prop: Propagator,
    start: Vec<Complex64>,
    vector: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl<'a> NormMeter<'a> {
    pub fn new(flow: &'a dyn ShearSchedule, kappa: f64, m: usize, opts: TdisOptions) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidKappa(kappa));
        }
        let start = SpectralField::random_bandlimited(opts.start_seed, (m / 4).max(1), m)?;
        let start = start.coefficients().to_vec();
        Ok(Self {
            flow,
            kappa,
            m,
            opts,
            prop: Propagator::new(m)?,
            work: start.clone(),
            vector: start.clone(),
            start,
        })
    }

    /// `N(t) = ‖T_{s,s+t}‖` by power iteration on `T*T`, warm-started from
    /// the previous top vector.
    pub fn norm(&mut self, s: f64, t: f64) -> Result<NormEstimate> {
        let spec = EvolveSpec::new(self.flow, self.kappa, s, s + t).with_substeps(self.opts.substeps_per_leg);
        let mut quotients = Vec::new();
        if sq_norm(&self.vector) == 0.0 {
            self.vector.copy_from_slice(&self.start);
        }
        normalize(&mut self.vector);
        for _ in 0..self.opts.max_power_iters {
            self.work.copy_from_slice(&self.vector);
            self.prop.apply(&spec, &mut self.work, false, false)?;
            let q = sq_norm(&self.work);
            if q == 0.0 {
                // the norm underflowed; keep the old direction for the next call
                quotients.push(0.0);
                break;
            }
            normalize(&mut self.work);
            self.prop.apply(&spec, &mut self.work, true, false)?;
            self.work[0] = Complex64::default();
            std::mem::swap(&mut self.vector, &mut self.work);
            normalize(&mut self.vector);
            let done = quotients.last().is_some_and(|&prev: &f64| (q - prev).abs() <= self.opts.rayleigh_tol * q);
            quotients.push(q);
            if done {
                break;
            }
        }
        let q = *quotients.last().unwrap();
        Ok(NormEstimate { t, norm: q.sqrt(), iterations: quotients.len(), quotients })
    }

    /// Bisects `N(t) = 1/2` on `[1, 1.1·log 2/κ]`, or on `[0, …]` when one
    /// unit of time already halves every datum.
    pub fn dissipation_time(&mut self, s: f64, tol: f64) -> Result<TdisResult> {
        let available = self.flow.horizon_time() - s;
        let mut hi = (1.1 * LN_2 / self.kappa).min(available);
        let mut trace = Vec::new();
        let mut iters = 0;
        let mut eval = |me: &mut Self, t: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
            let e = me.norm(s, t)?;
            iters += e.iterations;
            trace.push((t, e.norm));
            Ok(e.norm)
        };
        let mut n_hi = eval(self, hi, &mut trace)?;
        if n_hi > 0.5 {
            return Err(Error::NoDecayWithinHorizon { t: s + hi, norm: n_hi });
        }
        let mut lo = if hi > 1.0 && eval(self, 1.0, &mut trace)? > 0.5 { 1.0 } else { 0.0 };
        for _ in 0..self.opts.max_bisections {
            if hi - lo <= tol * hi && (n_hi - 0.5).abs() <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let n_mid = eval(self, mid, &mut trace)?;
            if n_mid > 0.5 {
                lo = mid;
            } else {
                hi = mid;
                n_hi = n_mid;
            }
        }
        let witness_t = self.witness(s, hi.max(1.0) * 1.5)?;
        Ok(TdisResult {
            s,
            kappa: self.kappa,
            t_dis_hat: hi,
            op_norm_at_t: n_hi,
            power_iters: iters,
            bisection_tol: tol,
            trace,
            witness_t,
        })
    }

    fn witness(&mut self, s: f64, span: f64) -> Result<Option<f64>> {
        let t = (s + span).min(self.flow.horizon_time());
        let spec = EvolveSpec::new(self.flow, self.kappa, s, t).with_substeps(self.opts.substeps_per_leg);
        let mut c = TrigPolynomial::sin_x1().sample(self.m)?.coefficients().to_vec();
        c[0] = Complex64::default();
        let trace = self.prop.apply(&spec, &mut c, false, true)?;
        let target = 0.25 * trace.samples[0].l2_sq;
        Ok(trace.samples.windows(2).find(|w| w[1].l2_sq <= target).map(|w| {
            let (a, b) = (w[0].l2_sq.sqrt(), w[1].l2_sq.sqrt());
            let half = 0.5 * trace.samples[0].l2_sq.sqrt();
            w[0].time - s + (a - half) / (a - b) * (w[1].time - w[0].time)
        }))
    }
}

fn sq_norm(c: &[Complex64]) -> f64 {
    c.iter().map(|v| v.norm_sqr()).sum()
}

fn normalize(c: &mut [Complex64]) {
    let n = sq_norm(c).sqrt();
    if n > 0.0 {
        c.iter_mut().for_each(|v| *v /= n);
    }
}

/// `t_dis^s` of `flow` at diffusivity `kappa` on an `m × m` grid.
pub fn dissipation_time(flow: &dyn ShearSchedule, kappa: f64, s: f64, m: usize, tol: f64) -> Result<TdisResult> {
    NormMeter::new(flow, kappa, m, TdisOptions::default())?.dissipation_time(s, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropCheck {
    pub quantities: PropQuantities,
    pub ratio: f64,
    pub threshold: f64,
    pub holds: bool,
}

/// Evolves `theta0` to `τ_κ` and compares `‖θ_{τ_κ}‖/‖θ₀‖` with
/// `√(1 − A_κ)`.
pub fn theorem3_quantities(
    rate: &dyn MixingRate,
    grad_u_sup: f64,
    kappa: f64,
    theta0: &SpectralField,
    flow: &dyn ShearSchedule,
    substeps_per_leg: usize,
) -> Result<PropCheck> {
    let q = prop_quantities(rate, grad_u_sup, kappa)?;
    let spec = EvolveSpec::new(flow, kappa, 0.0, q.tau_kappa)
        .with_substeps(substeps_per_leg)
        .with_record_every(usize::MAX);
    let (out, _) = Propagator::new(theta0.resolution())?.evolve(&spec, theta0)?;
    let ratio = out.l2_norm() / theta0.l2_norm();
    let threshold = (1.0 - q.a_kappa).sqrt();
    Ok(PropCheck { quantities: q, ratio, threshold, holds: ratio <= threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowRealization;
    use crate::profile::ShearProfile;

    fn synthetic(f: impl Fn(f64) -> f64, ns: impl Iterator<Item = usize>) -> Vec<MixRecord> {
        ns.map(|n| MixRecord { s: 0, n, hminus1: f(n as f64), h1_init: 1.0, ratio: f(n as f64), aliased: false })
            .collect()
    }

    #[test]
    fn fit_exact_exponential() {
        let recs = synthetic(|n| 3.0 * (-0.7 * n).exp(), (0..=12).step_by(2));
        let f = fit_rate(&recs).unwrap();
        assert!((f.gamma_hat - 0.7).abs() < 1e-12);
        assert!((f.prefactor_hat - 3.0).abs() < 1e-10);
        assert!(f.residual < 1e-10);
        assert_eq!(f.fit_window, (0, 12));
    }

    #[test]
    fn fit_flags_algebraic_decay() {
        let recs = synthetic(|n| 1.0 / (n * n), (2..=20).step_by(2));
        assert!(fit_rate(&recs).unwrap().residual > 0.05);
    }

    #[test]
    fn fit_needs_unaliased_records() {
        let mut recs = synthetic(|n| (-n).exp(), (0..=12).step_by(2));
        recs.iter_mut().for_each(|r| r.aliased = true);
        assert!(matches!(fit_rate(&recs), Err(Error::InsufficientData(_))));
        let w = synthetic(|n| (-n).exp(), (0..=12).step_by(2));
        assert!(matches!(fit_rate_window(&w, 4, 8), Err(Error::InsufficientData(_))));
        assert_eq!(fit_rate_window(&w, 4, 10).unwrap().points, 4);
    }

    #[test]
    fn mix_record_at_zero_is_unity_for_first_mode() {
        let r = FlowRealization::realize(1.0 / 16.0, 50.0, ShearProfile::cosine_bump(), 1, 8).unwrap();
        let recs = mix_records(&r, &TrigPolynomial::sin_x1(), 0, 0, 32).unwrap();
        assert_eq!(recs.len(), 1);
        assert!((recs[0].ratio - 1.0).abs() < 1e-12);
        assert!(!recs[0].aliased);
        assert!(mix_records(&r, &TrigPolynomial::sin_x1(), 2, 8, 32).is_err());
        assert!(mix_records(&r, &TrigPolynomial::sin_x1(), 1, 2, 32).is_err());
    }

    /// A flow that repeats one horizontal shear forever.
    struct SteadyShear(FlowRealization);

    impl ShearSchedule for SteadyShear {
        fn leg_duration(&self) -> f64 {
            1.0
        }
        fn horizon_legs(&self) -> usize {
            64
        }
        fn leg_speed(&self, leg: usize, coord: f64) -> f64 {
            if leg % 2 == 0 {
                self.0.shear_speed(0, coord)
            } else {
                0.0
            }
        }
        fn gradient_bound(&self) -> f64 {
            self.0.slope_bound()
        }
        fn is_frozen(&self) -> bool {
            false
        }
    }

    #[test]
    fn steady_shear_mixes_algebraically() {
        let base = FlowRealization::realize(1.0 / 4.0, 0.5, ShearProfile::cosine_bump(), 2, 2).unwrap();
        let flow = SteadyShear(base.clone());
        let m = 1024;
        let recs = mix_records(&flow, &TrigPolynomial::sin_x1(), 0, 16, m).unwrap();
        // brute force: sin(x₁ − (n/2)ψ(x₂)) summed directly in H⁻¹
        for r in &recs[1..] {
            let shift = r.n as f64 / 2.0;
            let exact = SpectralField::from_fn(m, |x1, x2| (x1 - shift * base.shear_speed(0, x2)).sin()).unwrap();
            let h = exact.mean_free().sobolev_norm(-1.0).unwrap();
            assert!((h - r.hminus1).abs() < 1e-10);
        }
        let tail: Vec<(f64, f64)> = recs[4..].iter().map(|r| ((r.n as f64).ln(), r.ratio.ln())).collect();
        let algebraic = least_squares(&tail);
        assert!(algebraic.slope > -2.0 && algebraic.slope < -0.3, "{algebraic:?}");
        let fit = fit_rate(&recs[4..]).unwrap();
        assert!(fit.residual > algebraic.rms);
    }

    #[test]
    fn heat_baseline_dissipation_time() {
        let r = FlowRealization::realize(0.25, 0.0, ShearProfile::cosine_bump(), 0, 80).unwrap();
        let res = dissipation_time(&r, 0.01, 0.0, 16, 1e-4).unwrap();
        assert!((res.t_dis_hat - LN_2 / 0.01).abs() < 0.01 * LN_2 / 0.01);
        assert!((res.op_norm_at_t - 0.5).abs() <= 1e-4);
        assert!(res.is_monotone(1e-12));
        let w = res.witness_t.unwrap();
        assert!((w - LN_2 / 0.01).abs() < 1e-2);
    }

    #[test]
    fn power_iteration_is_monotone_and_stable() {
        let r = FlowRealization::realize(0.125, 50.0, ShearProfile::cosine_bump(), 3, 8).unwrap();
        let mut meter = NormMeter::new(&r, 0.125, 32, TdisOptions { rayleigh_tol: 0.0, ..Default::default() }).unwrap();
        let e = meter.norm(0.0, 2.0).unwrap();
        assert!(e.quotients.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
        let opts = TdisOptions { max_power_iters: 40, rayleigh_tol: 0.0, ..Default::default() };
        let twice = NormMeter::new(&r, 0.125, 32, opts).unwrap().norm(0.0, 2.0).unwrap();
        assert!((e.norm.powi(2) - twice.norm.powi(2)).abs() < 1e-3);
    }

    #[test]
    fn poincare_ceiling_and_horizon() {
        let r = FlowRealization::realize(0.125, 50.0, ShearProfile::cosine_bump(), 4, 8).unwrap();
        let res = dissipation_time(&r, 0.125, 0.0, 32, 1e-3).unwrap();
        assert!(res.t_dis_hat <= LN_2 / 0.125 * (1.0 + 1e-3));
        assert!(res.is_monotone(1e-3));
        let frozen = FlowRealization::realize(0.125, 0.0, ShearProfile::cosine_bump(), 4, 4).unwrap();
        assert!(matches!(
            dissipation_time(&frozen, 0.01, 0.0, 16, 1e-3),
            Err(Error::NoDecayWithinHorizon { .. })
        ));
    }

    #[test]
    fn single_step_decay_check_holds() {
        let r = FlowRealization::realize(1.0 / 16.0, 50.0, ShearProfile::cosine_bump(), 5, 8).unwrap();
        let rate = RateParams::new(1.0, 1.0, 0.0).unwrap();
        let theta0 = SpectralField::random_bandlimited(1, 4, 64).unwrap();
        let check = theorem3_quantities(&rate, r.slope_bound(), 1.0 / 16.0, &theta0, &r, 32).unwrap();
        assert!(check.quantities.clamped);
        assert!(check.holds, "{check:?}");
    }
}
