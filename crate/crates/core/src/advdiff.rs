//! Split-step spectral solver for `∂_t θ + u·∇θ − κΔθ = 0`.
//!
//! Each substep is `H(δ/2) S(δ) H(δ/2)` with `H` the exact heat multiplier
//! and `S` the exact shear over `δ`. The shear is applied line by line: in
//! the mixed representation (Fourier along the moving axis, physical along
//! the transverse axis) it is the phase shift `e^{-ikδψ(x)}`. The state is
//! kept in spectral space, transposed so that the moving wavenumber indexes
//! rows; switching leg direction costs one transpose.
//!
//! On the moving-axis Nyquist line the phase shift is replaced by its real
//! part `cos(Mδψ/2)`, which keeps the field real and the adjoint exact.

use std::f64::consts::{E, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flow::{LegKind, ShearSchedule};
use crate::spectral::{k_squared, transpose, Fft2, SpectralField};
use crate::transport::{pullback_at, TrigPolynomial};

pub const DEFAULT_SUBSTEPS: usize = 64;

/// Parameters of one evolution `T_{s,t}`.
#[derive(Clone, Copy)]
pub struct EvolveSpec<'a> {
    pub flow: &'a dyn ShearSchedule,
    /// Diffusivity of the equation; independent of the flow's construction κ.
    pub kappa_solver: f64,
    pub s: f64,
    pub t: f64,
    pub substeps_per_leg: usize,
    pub record_every: usize,
}

impl<'a> EvolveSpec<'a> {
    pub fn new(flow: &'a dyn ShearSchedule, kappa_solver: f64, s: f64, t: f64) -> Self {
        Self { flow, kappa_solver, s, t, substeps_per_leg: DEFAULT_SUBSTEPS, record_every: 1 }
    }

    pub fn with_substeps(self, substeps_per_leg: usize) -> Self {
        Self { substeps_per_leg, ..self }
    }

    pub fn with_record_every(self, record_every: usize) -> Self {
        Self { record_every, ..self }
    }

    pub fn with_interval(self, s: f64, t: f64) -> Self {
        Self { s, t, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_solver >= 0.0 && self.kappa_solver.is_finite()) {
            return Err(Error::InvalidArgument(format!("kappa_solver = {}", self.kappa_solver)));
        }
        if self.substeps_per_leg == 0 || self.record_every == 0 {
            return Err(Error::InvalidArgument("substeps_per_leg and record_every must be positive".into()));
        }
        let horizon = self.flow.horizon_time();
        if !(self.s >= 0.0 && self.s <= self.t) || self.t > horizon * (1.0 + 1e-14) {
            return Err(Error::HorizonExceeded { requested: self.t, horizon });
        }
        Ok(())
    }

    /// Substeps `(leg, δ)` between `s` and `t` on the global grid of
    /// `leg_duration / substeps_per_leg`, with partial steps at the ends.
    fn pieces(&self) -> Vec<(usize, f64)> {
        let d = self.flow.leg_duration();
        let dt = d / self.substeps_per_leg as f64;
        let last_leg = self.flow.horizon_legs() - 1;
        let mut out = Vec::new();
        let mut start = self.s;
        while start < self.t {
            let node = (start / dt * (1.0 + 1e-13)).floor() + 1.0;
            let end = (node * dt).min(self.t);
            if end - start > 1e-12 * dt {
                let leg = ((0.5 * (start + end) / d).floor() as usize).min(last_leg);
                out.push((leg, end - start));
            }
            start = end;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub time: f64,
    pub l2_sq: f64,
    pub h1_sq: f64,
}

/// Energy ledger of one evolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyTrace {
    pub samples: Vec<TraceSample>,
    /// `2κ ∫ ‖∇θ‖² dt` by the trapezoid rule over every substep.
    pub dissipated: f64,
}

impl EnergyTrace {
    /// `∫ ‖∇θ‖ dt` by the trapezoid rule over the recorded samples.
    pub fn gradient_integral(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| 0.5 * (w[0].h1_sq.sqrt() + w[1].h1_sq.sqrt()) * (w[1].time - w[0].time))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    /// Rows over `k₂`, columns over `k₁`.
    Native,
    /// Rows over `k₁`, columns over `k₂`.
    Transposed,
}

impl Layout {
    fn for_leg(leg: usize) -> Self {
        match LegKind::of(leg) {
            LegKind::Horizontal => Layout::Transposed,
            LegKind::Vertical => Layout::Native,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ShearKey {
    leg: usize,
    dt: f64,
    sign: f64,
}

/// Reusable solver state for one grid size: FFT plans, buffers and
/// multiplier tables.
pub struct Propagator {
    m: usize,
    fft: Fft2,
    ksq: Vec<f64>,
    heat: Option<(f64, Vec<f64>)>,
    shear: Option<(ShearKey, Vec<Complex64>)>,
    speeds: Vec<f64>,
}

impl Propagator {
    pub fn new(m: usize) -> Result<Self> {
        crate::spectral::check_grid(m)?;
        let ksq = (0..m * m).map(|i| k_squared(i, m)).collect();
        Ok(Self { m, fft: Fft2::new(m), ksq, heat: None, shear: None, speeds: vec![0.0; m] })
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    /// Evolves `init`; the trace holds every `record_every`-th substep plus
    /// both endpoints.
    pub fn evolve(&mut self, spec: &EvolveSpec<'_>, init: &SpectralField) -> Result<(SpectralField, EnergyTrace)> {
        let mut c = self.load(init)?;
        let trace = self.apply(spec, &mut c, false, true)?;
        Ok((SpectralField::from_coefficients(self.m, c)?, trace))
    }

    pub fn adjoint_evolve(&mut self, spec: &EvolveSpec<'_>, init: &SpectralField) -> Result<SpectralField> {
        let mut c = self.load(init)?;
        self.apply(spec, &mut c, true, false)?;
        SpectralField::from_coefficients(self.m, c)
    }

    fn load(&self, init: &SpectralField) -> Result<Vec<Complex64>> {
        if init.resolution() != self.m {
            return Err(Error::GridMismatch(init.resolution(), self.m));
        }
        let mut c = init.coefficients().to_vec();
        check_mean(&c)?;
        c[0] = Complex64::default();
        Ok(c)
    }

    /// Applies `T_{s,t}` (or its adjoint) to normalised coefficients in the
    /// native layout.
    pub fn apply(
        &mut self,
        spec: &EvolveSpec<'_>,
        coeffs: &mut [Complex64],
        adjoint: bool,
        record: bool,
    ) -> Result<EnergyTrace> {
        spec.validate()?;
        if coeffs.len() != self.m * self.m {
            return Err(Error::GridMismatch(coeffs.len(), self.m * self.m));
        }
        check_mean(coeffs)?;
        let mut pieces = spec.pieces();
        let sign = if adjoint {
            pieces.reverse();
            -1.0
        } else {
            1.0
        };
        let kappa = spec.kappa_solver;
        let frozen = spec.flow.is_frozen();
        let mut trace = EnergyTrace::default();
        let mut time = if adjoint { spec.t } else { spec.s };
        let mut last = self.energy(coeffs);
        if record {
            trace.samples.push(TraceSample { time, l2_sq: last.0, h1_sq: last.1 });
        }
        if frozen && !record {
            // heat steps commute, so one exact step covers the interval
            self.heat_step(coeffs, kappa, spec.t - spec.s);
            coeffs[0] = Complex64::default();
            return Ok(trace);
        }
        let mut layout = Layout::Native;
        let n = pieces.len();
        for (i, &(leg, dt)) in pieces.iter().enumerate() {
            if frozen {
                self.heat_step(coeffs, kappa, dt);
            } else {
                let want = Layout::for_leg(leg);
                if want != layout {
                    transpose(coeffs, self.m);
                    layout = want;
                }
                self.heat_step(coeffs, kappa, 0.5 * dt);
                self.shear_step(coeffs, spec.flow, leg, dt, sign);
                self.heat_step(coeffs, kappa, 0.5 * dt);
            }
            time += sign * dt;
            if record {
                let now = self.energy(coeffs);
                trace.dissipated += kappa * (last.1 + now.1) * dt;
                if (i + 1) % spec.record_every == 0 || i + 1 == n {
                    trace.samples.push(TraceSample { time, l2_sq: now.0, h1_sq: now.1 });
                }
                last = now;
            }
        }
        if layout != Layout::Native {
            transpose(coeffs, self.m);
        }
        // the mean is invariant; clear round-off so tiny outputs can be renormalised
        coeffs[0] = Complex64::default();
        Ok(trace)
    }

    fn energy(&self, c: &[Complex64]) -> (f64, f64) {
        c.iter().zip(&self.ksq).fold((0.0, 0.0), |(l2, h1), (v, k)| {
            let a = v.norm_sqr();
            (l2 + a, h1 + k * a)
        })
    }

    fn heat_step(&mut self, c: &mut [Complex64], kappa: f64, dt: f64) {
        if kappa == 0.0 {
            return;
        }
        let key = kappa * dt;
        if self.heat.as_ref().map_or(true, |(k, _)| *k != key) {
            let table = self.ksq.iter().map(|k| (-key * k).exp()).collect();
            self.heat = Some((key, table));
        }
        let table = &self.heat.as_ref().unwrap().1;
        c.iter_mut().zip(table).for_each(|(v, h)| *v *= *h);
    }

    fn shear_step(&mut self, c: &mut [Complex64], flow: &dyn ShearSchedule, leg: usize, dt: f64, sign: f64) {
        let m = self.m;
        let key = ShearKey { leg, dt, sign };
        if self.shear.as_ref().map_or(true, |(k, _)| *k != key) {
            for (j, s) in self.speeds.iter_mut().enumerate() {
                *s = flow.leg_speed(leg, TAU * j as f64 / m as f64);
            }
            let inv_m = 1.0 / m as f64;
            let mut table = vec![Complex64::default(); m * m];
            for (row, line) in table.chunks_mut(m).enumerate() {
                let k = crate::spectral::wavenumber(row, m) as f64;
                let nyquist = row == m / 2;
                for (v, s) in line.iter_mut().zip(&self.speeds) {
                    let phase = -k * dt * sign * s;
                    *v = if nyquist {
                        Complex64::new(phase.cos() * inv_m, 0.0)
                    } else {
                        Complex64::from_polar(inv_m, phase)
                    };
                }
            }
            self.shear = Some((key, table));
        }
        let table = &self.shear.as_ref().unwrap().1;
        self.fft.rows_inverse(c);
        c.iter_mut().zip(table).for_each(|(v, w)| *v *= *w);
        self.fft.rows_forward(c);
    }
}

fn check_mean(c: &[Complex64]) -> Result<()> {
    let mean = c[0].norm();
    if mean > 1e-10 {
        return Err(Error::NotMeanZero(mean));
    }
    Ok(())
}

/// `T^{u,κ}_{s,t} init` with its energy trace.
pub fn evolve(spec: &EvolveSpec<'_>, init: &SpectralField) -> Result<(SpectralField, EnergyTrace)> {
    Propagator::new(init.resolution())?.evolve(spec, init)
}

/// `(T^{u,κ}_{s,t})^* init`.
pub fn adjoint_evolve(spec: &EvolveSpec<'_>, init: &SpectralField) -> Result<SpectralField> {
    Propagator::new(init.resolution())?.adjoint_evolve(spec, init)
}

/// Largest relative defect of the discrete energy identity
/// `Δ‖θ‖² = −2κ ∫ ‖∇θ‖²` over consecutive trace samples, with the time
/// integral by the trapezoid rule.
pub fn energy_identity_defect(trace: &EnergyTrace, kappa: f64) -> f64 {
    trace
        .samples
        .windows(2)
        .filter(|w| w[1].time != w[0].time && w[0].l2_sq > 0.0)
        .map(|w| {
            let dt = (w[1].time - w[0].time).abs();
            let change = w[1].l2_sq - w[0].l2_sq;
            (change + kappa * (w[0].h1_sq + w[1].h1_sq) * dt).abs() / (w[0].l2_sq * dt)
        })
        .fold(0.0, f64::max)
}

/// Both sides of the closeness estimate between the diffusive solution and
/// the exact transport solution at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Closeness {
    pub lhs: f64,
    pub rhs: f64,
}

impl Closeness {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Evaluates `‖θ^κ_t − θ⁰_t‖` against
/// `e³√κ (‖∇θ₀‖ + √(‖∇u‖_∞ + 1) ∫₀ᵗ ‖∇θ^κ_s‖ ds)`. The datum must be a
/// trigonometric polynomial resolved on the grid, so that the transport
/// solution can be evaluated exactly.
pub fn closeness_check(
    flow: &dyn ShearSchedule,
    kappa: f64,
    init: &TrigPolynomial,
    t: f64,
    m: usize,
    substeps_per_leg: usize,
) -> Result<Closeness> {
    let theta0 = init.sample(m)?;
    let spec = EvolveSpec::new(flow, kappa, 0.0, t).with_substeps(substeps_per_leg);
    let (diffusive, trace) = evolve(&spec, &theta0)?;
    let transported = pullback_at(flow, 0.0, t, init, m)?;
    let lhs = diffusive.sub(&transported)?.l2_norm();
    let rhs = E.powi(3)
        * kappa.sqrt()
        * (init.sobolev_norm(1.0) + (flow.gradient_bound() + 1.0).sqrt() * trace.gradient_integral());
    Ok(Closeness { lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowRealization;
    use crate::profile::ShearProfile;

    fn flow(kappa: f64, a: f64, seed: u64, horizon: usize) -> FlowRealization {
        FlowRealization::realize(kappa, a, ShearProfile::cosine_bump(), seed, horizon).unwrap()
    }

    fn mean_free_random(seed: u64, m: usize) -> SpectralField {
        SpectralField::random_bandlimited(seed, m / 4, m).unwrap()
    }

    #[test]
    fn frozen_flow_is_exact_heat() {
        let r = flow(0.1, 0.0, 1, 8);
        let f = mean_free_random(3, 32);
        let kappa = 0.05;
        let spec = EvolveSpec::new(&r, kappa, 0.3, 2.9).with_substeps(7);
        let (g, _) = evolve(&spec, &f).unwrap();
        let m = 32;
        let (a, b) = (f.coefficients(), g.coefficients());
        for i in 0..m * m {
            let expect = a[i] * (-kappa * k_squared(i, m) * 2.6).exp();
            assert!((b[i] - expect).norm() < 1e-12);
        }
        let ad = adjoint_evolve(&spec, &f).unwrap();
        assert!(ad.sub(&g).unwrap().l2_norm() < 1e-13);
    }

    #[test]
    fn heat_energy_identity() {
        let r = flow(0.1, 0.0, 1, 4);
        let f = TrigPolynomial::sin_x1().sample(32).unwrap();
        let spec = EvolveSpec::new(&r, 0.01, 0.0, 4.0).with_substeps(64);
        let (_, trace) = evolve(&spec, &f).unwrap();
        assert_eq!(trace.samples.len(), 257);
        assert!(energy_identity_defect(&trace, 0.01) <= 1e-6);
        let lost = trace.samples[0].l2_sq - trace.samples[256].l2_sq;
        assert!((trace.dissipated - lost).abs() < 1e-8);
    }

    #[test]
    fn single_horizontal_leg_without_diffusion() {
        let r = flow(1.0 / 8.0, 3.0, 2, 4);
        let m = 128;
        let f = TrigPolynomial::sin_x1().sample(m).unwrap();
        let spec = EvolveSpec::new(&r, 0.0, 0.0, 0.6).with_substeps(5);
        let (g, _) = evolve(&spec, &f).unwrap();
        let exact = SpectralField::from_fn(m, |x1, x2| (x1 - 0.6 * r.shear_speed(0, x2)).sin()).unwrap();
        assert!(g.sub(&exact).unwrap().l2_norm() < 1e-10);
    }

    #[test]
    fn duality() {
        let r = flow(1.0 / 8.0, 50.0, 4, 6);
        let m = 64;
        let f = mean_free_random(5, m);
        let g = mean_free_random(6, m);
        let spec = EvolveSpec::new(&r, 1.0 / 8.0, 0.25, 3.4).with_substeps(16);
        let (tf, _) = evolve(&spec, &f).unwrap();
        let tg = adjoint_evolve(&spec, &g).unwrap();
        let lhs = tf.inner(&g).unwrap();
        let rhs = f.inner(&tg).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * f.l2_norm() * g.l2_norm(), "{lhs} {rhs}");
    }

    #[test]
    fn semigroup_at_substep_boundaries() {
        let r = flow(1.0 / 8.0, 20.0, 7, 6);
        let m = 64;
        let f = mean_free_random(8, m);
        let mut p = Propagator::new(m).unwrap();
        let base = EvolveSpec::new(&r, 0.02, 0.0, 0.0).with_substeps(8);
        let (whole, _) = p.evolve(&base.with_interval(0.1, 3.5), &f).unwrap();
        let (half, _) = p.evolve(&base.with_interval(0.1, 1.625), &f).unwrap();
        let (rest, _) = p.evolve(&base.with_interval(1.625, 3.5), &half).unwrap();
        assert!(whole.sub(&rest).unwrap().l2_norm() < 1e-12);
    }

    #[test]
    fn mean_and_contraction() {
        let r = flow(1.0 / 16.0, 50.0, 9, 4);
        let m = 64;
        let f = mean_free_random(10, m);
        let spec = EvolveSpec::new(&r, 1.0 / 16.0, 0.0, 4.0).with_substeps(16);
        let (g, trace) = evolve(&spec, &f).unwrap();
        assert!(g.coefficient(0, 0).norm() < 1e-13);
        assert!(trace.samples.windows(2).all(|w| w[1].l2_sq <= w[0].l2_sq * (1.0 + 1e-14)));
        assert!(g.l2_norm() <= f.l2_norm());
        let (h, _) = evolve(&spec.with_interval(0.0, 4.0), &f.scaled(1.0)).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn transport_preserves_energy_up_to_nyquist_loss() {
        // energy is lost only through the real Nyquist multiplier
        let r = flow(1.0 / 16.0, 0.05, 11, 4);
        let mut losses = Vec::new();
        for m in [64, 128] {
            let f = SpectralField::random_bandlimited(12, 4, m).unwrap();
            let spec = EvolveSpec::new(&r, 0.0, 0.0, 3.0).with_substeps(8);
            let (g, trace) = evolve(&spec, &f).unwrap();
            assert!(g.l2_norm() <= f.l2_norm());
            assert!(energy_identity_defect(&trace, 0.0) < 1e-4);
            losses.push(f.l2_norm() - g.l2_norm());
        }
        assert!(losses[0] < 1e-4 && losses[1] < losses[0] / 4.0, "{losses:?}");
    }

    #[test]
    fn rejects_bad_input() {
        let r = flow(1.0 / 8.0, 1.0, 0, 4);
        let f = SpectralField::from_fn(16, |x, _| 1.0 + x.sin()).unwrap();
        let spec = EvolveSpec::new(&r, 0.1, 0.0, 1.0);
        assert!(matches!(evolve(&spec, &f), Err(Error::NotMeanZero(_))));
        let g = mean_free_random(1, 16);
        assert!(matches!(evolve(&spec.with_interval(0.0, 4.5), &g), Err(Error::HorizonExceeded { .. })));
    }

    #[test]
    fn closeness_zero_flow() {
        let r = flow(1.0 / 16.0, 0.0, 0, 4);
        let c = closeness_check(&r, 1.0 / 16.0, &TrigPolynomial::sin_x1(), 0.0, 32, 16).unwrap();
        assert!(c.lhs < 1e-15);
        assert!((c.rhs - E.powi(3) * 0.25 * 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn closeness_holds_on_random_realization() {
        let r = flow(1.0 / 32.0, 50.0, 13, 4);
        let c = closeness_check(&r, 1.0 / 32.0, &TrigPolynomial::sin_x1(), 4.0, 256, 64).unwrap();
        assert!(c.slack() >= 0.0, "{c:?}");
    }
}
