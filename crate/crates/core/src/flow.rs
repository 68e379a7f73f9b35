//! Random alternating shear flows on the torus `[0, 2π)²`.
//!
//! On the unit time interval `[m, m + 1)` the flow is a shear
//! `ψ_m(x₂) e₁` when `m` is even and `ψ_m(x₁) e₂` when `m` is odd, with
//! `ψ_m(c) = A Σ_{i<2N} φ_κ(c - α_i^m)` and `N = ⌈1/κ⌉`. The phase
//! `α_i^m` is uniform on `[πi/N, π(i+1)/N]` and is a pure function of
//! `(seed, m, i)`, so realizations can be regenerated or extended without
//! storing history.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::ShearProfile;
use crate::Point;

/// Upper limit on `N_κ`; the phase tables and spectral grids are sized from it.
pub const MAX_N_KAPPA: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LegKind {
    /// Even legs: velocity `(ψ(x₂), 0)`.
    Horizontal,
    /// Odd legs: velocity `(0, ψ(x₁))`.
    Vertical,
}

impl LegKind {
    pub fn of(leg: usize) -> Self {
        if leg % 2 == 0 {
            LegKind::Horizontal
        } else {
            LegKind::Vertical
        }
    }

    /// Index of the coordinate that moves.
    pub fn moving_axis(self) -> usize {
        match self {
            LegKind::Horizontal => 0,
            LegKind::Vertical => 1,
        }
    }

    /// Index of the coordinate the shear speed depends on.
    pub fn transverse_axis(self) -> usize {
        1 - self.moving_axis()
    }
}

/// A piecewise-steady shear flow: legs of fixed duration alternating
/// between horizontal and vertical shears.
///
/// This is what the transport maps and the spectral solver consume.
pub trait ShearSchedule: Sync {
    /// Duration of one leg.
    fn leg_duration(&self) -> f64;

    /// Number of legs available.
    fn horizon_legs(&self) -> usize;

    /// Shear speed during `leg` at transverse coordinate `coord`.
    fn leg_speed(&self, leg: usize, coord: f64) -> f64;

    /// Bound on `‖∇u‖_∞`.
    fn gradient_bound(&self) -> f64;

    /// True when every leg is identically zero.
    fn is_frozen(&self) -> bool;

    fn horizon_time(&self) -> f64 {
        self.horizon_legs() as f64 * self.leg_duration()
    }

    fn velocity(&self, t: f64, x: Point) -> [f64; 2] {
        let leg = (t / self.leg_duration()).floor().max(0.0) as usize;
        let kind = LegKind::of(leg);
        let mut v = [0.0; 2];
        v[kind.moving_axis()] = self.leg_speed(leg, x[kind.transverse_axis()]);
        v
    }
}

/// One sampled realization of the alternating shear flow.
#[derive(Debug, Clone)]
pub struct FlowRealization {
    kappa: f64,
    n_kappa: usize,
    amplitude: f64,
    profile: ShearProfile,
    seed: u64,
    horizon: usize,
    phases: Arc<Vec<Vec<f64>>>,
    /// Frame translation per axis: shear speeds that depend on `x_a` are
    /// evaluated at `x_a - shift[a]`.
    shift: [f64; 2],
}

/// `N_κ = ⌈1/κ⌉`, robust to `1/κ` landing a rounding error above an integer.
pub fn n_kappa_of(kappa: f64) -> Result<usize> {
    if !(kappa > 0.0 && kappa <= 0.25) {
        return Err(Error::InvalidKappa(kappa));
    }
    let inv = 1.0 / kappa;
    let nearest = inv.round();
    let n = if (inv - nearest).abs() <= 1e-12 * inv { nearest } else { inv.ceil() };
    if n > MAX_N_KAPPA as f64 {
        return Err(Error::InvalidKappa(kappa));
    }
    Ok(n as usize)
}

/// Phases `α_i^m`, `i < 2N`, of leg `m`.
pub fn leg_phases(seed: u64, leg: usize, n_kappa: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(leg as u64);
    let cell = PI / n_kappa as f64;
    (0..2 * n_kappa)
        .map(|i| cell * (i as f64 + rng.gen::<f64>()))
        .collect()
}

impl FlowRealization {
    pub fn realize(kappa: f64, amplitude: f64, profile: ShearProfile, seed: u64, horizon: usize) -> Result<Self> {
        let n_kappa = n_kappa_of(kappa)?;
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidAmplitude(amplitude));
        }
        if horizon < 2 {
            return Err(Error::InvalidHorizon(horizon));
        }
        let phases = (0..horizon).map(|m| leg_phases(seed, m, n_kappa)).collect();
        Ok(Self {
            kappa,
            n_kappa,
            amplitude,
            profile,
            seed,
            horizon,
            phases: Arc::new(phases),
            shift: [0.0; 2],
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn n_kappa(&self) -> usize {
        self.n_kappa
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn profile(&self) -> &ShearProfile {
        &self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Phases of leg `m`; legs beyond the horizon are generated on demand.
    pub fn phases(&self, leg: usize) -> std::borrow::Cow<'_, [f64]> {
        match self.phases.get(leg) {
            Some(p) => std::borrow::Cow::Borrowed(p.as_slice()),
            None => std::borrow::Cow::Owned(leg_phases(self.seed, leg, self.n_kappa)),
        }
    }

    /// Same phases, amplitude replaced.
    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidAmplitude(amplitude));
        }
        Ok(Self { amplitude, ..self.clone() })
    }

    /// The same realization viewed in a frame translated by `tau`: every
    /// shear profile is moved along with the points.
    pub fn translated(&self, tau: [f64; 2]) -> Self {
        Self {
            shift: [self.shift[0] + tau[0], self.shift[1] + tau[1]],
            ..self.clone()
        }
    }

    /// Indices `i` whose translated support may contain `c`.
    fn candidates(&self, c: f64) -> impl Iterator<Item = usize> {
        let two_n = 2 * self.n_kappa;
        let cell = PI / self.n_kappa as f64;
        let j = ((c / cell).floor() as usize).min(two_n - 1);
        (0..4).map(move |d| (j + two_n * 2 - d) % two_n)
    }

    fn leg_sum(&self, leg: usize, coord: f64, order: usize) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let kind = LegKind::of(leg);
        let c = (coord - self.shift[kind.transverse_axis()]).rem_euclid(TAU);
        let phases = self.phases(leg);
        let sum: f64 = self
            .candidates(c)
            .map(|i| self.profile.derivative_scaled(order, self.n_kappa, c - phases[i]))
            .sum();
        self.amplitude * sum
    }

    /// `ψ_m(coord)` for leg `m = leg`.
    pub fn shear_speed(&self, leg: usize, coord: f64) -> f64 {
        self.leg_sum(leg, coord, 0)
    }

    /// `ψ_m'(coord)`.
    pub fn shear_slope(&self, leg: usize, coord: f64) -> f64 {
        self.leg_sum(leg, coord, 1)
    }

    /// Number of translated copies that are nonzero at `coord`.
    pub fn contributing_copies(&self, leg: usize, coord: f64) -> usize {
        let kind = LegKind::of(leg);
        let c = (coord - self.shift[kind.transverse_axis()]).rem_euclid(TAU);
        let phases = self.phases(leg);
        phases
            .iter()
            .filter(|&&a| self.profile.eval_scaled(self.n_kappa, c - a) != 0.0)
            .count()
    }

    /// `3 A ‖φ‖_∞`, the uniform bound on the speed.
    pub fn speed_bound(&self) -> f64 {
        3.0 * self.amplitude * self.profile.sup_norm()
    }

    /// `3 A N ‖φ'‖_∞`, the uniform bound on the shear rate.
    pub fn slope_bound(&self) -> f64 {
        3.0 * self.amplitude * self.n_kappa as f64 * self.profile.d1_sup_norm()
    }

    pub fn velocity(&self, t: f64, x: Point) -> [f64; 2] {
        ShearSchedule::velocity(self, t, x)
    }

    /// Sup norm of the stream function of leg `leg`.
    ///
    /// The spatial mean of the shear is a rigid translation; it is removed,
    /// and the stream function is taken with the gauge constant that
    /// minimises its sup norm, i.e. `(max H - min H)/2` for
    /// `H(c) = ∫₀^c (ψ - ψ̄)`.
    pub fn stream_sup_norm(&self, leg: usize, quadrature_points: usize) -> Result<f64> {
        let supports = self.n_kappa;
        if quadrature_points < 1024 * supports {
            return Err(Error::QuadratureTooCoarse { points: quadrature_points, supports });
        }
        Ok(stream_extent(|c| self.shear_speed(leg, c), quadrature_points).sup)
    }

    /// Serializable description; phases are recomputed from the seed.
    pub fn descriptor(&self) -> RealizationDescriptor {
        RealizationDescriptor {
            kappa: self.kappa,
            amplitude: self.amplitude,
            seed: self.seed,
            horizon: self.horizon,
            profile_name: self.profile.name().to_string(),
        }
    }

    pub fn from_descriptor(d: &RealizationDescriptor, profile: ShearProfile) -> Result<Self> {
        if profile.name() != d.profile_name {
            return Err(Error::UnknownProfile(d.profile_name.clone()));
        }
        Self::realize(d.kappa, d.amplitude, profile, d.seed, d.horizon)
    }

    /// `v_t = ε u_{εt}` with `ε` the construction diffusivity of `self`;
    /// the natural diffusivity of the rescaled flow is `ε²`.
    pub fn rescale(&self) -> RescaledFlow {
        RescaledFlow { inner: self.clone(), eps: self.kappa }
    }
}

impl ShearSchedule for FlowRealization {
    fn leg_duration(&self) -> f64 {
        1.0
    }

    fn horizon_legs(&self) -> usize {
        self.horizon
    }

    fn leg_speed(&self, leg: usize, coord: f64) -> f64 {
        self.shear_speed(leg, coord)
    }

    fn gradient_bound(&self) -> f64 {
        self.slope_bound()
    }

    fn is_frozen(&self) -> bool {
        self.amplitude == 0.0
    }
}

/// `v_t(x) = ε u^ε_{εt}(x)`: legs last `1/ε` and speeds are scaled by `ε`.
#[derive(Debug, Clone)]
pub struct RescaledFlow {
    inner: FlowRealization,
    eps: f64,
}

impl RescaledFlow {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Diffusivity `κ = ε²` paired with this family.
    pub fn kappa_target(&self) -> f64 {
        self.eps * self.eps
    }

    pub fn inner(&self) -> &FlowRealization {
        &self.inner
    }

    pub fn speed_bound(&self) -> f64 {
        self.eps * self.inner.speed_bound()
    }

    pub fn slope_bound(&self) -> f64 {
        self.eps * self.inner.slope_bound()
    }
}

impl ShearSchedule for RescaledFlow {
    fn leg_duration(&self) -> f64 {
        1.0 / self.eps
    }

    fn horizon_legs(&self) -> usize {
        self.inner.horizon
    }

    fn leg_speed(&self, leg: usize, coord: f64) -> f64 {
        self.eps * self.inner.shear_speed(leg, coord)
    }

    fn gradient_bound(&self) -> f64 {
        self.slope_bound()
    }

    fn is_frozen(&self) -> bool {
        self.inner.is_frozen()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationDescriptor {
    pub kappa: f64,
    pub amplitude: f64,
    pub seed: u64,
    pub horizon: usize,
    pub profile_name: String,
}

/// Summary of the cumulative integral of a speed profile over `[0, 2π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamExtent {
    /// `sup_c |∫₀^c f|`
    pub raw_sup: f64,
    /// `(1/2π) ∫₀^{2π} f`
    pub mean: f64,
    /// `(max H - min H)/2` for the mean-free `H(c) = ∫₀^c (f - mean)`
    pub sup: f64,
}

/// Cumulative Simpson quadrature of `f` on `points` uniform cells.
pub fn stream_extent(f: impl Fn(f64) -> f64, points: usize) -> StreamExtent {
    let h = TAU / points as f64;
    let mut raw = Vec::with_capacity(points + 1);
    raw.push(0.0);
    let mut acc = 0.0;
    let mut left = f(0.0);
    for k in 0..points {
        let x = k as f64 * h;
        let right = f(x + h);
        acc += h / 6.0 * (left + 4.0 * f(x + 0.5 * h) + right);
        raw.push(acc);
        left = right;
    }
    let mean = acc / TAU;
    let raw_sup = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // the mean-free integral is periodic; drop the duplicate endpoint
    let g: Vec<f64> = raw[..points].iter().enumerate().map(|(k, v)| v - mean * k as f64 * h).collect();
    let (mut imin, mut imax) = (0, 0);
    for (k, v) in g.iter().enumerate() {
        if *v < g[imin] {
            imin = k;
        }
        if *v > g[imax] {
            imax = k;
        }
    }
    // parabolic refinement of the discrete extrema
    let vertex = |k: usize| {
        let (a, b, c) = (g[(k + points - 1) % points], g[k], g[(k + 1) % points]);
        let curv = a - 2.0 * b + c;
        if curv == 0.0 { b } else { b - (c - a) * (c - a) / (8.0 * curv) }
    };
    let (lo, hi) = (vertex(imin), vertex(imax));
    StreamExtent { raw_sup, mean, sup: 0.5 * (hi - lo) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(kappa: f64, a: f64, seed: u64) -> FlowRealization {
        FlowRealization::realize(kappa, a, ShearProfile::cosine_bump(), seed, 8).unwrap()
    }

    #[test]
    fn n_kappa_values() {
        assert_eq!(n_kappa_of(0.1).unwrap(), 10);
        assert_eq!(n_kappa_of(1.0 / 64.0).unwrap(), 64);
        assert_eq!(n_kappa_of(0.03).unwrap(), 34);
        assert_eq!(n_kappa_of(0.25).unwrap(), 4);
    }

    #[test]
    fn invalid_inputs() {
        let p = ShearProfile::cosine_bump();
        assert_eq!(
            FlowRealization::realize(0.0, 1.0, p.clone(), 0, 4).unwrap_err(),
            Error::InvalidKappa(0.0)
        );
        assert!(FlowRealization::realize(-0.1, 1.0, p.clone(), 0, 4).is_err());
        assert!(FlowRealization::realize(0.5, 1.0, p.clone(), 0, 4).is_err());
        assert!(FlowRealization::realize(1e-9, 1.0, p.clone(), 0, 4).is_err());
        assert!(FlowRealization::realize(0.1, -1.0, p.clone(), 0, 4).is_err());
        assert!(FlowRealization::realize(0.1, 1.0, p, 0, 1).is_err());
    }

    #[test]
    fn phases_in_cells_and_reproducible() {
        let r = flow(1.0 / 16.0, 50.0, 7);
        let n = r.n_kappa() as f64;
        for m in 0..10 {
            let ph = r.phases(m);
            assert_eq!(ph.len(), 32);
            for (i, &a) in ph.iter().enumerate() {
                assert!(a >= PI * i as f64 / n && a <= PI * (i + 1) as f64 / n);
            }
            assert_eq!(ph.as_ref(), leg_phases(7, m, 16).as_slice());
        }
        let again = flow(1.0 / 16.0, 50.0, 7);
        for m in 0..8 {
            let (a, b) = (r.phases(m), again.phases(m));
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_ne!(r.phases(0).as_ref(), flow(1.0 / 16.0, 50.0, 8).phases(0).as_ref());
    }

    #[test]
    fn shear_speed_matches_brute_force() {
        let r = flow(1.0 / 10.0, 3.0, 11);
        for leg in 0..3 {
            let ph = r.phases(leg);
            for k in 0..5000 {
                let c = TAU * (k as f64 + 0.123) / 5000.0;
                let brute: f64 = ph.iter().map(|&a| r.profile().eval_scaled(10, c - a)).sum::<f64>() * 3.0;
                assert!((brute - r.shear_speed(leg, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn speed_bound_and_overlap() {
        for seed in 0..4 {
            let r = flow(1.0 / 16.0, 50.0, seed);
            for k in 0..20_000 {
                let c = TAU * k as f64 / 20_000.0;
                assert!(r.contributing_copies(0, c) <= 3);
                assert!(r.shear_speed(0, c).abs() <= r.speed_bound());
            }
        }
    }

    #[test]
    fn velocity_alternates() {
        let r = flow(0.1, 5.0, 1);
        let x = [1.3, 2.1];
        let v = r.velocity(0.5, x);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[0], r.shear_speed(0, x[1]));
        let v = r.velocity(1.5, x);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], r.shear_speed(1, x[0]));
    }

    #[test]
    fn single_copy_stream_value() {
        let p = ShearProfile::cosine_bump();
        let n = 16;
        let a = 2.5;
        let e = stream_extent(|c| a * p.eval_scaled(n, c - 1.0), 1024 * n);
        assert!((e.raw_sup - a * PI / n as f64).abs() < 1e-12);
    }

    #[test]
    fn stream_norm_bounds_and_convergence() {
        for kappa in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
            let r = flow(kappa, 50.0, 3);
            let n = r.n_kappa();
            for leg in 0..4 {
                let s = r.stream_sup_norm(leg, 1024 * n).unwrap();
                let s2 = r.stream_sup_norm(leg, 2048 * n).unwrap();
                assert!((s - s2).abs() < 1e-6 * s2, "{s} {s2}");
                assert!(s <= 3.0 * PI * 50.0 / n as f64);
                assert!(s <= 3.0 * 50.0 * PI * kappa * (1.0 + kappa));
            }
        }
        let r = flow(1.0 / 8.0, 1.0, 0);
        assert!(matches!(r.stream_sup_norm(0, 1000), Err(Error::QuadratureTooCoarse { .. })));
    }

    #[test]
    fn rescaled_velocity() {
        let r = flow(1.0 / 8.0, 50.0, 2);
        let v = r.rescale();
        assert_eq!(v.eps(), 1.0 / 8.0);
        for k in 0..200 {
            let t = 0.173 * k as f64;
            let x = [(k as f64 * 0.37) % TAU, (k as f64 * 0.71) % TAU];
            let lhs = v.velocity(t, x);
            let rhs = r.velocity(v.eps() * t, x);
            assert!((lhs[0] - v.eps() * rhs[0]).abs() < 1e-12);
            assert!((lhs[1] - v.eps() * rhs[1]).abs() < 1e-12);
            assert!(lhs[0].hypot(lhs[1]) <= 3.0 * 50.0 * v.kappa_target().sqrt());
        }
    }

    #[test]
    fn translated_frame() {
        let r = flow(1.0 / 8.0, 5.0, 4);
        let t = r.translated([0.3, 0.0]);
        for k in 0..100 {
            let c = 0.0627 * k as f64;
            assert_eq!(t.shear_speed(0, c), r.shear_speed(0, c));
            assert!((t.shear_speed(1, c + 0.3) - r.shear_speed(1, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn descriptor_round_trip() {
        let r = flow(0.1, 5.0, 9);
        let d = r.descriptor();
        let back = FlowRealization::from_descriptor(&d, ShearProfile::cosine_bump()).unwrap();
        assert_eq!(back.phases(3).as_ref(), r.phases(3).as_ref());
    }
}
