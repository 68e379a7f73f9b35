//! Real scalar fields on a uniform `M × M` grid over `[0, 2π)²`.
//!
//! Samples are stored row-major with the row index running over `x₂`:
//! `samples[j * M + i] = f(2πi/M, 2πj/M)`. Fourier coefficients use the
//! normalised convention `f̂(k) = M⁻² Σ f(x) e^{-ik·x}`, so that the grid
//! mean of `f²` equals `Σ |f̂(k)|²` and all norms are taken against
//! `dx/(2π)²`.

use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Signed wavenumber of FFT index `idx` on a grid of size `m`:
/// `0, 1, …, m/2 - 1, -m/2, …, -1`.
#[inline]
pub fn wavenumber(idx: usize, m: usize) -> i64 {
    if idx < m / 2 {
        idx as i64
    } else {
        idx as i64 - m as i64
    }
}

/// Inverse of [`wavenumber`] for `k ∈ [-m/2, m/2)`.
#[inline]
pub fn index_of(k: i64, m: usize) -> usize {
    k.rem_euclid(m as i64) as usize
}

pub fn check_grid(m: usize) -> Result<()> {
    if m < 4 || !m.is_power_of_two() {
        return Err(Error::InvalidGrid(m));
    }
    Ok(())
}

/// Batched 1-D transforms over the rows of a square complex array, plus
/// the 2-D transforms built from them.
pub struct Fft2 {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self { m, forward, inverse, scratch: vec![Complex64::default(); len] }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    /// Unnormalised forward DFT of every row.
    pub fn rows_forward(&mut self, data: &mut [Complex64]) {
        self.forward.process_with_scratch(data, &mut self.scratch);
    }

    /// Unnormalised inverse DFT of every row.
    pub fn rows_inverse(&mut self, data: &mut [Complex64]) {
        self.inverse.process_with_scratch(data, &mut self.scratch);
    }

    /// Samples to normalised coefficients, in place.
    pub fn forward_2d(&mut self, data: &mut [Complex64]) {
        self.rows_forward(data);
        transpose(data, self.m);
        self.rows_forward(data);
        transpose(data, self.m);
        let scale = 1.0 / (self.m * self.m) as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }

    /// Normalised coefficients to samples, in place.
    pub fn inverse_2d(&mut self, data: &mut [Complex64]) {
        self.rows_inverse(data);
        transpose(data, self.m);
        self.rows_inverse(data);
        transpose(data, self.m);
    }
}

/// In-place transpose of a square row-major array.
pub fn transpose<T>(data: &mut [T], m: usize) {
    debug_assert_eq!(data.len(), m * m);
    for r in 0..m {
        for c in r + 1..m {
            data.swap(r * m + c, c * m + r);
        }
    }
}

/// A real scalar field sampled on the uniform grid, with lazily computed
/// Fourier coefficients.
#[derive(Debug, Clone)]
pub struct SpectralField {
    m: usize,
    samples: Vec<f64>,
    coeffs: OnceLock<Vec<Complex64>>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.samples == other.samples
    }
}

impl SpectralField {
    pub fn from_samples(m: usize, samples: Vec<f64>) -> Result<Self> {
        check_grid(m)?;
        if samples.len() != m * m {
            return Err(Error::GridMismatch(samples.len(), m * m));
        }
        Ok(Self { m, samples, coeffs: OnceLock::new() })
    }

    /// Samples `f(x₁, x₂)` at the grid nodes.
    pub fn from_fn(m: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_grid(m)?;
        let h = TAU / m as f64;
        let samples = (0..m * m)
            .map(|idx| f((idx % m) as f64 * h, (idx / m) as f64 * h))
            .collect();
        Self::from_samples(m, samples)
    }

    pub fn zeros(m: usize) -> Result<Self> {
        Self::from_samples(m, vec![0.0; m * m])
    }

    /// Field with the given normalised coefficients; the imaginary part
    /// of the synthesis (nonzero only for non-Hermitian input) is dropped.
    pub fn from_coefficients(m: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        check_grid(m)?;
        if coeffs.len() != m * m {
            return Err(Error::GridMismatch(coeffs.len(), m * m));
        }
        let mut data = coeffs;
        Fft2::new(m).inverse_2d(&mut data);
        let samples = data.iter().map(|c| c.re).collect();
        Self::from_samples(m, samples)
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Normalised coefficients, row index over `k₂`, column over `k₁`.
    pub fn coefficients(&self) -> &[Complex64] {
        self.coeffs.get_or_init(|| {
            let mut data: Vec<Complex64> = self.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            Fft2::new(self.m).forward_2d(&mut data);
            data
        })
    }

    /// `f̂(k₁, k₂)` for `k ∈ [-M/2, M/2)²`.
    pub fn coefficient(&self, k1: i64, k2: i64) -> Complex64 {
        let m = self.m;
        self.coefficients()[index_of(k2, m) * m + index_of(k1, m)]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn is_mean_zero(&self, tol: f64) -> bool {
        self.mean().abs() <= tol
    }

    /// Subtracts the grid mean.
    pub fn mean_free(&self) -> Self {
        let mean = self.mean();
        Self {
            m: self.m,
            samples: self.samples.iter().map(|v| v - mean).collect(),
            coeffs: OnceLock::new(),
        }
    }

    /// Grid mean of `f · g`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        if self.m != other.m {
            return Err(Error::GridMismatch(self.m, other.m));
        }
        let s: f64 = self.samples.iter().zip(&other.samples).map(|(a, b)| a * b).sum();
        Ok(s / self.samples.len() as f64)
    }

    /// `‖f‖_{L²}` from the samples.
    pub fn l2_norm(&self) -> f64 {
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            m: self.m,
            samples: self.samples.iter().map(|v| v * factor).collect(),
            coeffs: OnceLock::new(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.m != other.m {
            return Err(Error::GridMismatch(self.m, other.m));
        }
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect();
        Self::from_samples(self.m, samples)
    }

    /// Homogeneous Sobolev norm `(Σ_{k≠0} |k|^{2s} |f̂(k)|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> Result<f64> {
        let c = self.coefficients();
        if s < 0.0 && c[0].norm() > 1e-10 {
            return Err(Error::NotMeanZero(c[0].norm()));
        }
        Ok(weighted_sum(c, self.m, |k2| k2.powf(s)).sqrt())
    }

    /// `Π_{≤R} f`: keeps the modes with `|k| ≤ radius`.
    pub fn project_low(&self, radius: f64) -> Self {
        self.filtered(|k2| k2 <= radius * radius)
    }

    /// `Π_{>R} f = f - Π_{≤R} f`.
    pub fn project_high(&self, radius: f64) -> Self {
        self.filtered(|k2| k2 > radius * radius)
    }

    fn filtered(&self, keep: impl Fn(f64) -> bool) -> Self {
        let m = self.m;
        let coeffs = self
            .coefficients()
            .iter()
            .enumerate()
            .map(|(idx, &c)| if keep(k_squared(idx, m)) { c } else { Complex64::default() })
            .collect();
        Self::from_coefficients(m, coeffs).expect("grid already validated")
    }

    /// Fraction of the energy in the top octave, `max(|k₁|, |k₂|) > M/4`.
    pub fn top_octave_fraction(&self) -> f64 {
        top_octave_fraction(self.coefficients(), self.m)
    }

    /// Mean-zero real field with independent standard normal coefficients
    /// on `0 < |k| ≤ k_max`, normalised to unit `L²` norm.
    pub fn random_bandlimited(seed: u64, k_max: usize, m: usize) -> Result<Self> {
        check_grid(m)?;
        if k_max == 0 || k_max >= m / 2 {
            return Err(Error::InvalidArgument(format!("k_max = {k_max} must lie in [1, M/2)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = vec![Complex64::default(); m * m];
        let km = k_max as i64;
        for k2 in -km..=km {
            for k1 in -km..=km {
                // upper half-plane representatives, conjugates filled below
                let upper = k2 > 0 || (k2 == 0 && k1 > 0);
                if !upper || k1 * k1 + k2 * k2 > km * km {
                    continue;
                }
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                let c = Complex64::new(re, im);
                coeffs[index_of(k2, m) * m + index_of(k1, m)] = c;
                coeffs[index_of(-k2, m) * m + index_of(-k1, m)] = c.conj();
            }
        }
        let energy: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        let scale = 1.0 / energy.sqrt();
        coeffs.iter_mut().for_each(|c| *c *= scale);
        let field = Self::from_coefficients(m, coeffs)?;
        // restore exact unit norm after synthesis rounding
        let n = field.l2_norm();
        Ok(field.scaled(1.0 / n))
    }
}

/// `|k|²` of the flat coefficient index `idx`.
#[inline]
pub fn k_squared(idx: usize, m: usize) -> f64 {
    let k1 = wavenumber(idx % m, m) as f64;
    let k2 = wavenumber(idx / m, m) as f64;
    k1 * k1 + k2 * k2
}

/// `Σ_{k≠0} w(|k|²) |c_k|²` over a flat normalised coefficient array.
pub fn weighted_sum(coeffs: &[Complex64], m: usize, w: impl Fn(f64) -> f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(idx, c)| w(k_squared(idx, m)) * c.norm_sqr())
        .sum()
}

pub fn top_octave_fraction(coeffs: &[Complex64], m: usize) -> f64 {
    let quarter = (m / 4) as i64;
    let mut top = 0.0;
    let mut total = 0.0;
    for (idx, c) in coeffs.iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        if wavenumber(idx % m, m).abs() > quarter || wavenumber(idx / m, m).abs() > quarter {
            top += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        top / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    #[test]
    fn sine_norms() {
        let f = SpectralField::from_fn(32, |x, _| x.sin()).unwrap();
        for s in [-1.0, -0.5, 0.0, 1.0, 2.0] {
            assert!((f.sobolev_norm(s).unwrap() - 1.0 / SQRT_2).abs() < 1e-14);
        }
        let g = SpectralField::from_fn(32, |x, _| (2.0 * x).sin()).unwrap();
        let (hm, l2, h1) = (g.sobolev_norm(-1.0).unwrap(), g.sobolev_norm(0.0).unwrap(), g.sobolev_norm(1.0).unwrap());
        assert!((h1 / l2 - 2.0).abs() < 1e-13);
        assert!((l2 / hm - 2.0).abs() < 1e-13);
        assert!((hm - 1.0 / (2.0 * SQRT_2)).abs() < 1e-14);
    }

    #[test]
    fn coefficient_convention() {
        let f = SpectralField::from_fn(16, |x, y| x.sin() + 3.0 * (2.0 * y).cos()).unwrap();
        // sin x = (e^{ix} - e^{-ix}) / 2i
        assert!((f.coefficient(1, 0) - Complex64::new(0.0, -0.5)).norm() < 1e-14);
        assert!((f.coefficient(-1, 0) - Complex64::new(0.0, 0.5)).norm() < 1e-14);
        assert!((f.coefficient(0, 2) - Complex64::new(1.5, 0.0)).norm() < 1e-14);
        assert!(f.coefficient(0, 0).norm() < 1e-14);
    }

    #[test]
    fn not_mean_zero_rejected() {
        let f = SpectralField::from_fn(16, |x, _| 1.0 + x.sin()).unwrap();
        assert!(matches!(f.sobolev_norm(-1.0), Err(Error::NotMeanZero(_))));
        assert!(f.sobolev_norm(1.0).is_ok());
    }

    #[test]
    fn invalid_grid() {
        assert_eq!(SpectralField::zeros(12).unwrap_err(), Error::InvalidGrid(12));
        assert!(SpectralField::from_samples(8, vec![0.0; 10]).is_err());
    }

    #[test]
    fn projector_edge_cases() {
        let f = SpectralField::random_bandlimited(3, 10, 32).unwrap();
        let all = f.project_low(16.0 * SQRT_2);
        assert!(all.sub(&f).unwrap().l2_norm() < 1e-13);
        assert!(f.project_low(0.0).l2_norm() < 1e-14);
    }

    #[test]
    fn random_field_contract() {
        let f = SpectralField::random_bandlimited(42, 8, 64).unwrap();
        assert!((f.l2_norm() - 1.0).abs() < 1e-10);
        assert!(f.coefficient(0, 0).norm() < 1e-14);
        let g = SpectralField::random_bandlimited(42, 8, 64).unwrap();
        assert!(f.samples().iter().zip(g.samples()).all(|(a, b)| a.to_bits() == b.to_bits()));
        // nothing above k_max
        let hi = f.project_high(8.0);
        assert!(hi.l2_norm() < 1e-13);
    }

    #[test]
    fn top_octave_monitor() {
        let smooth = SpectralField::from_fn(64, |x, y| (x + 2.0 * y).sin()).unwrap();
        assert!(smooth.top_octave_fraction() < 1e-20);
        let rough = SpectralField::from_fn(64, |x, _| (20.0 * x).sin()).unwrap();
        assert!((rough.top_octave_fraction() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn parseval_and_interpolation(seed in any::<u64>(), k_max in 1usize..15) {
            let f = SpectralField::random_bandlimited(seed, k_max, 32).unwrap();
            let energy: f64 = f.coefficients().iter().map(|c| c.norm_sqr()).sum();
            let mean_sq = f.samples().iter().map(|v| v * v).sum::<f64>() / 1024.0;
            prop_assert!((energy - mean_sq).abs() <= 1e-10 * mean_sq);
            let (hm, l2, h1) = (f.sobolev_norm(-1.0).unwrap(), f.sobolev_norm(0.0).unwrap(), f.sobolev_norm(1.0).unwrap());
            prop_assert!(hm * h1 >= l2 * l2 * (1.0 - 1e-12));
            prop_assert!(hm <= l2 * (1.0 + 1e-12) && l2 <= h1 * (1.0 + 1e-12));
        }

        #[test]
        fn projectors_split_orthogonally(seed in any::<u64>(), radius in 0.0f64..12.0) {
            let f = SpectralField::random_bandlimited(seed, 10, 32).unwrap();
            let g = SpectralField::random_bandlimited(seed ^ 0x5555, 10, 32).unwrap();
            let (lo, hi) = (f.project_low(radius), g.project_high(radius));
            prop_assert!(lo.inner(&hi).unwrap().abs() < 1e-12);
            let sum = f.project_low(radius).samples().iter().zip(f.project_high(radius).samples()).map(|(a, b)| a + b).collect();
            let back = SpectralField::from_samples(32, sum).unwrap();
            prop_assert!(back.sub(&f).unwrap().l2_norm() < 1e-13);
            // ‖Π_{>R} f‖² ≥ ‖f‖² - R² ‖f‖²_{H⁻¹}
            let hm = f.sobolev_norm(-1.0).unwrap();
            let high = f.project_high(radius).l2_norm();
            prop_assert!(high * high >= 1.0 - radius * radius * hm * hm - 1e-12);
        }
    }
}
