//! Closed-form dissipation-time bounds on `[0, 2π]²` with `λ₁ = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Search cap for `τ_κ`.
pub const TAU_CAP: f64 = 1e6;

/// `log 2 / κ`: every mean-zero datum has lost half its norm by then.
pub fn poincare_bound(kappa: f64) -> f64 {
    std::f64::consts::LN_2 / kappa
}

/// `C₁ = min(log(4/3)/2, 1/(8C₀²))`, the constant in `t_dis ≥ C₁/κ` for
/// flows whose stream function is bounded by `C₀κ`.
pub fn no_enhancement_constant(c0: f64) -> f64 {
    (0.5 * (4.0f64 / 3.0).ln()).min(1.0 / (8.0 * c0 * c0))
}

/// Exponential mixing rate `h(s,t) = D(1 + s^p) e^{−γt}`. With `p_poly = 0`
/// the polynomial factor is dropped, giving `h = D e^{−γt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub d: f64,
    pub gamma: f64,
    pub p_poly: f64,
}

impl RateParams {
    pub fn new(d: f64, gamma: f64, p_poly: f64) -> Result<Self> {
        if !(d >= 1.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("D = {d} must be >= 1")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma = {gamma} must be positive")));
        }
        if !(p_poly >= 0.0 && p_poly.is_finite()) {
            return Err(Error::InvalidArgument(format!("p_poly = {p_poly} must be non-negative")));
        }
        Ok(Self { d, gamma, p_poly })
    }

    fn poly(&self, s: f64) -> f64 {
        if self.p_poly == 0.0 {
            1.0
        } else {
            1.0 + s.powf(self.p_poly)
        }
    }
}

/// A mixing rate `h(s, t)`, non-increasing in `t`.
pub trait MixingRate {
    fn h(&self, s: f64, t: f64) -> f64;

    /// `H(T) = sup_{0 ≤ s ≤ T/3 ≤ t ≤ T} h(s, t)`. Monotonicity in `t` puts
    /// the supremum at `t = T/3`; `s` is scanned on a uniform grid.
    fn big_h(&self, big_t: f64) -> f64 {
        let third = big_t / 3.0;
        (0..=256).map(|i| self.h(third * i as f64 / 256.0, third)).fold(0.0, f64::max)
    }
}

impl MixingRate for RateParams {
    fn h(&self, s: f64, t: f64) -> f64 {
        self.d * self.poly(s) * (-self.gamma * t).exp()
    }

    fn big_h(&self, big_t: f64) -> f64 {
        self.h(big_t / 3.0, big_t / 3.0)
    }
}

impl<F: Fn(f64, f64) -> f64> MixingRate for F {
    fn h(&self, s: f64, t: f64) -> f64 {
        self(s, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropQuantities {
    pub h_of_tau: f64,
    pub tau_kappa: f64,
    pub a_kappa: f64,
    pub b_kappa: f64,
    pub clamped: bool,
}

/// `τ_κ = inf{t ≥ 2 : t⁻² H(t) ≤ 2⁸(‖∇u‖+1)κ}` with the derived constants
/// `A_κ = 1/(2¹⁵(‖∇u‖+1)τ_κ)` and `B_κ = (H(τ_κ)√(3A_κ/(2κτ_κ)))⁻¹`.
pub fn prop_quantities(rate: &dyn MixingRate, grad_u_sup: f64, kappa: f64) -> Result<PropQuantities> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidKappa(kappa));
    }
    let g1 = grad_u_sup + 1.0;
    let threshold = 256.0 * g1 * kappa;
    let f = |t: f64| rate.big_h(t) / (t * t) - threshold;
    let (tau, clamped) = if f(2.0) <= 0.0 {
        (2.0, true)
    } else {
        if f(TAU_CAP) > 0.0 {
            return Err(Error::NoRoot { cap: TAU_CAP });
        }
        let (mut lo, mut hi) = (2.0, TAU_CAP);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (hi, false)
    };
    let a = 1.0 / (32768.0 * g1 * tau);
    let h_tau = rate.big_h(tau);
    let b = 1.0 / (h_tau * (3.0 * a / (2.0 * kappa * tau)).sqrt());
    Ok(PropQuantities { h_of_tau: h_tau, tau_kappa: tau, a_kappa: a, b_kappa: b, clamped })
}

/// `2²⁴(g+1)(1 + 2²⁴(p/γ)⁴(g+1) + ((log D)² + (log κ)²)/γ²)`.
pub fn corollary_bound(rate: &RateParams, grad_u_sup: f64, kappa: f64) -> f64 {
    let g1 = grad_u_sup + 1.0;
    let two24 = 16_777_216.0;
    let ratio = rate.p_poly / rate.gamma;
    let logs = (rate.d.ln().powi(2) + kappa.ln().powi(2)) / (rate.gamma * rate.gamma);
    two24 * g1 * (1.0 + two24 * ratio.powi(4) * g1 + logs)
}

/// `(1/γ) |log(C_δ D / κ^{d/2 + δ})|`.
pub fn heuristic_bound(rate: &RateParams, c_delta: f64, delta: f64, d: u32, kappa: f64) -> f64 {
    let exponent = d as f64 / 2.0 + delta;
    ((c_delta * rate.d).ln() - exponent * kappa.ln()).abs() / rate.gamma
}
