//! Exact Lagrangian maps of the pure transport dynamics.
//!
//! Each leg is a steady shear, so its flow map is an explicit translation
//! along the moving axis by `duration · ψ(transverse coordinate)`. Maps
//! over longer times are compositions of whole legs and one fractional
//! leg; no time stepping is involved.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{LegKind, ShearSchedule};
use crate::spectral::{check_grid, SpectralField};
use crate::Point;

/// Direction of a flow-map query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Applies `fraction` of leg `leg` to `x`.
pub fn leg_map<S: ShearSchedule + ?Sized>(flow: &S, leg: usize, x: Point, fraction: f64) -> Point {
    shift_along_leg(flow, leg, x, fraction)
}

/// Inverse of [`leg_map`]; the transverse coordinate is untouched, so the
/// inverse is the same translation with the opposite sign.
pub fn inverse_leg_map<S: ShearSchedule + ?Sized>(flow: &S, leg: usize, x: Point, fraction: f64) -> Point {
    shift_along_leg(flow, leg, x, -fraction)
}

fn shift_along_leg<S: ShearSchedule + ?Sized>(flow: &S, leg: usize, x: Point, fraction: f64) -> Point {
    if fraction == 0.0 {
        return x;
    }
    let kind = LegKind::of(leg);
    let (a, b) = (kind.moving_axis(), kind.transverse_axis());
    let mut y = x;
    y[a] = (x[a] + fraction * flow.leg_duration() * flow.leg_speed(leg, x[b])).rem_euclid(TAU);
    y
}

/// Splits `[s, t]` into `(leg, fraction_start, fraction_end)` pieces.
fn leg_pieces<S: ShearSchedule + ?Sized>(flow: &S, s: f64, t: f64) -> Result<Vec<(usize, f64, f64)>> {
    let horizon = flow.horizon_time();
    if t > horizon * (1.0 + 1e-14) || s > t || s < 0.0 {
        return Err(Error::HorizonExceeded { requested: t, horizon });
    }
    let d = flow.leg_duration();
    let mut pieces = Vec::new();
    let mut cur = s;
    while cur < t {
        let leg = ((cur / d).floor() as usize).min(flow.horizon_legs() - 1);
        let leg_end = ((leg + 1) as f64 * d).min(t);
        let start = cur / d - leg as f64;
        let end = leg_end / d - leg as f64;
        if end > start {
            pieces.push((leg, start, end));
        }
        if leg_end <= cur {
            break;
        }
        cur = leg_end;
    }
    Ok(pieces)
}

/// `Φ_{s,t}(x)`: the position at time `t` of the particle at `x` at time `s`.
pub fn flow_map_between<S: ShearSchedule + ?Sized>(flow: &S, s: f64, t: f64, x: Point) -> Result<Point> {
    let mut y = x;
    for (leg, a, b) in leg_pieces(flow, s, t)? {
        y = leg_map(flow, leg, y, b - a);
    }
    Ok(y)
}

/// `Φ_t(x) = Φ_{0,t}(x)`.
pub fn flow_map<S: ShearSchedule + ?Sized>(flow: &S, t: f64, x: Point) -> Result<Point> {
    flow_map_between(flow, 0.0, t, x)
}

/// `Φ_{s,t}^{-1}(x)`.
pub fn inverse_flow_map_between<S: ShearSchedule + ?Sized>(flow: &S, s: f64, t: f64, x: Point) -> Result<Point> {
    let mut y = x;
    for (leg, a, b) in leg_pieces(flow, s, t)?.into_iter().rev() {
        y = inverse_leg_map(flow, leg, y, b - a);
    }
    Ok(y)
}

pub fn inverse_flow_map<S: ShearSchedule + ?Sized>(flow: &S, t: f64, x: Point) -> Result<Point> {
    inverse_flow_map_between(flow, 0.0, t, x)
}

pub fn query<S: ShearSchedule + ?Sized>(flow: &S, t: f64, direction: Direction, x: Point) -> Result<Point> {
    match direction {
        Direction::Forward => flow_map(flow, t, x),
        Direction::Inverse => inverse_flow_map(flow, t, x),
    }
}

/// `Π (1 + duration · ‖∇u‖_∞)` over `n_legs` legs: a Lipschitz bound for
/// the flow map and its inverse.
pub fn lipschitz_product_bound<S: ShearSchedule + ?Sized>(flow: &S, n_legs: usize) -> f64 {
    (1.0 + flow.leg_duration() * flow.gradient_bound()).powi(n_legs as i32)
}

/// A real trigonometric polynomial `Σ c_k e^{ik·x}` with Hermitian
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPolynomial {
    terms: Vec<([i64; 2], Complex64)>,
    k_max: i64,
}

impl TrigPolynomial {
    /// Builds the polynomial from half-plane representatives; conjugate
    /// partners are added. A zero wavevector term must be real.
    pub fn from_half_plane(terms: &[([i64; 2], Complex64)]) -> Result<Self> {
        let mut all = Vec::with_capacity(2 * terms.len());
        for &(k, c) in terms {
            if k == [0, 0] {
                if c.im != 0.0 {
                    return Err(Error::InvalidArgument("mean coefficient must be real".into()));
                }
                all.push((k, c));
                continue;
            }
            let upper = k[1] > 0 || (k[1] == 0 && k[0] > 0);
            if !upper {
                return Err(Error::InvalidArgument(format!("{k:?} is not an upper half-plane wavevector")));
            }
            all.push((k, c));
            all.push(([-k[0], -k[1]], c.conj()));
        }
        let k_max = all.iter().map(|(k, _)| k[0].abs().max(k[1].abs())).max().unwrap_or(0);
        Ok(Self { terms: all, k_max })
    }

    /// `sin(x₁)`, the first Laplace eigenfunction used as the witness datum.
    pub fn sin_x1() -> Self {
        Self::from_half_plane(&[([1, 0], Complex64::new(0.0, -0.5))]).unwrap()
    }

    /// Mean-zero polynomial with standard normal coefficients on
    /// `0 < |k| ≤ k_max`, normalised to unit `L²` norm.
    pub fn random(seed: u64, k_max: i64) -> Result<Self> {
        if k_max < 1 {
            return Err(Error::InvalidArgument("k_max must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for k2 in 0..=k_max {
            for k1 in -k_max..=k_max {
                let upper = k2 > 0 || k1 > 0;
                if upper && k1 * k1 + k2 * k2 <= k_max * k_max {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    terms.push(([k1, k2], Complex64::new(re, im)));
                }
            }
        }
        let p = Self::from_half_plane(&terms)?;
        let n = p.sobolev_norm(0.0);
        Ok(p.scaled(1.0 / n))
    }

    pub fn terms(&self) -> &[([i64; 2], Complex64)] {
        &self.terms
    }

    /// Largest `|k_i|` present.
    pub fn k_max(&self) -> i64 {
        self.k_max
    }

    pub fn is_mean_zero(&self) -> bool {
        self.terms.iter().all(|(k, c)| *k != [0, 0] || c.norm() == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(k, c)| (k, c * factor)).collect(),
            k_max: self.k_max,
        }
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .filter(|(k, _)| *k != [0, 0])
            .map(|(k, c)| ((k[0] * k[0] + k[1] * k[1]) as f64).powf(s) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn eval(&self, x: Point) -> f64 {
        let km = self.k_max as usize;
        let mut p1 = vec![Complex64::new(1.0, 0.0); 2 * km + 1];
        let mut p2 = p1.clone();
        let (z1, z2) = (Complex64::cis(x[0]), Complex64::cis(x[1]));
        for j in 1..=km {
            p1[km + j] = p1[km + j - 1] * z1;
            p2[km + j] = p2[km + j - 1] * z2;
            p1[km - j] = p1[km + j].conj();
            p2[km - j] = p2[km + j].conj();
        }
        self.terms
            .iter()
            .map(|(k, c)| {
                let e = p1[(k[0] + self.k_max) as usize] * p2[(k[1] + self.k_max) as usize];
                c.re * e.re - c.im * e.im
            })
            .sum()
    }

    /// Samples on the `m × m` grid.
    pub fn sample(&self, m: usize) -> Result<SpectralField> {
        sample_composed(m, |x| self.eval(x))
    }
}

fn sample_composed(m: usize, f: impl Fn(Point) -> f64 + Sync) -> Result<SpectralField> {
    check_grid(m)?;
    let h = TAU / m as f64;
    let mut samples = vec![0.0; m * m];
    samples.par_chunks_mut(m).enumerate().for_each(|(j, row)| {
        for (i, v) in row.iter_mut().enumerate() {
            *v = f([i as f64 * h, j as f64 * h]);
        }
    });
    SpectralField::from_samples(m, samples)
}

/// `φ_n = init ∘ Φ_n^{-1}` on the `m × m` grid: the transport solution
/// after `n` legs, evaluated pointwise through exact inverse legs.
pub fn pullback_solution<S: ShearSchedule + ?Sized>(
    flow: &S,
    n: usize,
    init: &TrigPolynomial,
    m: usize,
) -> Result<SpectralField> {
    pullback_between(flow, 0, n, init, m)
}

/// Transport solution at leg `start + n` for data `init` given at leg `start`.
pub fn pullback_between<S: ShearSchedule + ?Sized>(
    flow: &S,
    start: usize,
    n: usize,
    init: &TrigPolynomial,
    m: usize,
) -> Result<SpectralField> {
    let d = flow.leg_duration();
    let (s, t) = (start as f64 * d, (start + n) as f64 * d);
    // validate once, then evaluate without per-point checks
    leg_pieces(flow, s, t)?;
    sample_composed(m, |x| {
        let mut y = x;
        for leg in (start..start + n).rev() {
            y = inverse_leg_map(flow, leg, y, 1.0);
        }
        init.eval(y)
    })
}

/// `init ∘ Φ_{s,t}^{-1}` on the grid for arbitrary times `s ≤ t`.
pub fn pullback_at<S: ShearSchedule + ?Sized>(
    flow: &S,
    s: f64,
    t: f64,
    init: &TrigPolynomial,
    m: usize,
) -> Result<SpectralField> {
    let pieces = leg_pieces(flow, s, t)?;
    sample_composed(m, |x| {
        let mut y = x;
        for &(leg, a, b) in pieces.iter().rev() {
            y = inverse_leg_map(flow, leg, y, b - a);
        }
        init.eval(y)
    })
}

/// `g ∘ Φ_{s,t}` on the grid: the κ = 0 adjoint of the transport operator
/// applied to `g`.
pub fn pushforward_adjoint<S: ShearSchedule + ?Sized>(
    flow: &S,
    s: f64,
    t: f64,
    g: &TrigPolynomial,
    m: usize,
) -> Result<SpectralField> {
    let pieces = leg_pieces(flow, s, t)?;
    sample_composed(m, |x| {
        let mut y = x;
        for &(leg, a, b) in &pieces {
            y = leg_map(flow, leg, y, b - a);
        }
        g.eval(y)
    })
}
