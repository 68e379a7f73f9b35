//! Shear profiles on `[0, 2π]` and their rescaled copies.
//!
//! A profile is zero-extended outside its support interval. Built-in
//! profiles carry closed-form derivatives; tabulated profiles interpolate
//! the supplied derivative columns with cubic Hermite pieces.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use crate::error::{Error, Result};

const NORM_GRID: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// `(1 - cos x) / 2`
    CosineBump,
    /// `x²(2π - x)² / π⁴`
    QuarticBump,
    Tabulated(Arc<ProfileTable>),
}

/// Uniformly sampled profile with its first three derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    step: f64,
    values: [Vec<f64>; 4],
}

impl ProfileTable {
    /// Builds a table from rows `(x, φ, φ', φ'', φ''')`. The abscissae must
    /// start at 0, end at 2π and be uniformly spaced.
    pub fn from_rows(rows: &[[f64; 5]]) -> Result<Self> {
        if rows.len() < 4 {
            return Err(Error::InvalidProfileTable(format!(
                "need at least 4 rows, got {}",
                rows.len()
            )));
        }
        let n = rows.len();
        let step = TAU / (n - 1) as f64;
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProfileTable(format!("row {i} has a non-finite entry")));
            }
            let expected = i as f64 * step;
            if (row[0] - expected).abs() > 1e-9 * TAU {
                return Err(Error::InvalidProfileTable(format!(
                    "row {i}: x = {} but a uniform grid on [0, 2π] needs {expected}",
                    row[0]
                )));
            }
        }
        let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
        Ok(Self {
            step,
            values: [column(1), column(2), column(3), column(4)],
        })
    }

    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.values[0].is_empty()
    }

    /// Derivative of the given order at `x ∈ [0, 2π]`.
    fn eval(&self, order: usize, x: f64) -> f64 {
        let last = self.len() - 1;
        let s = (x / self.step).clamp(0.0, last as f64);
        let i = (s.floor() as usize).min(last - 1);
        let t = s - i as f64;
        let f = &self.values[order];
        if order == 3 {
            return f[i] * (1.0 - t) + f[i + 1] * t;
        }
        // Cubic Hermite on the value and slope columns.
        let g = &self.values[order + 1];
        let h = self.step;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * f[i] + h10 * h * g[i] + h01 * f[i + 1] + h11 * h * g[i + 1]
    }
}

/// A shear profile φ on `[0, 2π]` together with its cached norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ShearProfile {
    name: String,
    shape: Shape,
    sup_norm: f64,
    l1_norm: f64,
    d1_sup_norm: f64,
}

impl ShearProfile {
    /// The default profile `φ(x) = (1 - cos x)/2`.
    pub fn cosine_bump() -> Self {
        Self {
            name: "cosine_bump".into(),
            shape: Shape::CosineBump,
            sup_norm: 1.0,
            l1_norm: PI,
            d1_sup_norm: 0.5,
        }
    }

    /// `φ(x) = x²(2π - x)²/π⁴`, normalised to unit height.
    pub fn quartic_bump() -> Self {
        // max |φ'| is attained where φ'' = 0, i.e. x = π(1 ± 1/√3).
        let mut p = Self {
            name: "quartic_bump".into(),
            shape: Shape::QuarticBump,
            sup_norm: 1.0,
            l1_norm: 16.0 * PI / 15.0,
            d1_sup_norm: 0.0,
        };
        p.d1_sup_norm = p.d1(PI * (1.0 - 1.0 / 3f64.sqrt())).abs();
        p
    }

    pub fn tabulated(name: impl Into<String>, table: ProfileTable) -> Self {
        let mut p = Self {
            name: name.into(),
            shape: Shape::Tabulated(Arc::new(table)),
            sup_norm: 0.0,
            l1_norm: 0.0,
            d1_sup_norm: 0.0,
        };
        p.sup_norm = p.dense_sup(0);
        p.d1_sup_norm = p.dense_sup(1);
        p.l1_norm = p.dense_l1();
        p
    }

    /// Looks up a built-in profile by its configuration name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "cosine_bump" => Ok(Self::cosine_bump()),
            "quartic_bump" => Ok(Self::quartic_bump()),
            other => Err(Error::UnknownProfile(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Derivative of order `0..=3` at `x`, zero outside `[0, 2π]`.
    pub fn derivative(&self, order: usize, x: f64) -> f64 {
        assert!(order <= 3, "only derivatives up to third order are available");
        if !(0.0..=TAU).contains(&x) {
            return 0.0;
        }
        match &self.shape {
            Shape::CosineBump => match order {
                0 => 0.5 * (1.0 - x.cos()),
                1 => 0.5 * x.sin(),
                2 => 0.5 * x.cos(),
                _ => -0.5 * x.sin(),
            },
            Shape::QuarticBump => {
                let p4 = PI.powi(4);
                match order {
                    0 => (x * (TAU - x)).powi(2) / p4,
                    1 => 4.0 * x * (TAU - x) * (PI - x) / p4,
                    2 => 4.0 * (3.0 * x * x - 6.0 * PI * x + 2.0 * PI * PI) / p4,
                    _ => 24.0 * (x - PI) / p4,
                }
            }
            Shape::Tabulated(t) => t.eval(order, x),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    pub fn d1(&self, x: f64) -> f64 {
        self.derivative(1, x)
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.derivative(2, x)
    }

    pub fn d3(&self, x: f64) -> f64 {
        self.derivative(3, x)
    }

    /// ‖φ‖_∞
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// ‖φ‖_{L¹} over `[0, 2π]` with Lebesgue measure.
    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }

    /// ‖φ'‖_∞
    pub fn d1_sup_norm(&self) -> f64 {
        self.d1_sup_norm
    }

    /// ‖φ‖_{C¹} = ‖φ‖_∞ + ‖φ'‖_∞
    pub fn c1_norm(&self) -> f64 {
        self.sup_norm + self.d1_sup_norm
    }

    /// The rescaled profile `φ_κ(x) = φ(N x)` on the torus: `x` is reduced
    /// mod 2π and the copy vanishes outside `[0, 2π/N]`.
    pub fn eval_scaled(&self, n_kappa: usize, x: f64) -> f64 {
        let y = x.rem_euclid(TAU) * n_kappa as f64;
        if y <= TAU {
            self.eval(y)
        } else {
            0.0
        }
    }

    /// Derivative of order `order` of `x ↦ φ(N x)` (chain rule included).
    pub fn derivative_scaled(&self, order: usize, n_kappa: usize, x: f64) -> f64 {
        let n = n_kappa as f64;
        let y = x.rem_euclid(TAU) * n;
        if y <= TAU {
            n.powi(order as i32) * self.derivative(order, y)
        } else {
            0.0
        }
    }

    fn dense_sup(&self, order: usize) -> f64 {
        (0..=NORM_GRID)
            .map(|i| self.derivative(order, TAU * i as f64 / NORM_GRID as f64).abs())
            .fold(0.0, f64::max)
    }

    fn dense_l1(&self) -> f64 {
        // composite Simpson, NORM_GRID even
        let h = TAU / NORM_GRID as f64;
        let sum: f64 = (0..=NORM_GRID)
            .map(|i| {
                let w = if i == 0 || i == NORM_GRID {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * self.eval(i as f64 * h).abs()
            })
            .sum();
        sum * h / 3.0
    }
}

/// Outcome of the non-degeneracy check on φ' and φ''.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub a1_ok: bool,
    pub a2_ok: bool,
    pub zeros_d1: Vec<f64>,
    pub zeros_d2: Vec<f64>,
    /// min |φ''| over the zeros of φ'
    pub min_d2_at_zeros_d1: f64,
    /// min |φ'''| over the zeros of φ''
    pub min_d3_at_zeros_d2: f64,
}

/// Locates the zero sets of φ' and φ'' on `[0, 2π]` and checks that the
/// next derivative does not vanish there.
pub fn check_assumptions(p: &ShearProfile, grid_points: usize, tol: f64) -> Result<AssumptionReport> {
    if grid_points < 1000 {
        return Err(Error::InvalidArgument(format!(
            "grid_points = {grid_points}, need at least 1000"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol = {tol} must be positive")));
    }
    let zeros_d1 = find_roots(|x| p.d1(x), grid_points, tol);
    let zeros_d2 = find_roots(|x| p.d2(x), grid_points, tol);

    let mut min_d2 = f64::INFINITY;
    for &x in &zeros_d1 {
        let v = p.d2(x).abs();
        if v < tol {
            return Err(Error::DegenerateProfile { x, value: v });
        }
        min_d2 = min_d2.min(v);
    }
    let min_d3 = zeros_d2.iter().map(|&x| p.d3(x).abs()).fold(f64::INFINITY, f64::min);

    Ok(AssumptionReport {
        a1_ok: min_d2 > 0.0,
        a2_ok: min_d3 > 0.0,
        zeros_d1,
        zeros_d2,
        min_d2_at_zeros_d1: min_d2,
        min_d3_at_zeros_d2: min_d3,
    })
}

/// Sign-change scan on a uniform grid followed by bisection. Grid values
/// with `|f| <= tol` are accepted as roots directly; roots closer than two
/// grid spacings are merged.
fn find_roots(f: impl Fn(f64) -> f64, grid_points: usize, tol: f64) -> Vec<f64> {
    let h = TAU / (grid_points - 1) as f64;
    let xs: Vec<f64> = (0..grid_points).map(|i| i as f64 * h).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut roots: Vec<f64> = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.last().map_or(true, |&last| r - last > 2.0 * h) {
            roots.push(r);
        }
    };
    for i in 0..grid_points {
        if fs[i].abs() <= tol {
            push(xs[i], &mut roots);
            continue;
        }
        if i + 1 < grid_points && fs[i + 1].abs() > tol && fs[i].signum() != fs[i + 1].signum() {
            let (mut a, mut b, fa) = (xs[i], xs[i + 1], fs[i]);
            while b - a > tol {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if fm.signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            push(0.5 * (a + b), &mut roots);
        }
    }
    roots
}
