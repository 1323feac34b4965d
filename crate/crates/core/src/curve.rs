//! Paths `γ: [0,1] → ℝ³` sampled on the uniform grid `t_i = i/m`, the
//! pointwise multiplier that lives on the interior nodes, and the two
//! initializations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::levelset::LevelSet;
use crate::Vec3;

/// Grid resolution used when none is given.
pub const DEFAULT_M: usize = 100;
/// Default amplitude of the randomized initialization.
pub const DEFAULT_TAU_R: f64 = 4.0;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("index {index} is not an interior node of a curve with m = {m}")]
    Index { index: usize, m: usize },
    #[error("malformed curve json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `m + 1` samples of a path with pinned endpoints.
///
/// The endpoints are fixed at construction; only the interior can be moved,
/// and only from inside this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCurve {
    points: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
struct CurveJson {
    m: usize,
    points: Vec<[f64; 3]>,
}

impl DiscreteCurve {
    pub fn from_points(points: Vec<Vec3>) -> Result<Self, CurveError> {
        if points.len() < 3 {
            return Err(CurveError::Config(format!(
                "a curve needs m >= 2 (at least 3 points), got {} points",
                points.len()
            )));
        }
        Ok(DiscreteCurve { points })
    }

    /// Number of grid intervals.
    pub fn m(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.m() as f64
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn start(&self) -> Vec3 {
        self.points[0]
    }

    pub fn end(&self) -> Vec3 {
        self.points[self.m()]
    }

    /// Interior nodes `1..m`.
    pub fn interior(&self) -> &[Vec3] {
        &self.points[1..self.m()]
    }

    pub(crate) fn interior_mut(&mut self) -> &mut [Vec3] {
        let m = self.m();
        &mut self.points[1..m]
    }

    /// Applies `f` to every node, endpoints included.
    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> DiscreteCurve {
        DiscreteCurve {
            points: self.points.iter().map(f).collect(),
        }
    }

    /// Central second difference at an interior node without bounds checks
    /// beyond the slice's own.
    #[inline]
    pub(crate) fn laplacian(&self, i: usize) -> Vec3 {
        let m = self.m() as f64;
        (self.points[i + 1] - 2.0 * self.points[i] + self.points[i - 1]) * (m * m)
    }

    /// Central first difference at an interior node.
    #[inline]
    pub(crate) fn velocity(&self, i: usize) -> Vec3 {
        let m = self.m() as f64;
        (self.points[i + 1] - self.points[i - 1]) * (0.5 * m)
    }

    pub fn to_json(&self) -> String {
        let j = CurveJson {
            m: self.m(),
            points: self.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        };
        serde_json::to_string(&j).expect("curve serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, CurveError> {
        let j: CurveJson = serde_json::from_str(s)?;
        if j.points.len() != j.m + 1 {
            return Err(CurveError::Config(format!(
                "m = {} but {} points given",
                j.m,
                j.points.len()
            )));
        }
        Self::from_points(j.points.into_iter().map(Vec3::from).collect())
    }
}

/// Multiplier values at the interior nodes `t_1..t_{m-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierField {
    values: Vec<f64>,
}

impl MultiplierField {
    pub fn zeros(m: usize) -> Self {
        MultiplierField {
            values: vec![0.0; m.saturating_sub(1)],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        MultiplierField { values }
    }

    pub fn m(&self) -> usize {
        self.values.len() + 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

fn check_m(m: usize) -> Result<(), CurveError> {
    if m < 2 {
        return Err(CurveError::Config(format!(
            "grid resolution m must be >= 2, got {m}"
        )));
    }
    Ok(())
}

/// `γ₀(t) = p(1−t) + qt`, `λ₀ = 0`.
pub fn init_straight_line(
    p: Vec3,
    q: Vec3,
    m: usize,
) -> Result<(DiscreteCurve, MultiplierField), CurveError> {
    init_randomized_with(p, q, m, Vec3::zeros(), 0.0)
}

/// `γ₀(t) = p(1−t) + τ_r r(1−t)t + qt` with `r` a seeded random point on
/// `surface`, `λ₀ = 0`.
pub fn init_randomized(
    p: Vec3,
    q: Vec3,
    m: usize,
    surface: &LevelSet,
    tau_r: f64,
    seed: u64,
) -> Result<(DiscreteCurve, MultiplierField), CurveError> {
    if !(tau_r >= 0.0 && tau_r.is_finite()) {
        return Err(CurveError::Config(format!(
            "tau_r must be >= 0, got {tau_r}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = surface.random_point(&mut rng);
    init_randomized_with(p, q, m, r, tau_r)
}

/// Randomized initialization with an explicit bump point `r`.
pub fn init_randomized_with(
    p: Vec3,
    q: Vec3,
    m: usize,
    r: Vec3,
    tau_r: f64,
) -> Result<(DiscreteCurve, MultiplierField), CurveError> {
    check_m(m)?;
    let mut points: Vec<Vec3> = (0..=m)
        .map(|i| {
            let t = i as f64 / m as f64;
            let line = if p == q { p } else { p * (1.0 - t) + q * t };
            if tau_r == 0.0 {
                line
            } else {
                p * (1.0 - t) + r * (tau_r * (1.0 - t) * t) + q * t
            }
        })
        .collect();
    points[0] = p;
    points[m] = q;
    Ok((DiscreteCurve { points }, MultiplierField::zeros(m)))
}

/// `(γ(t_{i+1}) − 2γ(t_i) + γ(t_{i−1})) / Δt²` for `1 ≤ i ≤ m−1`.
pub fn second_difference(curve: &DiscreteCurve, i: usize) -> Result<Vec3, CurveError> {
    if i == 0 || i >= curve.m() {
        return Err(CurveError::Index {
            index: i,
            m: curve.m(),
        });
    }
    Ok(curve.laplacian(i))
}

/// Length of the polyline through the samples.
pub fn curve_length(curve: &DiscreteCurve) -> f64 {
    curve.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Forward-difference speeds `‖γ_{i+1} − γ_i‖ / Δt`, one per interval.
pub fn speed_profile(curve: &DiscreteCurve) -> Vec<f64> {
    let m = curve.m() as f64;
    curve
        .points
        .windows(2)
        .map(|w| (w[1] - w[0]).norm() * m)
        .collect()
}
