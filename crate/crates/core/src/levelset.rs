//! Implicit surfaces represented as the zero level set of a scalar field.
//!
//! Every [`LevelSet`] provides the field value, its gradient and (for the
//! analytic kinds) its Hessian. The point-cloud kind is the unsigned
//! distance to a finite sample set; its nearest-sample queries go through a
//! k-d tree built at construction.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::kdtree::KdTree;
use crate::Vec3;

/// Default torus radii.
pub const TORUS_MAJOR: f64 = 2.0;
pub const TORUS_MINOR: f64 = 1.0;

/// Hard cap on rejection-sampling attempts in [`check_assumption_a`].
pub const MAX_BAND_ATTEMPTS: usize = 1_000_000;

/// Finite-difference step for Hessians of fields without an analytic one.
const FD_HESSIAN_STEP: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum LevelSetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("gradient singularity at ({:.6}, {:.6}, {:.6})", .0.x, .0.y, .0.z)]
    Singularity(Vec3),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no points found in the band |phi| <= {band} after {attempts} attempts")]
    Sampling { band: f64, attempts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Discriminant of a [`LevelSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum LevelSetKind {
    SphereQuadratic,
    SphereSdf,
    Torus,
    Plane,
    PointCloud,
}

impl fmt::Display for LevelSetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LevelSetKind::SphereQuadratic => "sphere-quadratic",
            LevelSetKind::SphereSdf => "sphere",
            LevelSetKind::Torus => "torus",
            LevelSetKind::Plane => "plane",
            LevelSetKind::PointCloud => "point-cloud",
        };
        f.write_str(s)
    }
}

/// Unsigned distance field of a finite point sample.
#[derive(Debug, Clone)]
pub struct PointCloud {
    tree: KdTree,
    lo: Vec3,
    hi: Vec3,
}

impl PointCloud {
    /// Builds the field from raw samples. Exact duplicates are dropped
    /// (first occurrence kept), so indices refer to the deduplicated order.
    pub fn new(points: Vec<Vec3>) -> Result<Self, LevelSetError> {
        let mut seen = std::collections::HashSet::with_capacity(points.len());
        let mut unique = Vec::with_capacity(points.len());
        for p in points {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(LevelSetError::Config("non-finite point".into()));
            }
            // -0.0 and 0.0 are the same point.
            let key = [p.x + 0.0, p.y + 0.0, p.z + 0.0].map(f64::to_bits);
            if seen.insert(key) {
                unique.push(p);
            }
        }
        if unique.is_empty() {
            return Err(LevelSetError::Config("point cloud is empty".into()));
        }
        let mut lo = unique[0];
        let mut hi = unique[0];
        for p in &unique {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Ok(PointCloud {
            tree: KdTree::build(unique),
            lo,
            hi,
        })
    }

    pub fn points(&self) -> &[Vec3] {
        self.tree.points()
    }

    /// Field value and gradient at `x`.
    fn eval_grad(&self, x: &Vec3) -> Result<(f64, Vec3), LevelSetError> {
        let (i, d) = self.nearest(x);
        if d == 0.0 {
            return Err(LevelSetError::Singularity(*x));
        }
        Ok((d, (x - self.points()[i]) / d))
    }

    pub fn len(&self) -> usize {
        self.points().len()
    }

    pub fn is_empty(&self) -> bool {
        self.points().is_empty()
    }

    /// Nearest sample index (lowest index on ties) and its distance.
    pub fn nearest(&self, x: &Vec3) -> (usize, f64) {
        let (i, d2) = self
            .tree
            .nearest(x)
            .expect("point cloud is nonempty by construction");
        (i, d2.sqrt())
    }
}

/// A scalar field whose zero level set is the surface.
#[derive(Debug, Clone)]
pub enum LevelSet {
    /// `½(|x|² − R²)`
    SphereQuadratic { radius: f64 },
    /// `R − |x|`, positive inside.
    SphereSdf { radius: f64 },
    /// `√((√(x²+y²) − R)² + z²) − r`
    Torus { major: f64, minor: f64 },
    /// `a·x`
    Plane { normal: Vec3 },
    /// `min_{p∈P} ‖p − x‖`
    PointCloud(PointCloud),
}

impl LevelSet {
    pub fn sphere_quadratic(radius: f64) -> Result<Self, LevelSetError> {
        positive("sphere radius", radius)?;
        Ok(LevelSet::SphereQuadratic { radius })
    }

    pub fn sphere_sdf(radius: f64) -> Result<Self, LevelSetError> {
        positive("sphere radius", radius)?;
        Ok(LevelSet::SphereSdf { radius })
    }

    pub fn torus(major: f64, minor: f64) -> Result<Self, LevelSetError> {
        positive("torus major radius", major)?;
        positive("torus minor radius", minor)?;
        Ok(LevelSet::Torus { major, minor })
    }

    pub fn plane(normal: Vec3) -> Result<Self, LevelSetError> {
        if !normal.iter().all(|c| c.is_finite()) || normal.norm() == 0.0 {
            return Err(LevelSetError::Config(
                "plane normal must be finite and nonzero".into(),
            ));
        }
        Ok(LevelSet::Plane { normal })
    }

    pub fn point_cloud(points: Vec<Vec3>) -> Result<Self, LevelSetError> {
        PointCloud::new(points).map(LevelSet::PointCloud)
    }

    pub fn kind(&self) -> LevelSetKind {
        match self {
            LevelSet::SphereQuadratic { .. } => LevelSetKind::SphereQuadratic,
            LevelSet::SphereSdf { .. } => LevelSetKind::SphereSdf,
            LevelSet::Torus { .. } => LevelSetKind::Torus,
            LevelSet::Plane { .. } => LevelSetKind::Plane,
            LevelSet::PointCloud(_) => LevelSetKind::PointCloud,
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, LevelSet::PointCloud(_))
    }

    /// Radius for the sphere kinds.
    pub fn sphere_radius(&self) -> Option<f64> {
        match self {
            LevelSet::SphereQuadratic { radius } | LevelSet::SphereSdf { radius } => Some(*radius),
            _ => None,
        }
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        match self {
            LevelSet::SphereQuadratic { radius } => 0.5 * (x.norm_squared() - radius * radius),
            LevelSet::SphereSdf { radius } => radius - x.norm(),
            LevelSet::Torus { major, minor } => {
                let rho = x.x.hypot(x.y);
                (rho - major).hypot(x.z) - minor
            }
            LevelSet::Plane { normal } => normal.dot(x),
            LevelSet::PointCloud(pc) => pc.nearest(x).1,
        }
    }

    pub fn grad(&self, x: &Vec3) -> Result<Vec3, LevelSetError> {
        match self {
            LevelSet::SphereQuadratic { .. } => Ok(*x),
            LevelSet::SphereSdf { .. } => {
                let r = x.norm();
                if r == 0.0 {
                    return Err(LevelSetError::Singularity(*x));
                }
                Ok(-x / r)
            }
            LevelSet::Torus { major, .. } => {
                let (w, d, rho) = torus_offset(x, *major);
                if rho == 0.0 || d == 0.0 {
                    return Err(LevelSetError::Singularity(*x));
                }
                Ok(w / d)
            }
            LevelSet::Plane { normal } => Ok(*normal),
            LevelSet::PointCloud(pc) => pc.eval_grad(x).map(|(_, g)| g),
        }
    }

    /// Field value and gradient in one call.
    pub fn eval_grad(&self, x: &Vec3) -> Result<(f64, Vec3), LevelSetError> {
        match self {
            LevelSet::PointCloud(pc) => pc.eval_grad(x),
            _ => Ok((self.eval(x), self.grad(x)?)),
        }
    }

    /// Analytic Hessian; `None` for the point-cloud kind.
    pub fn hessian(&self, x: &Vec3) -> Option<Result<Matrix3<f64>, LevelSetError>> {
        let h = match self {
            LevelSet::SphereQuadratic { .. } => Ok(Matrix3::identity()),
            LevelSet::SphereSdf { .. } => {
                let r = x.norm();
                if r == 0.0 {
                    Err(LevelSetError::Singularity(*x))
                } else {
                    let u = x / r;
                    Ok(-(Matrix3::identity() - u * u.transpose()) / r)
                }
            }
            LevelSet::Torus { major, .. } => {
                let (w, d, rho) = torus_offset(x, *major);
                if rho == 0.0 || d == 0.0 {
                    Err(LevelSetError::Singularity(*x))
                } else {
                    // Jacobian of the offset map w(x); n = w/d is one of its
                    // unit eigenvectors, so (J − n nᵀ)/d is symmetric.
                    let s = 1.0 - major / rho;
                    let c = major / (rho * rho * rho);
                    let mut jac = Matrix3::zeros();
                    jac[(0, 0)] = s + c * x.x * x.x;
                    jac[(1, 1)] = s + c * x.y * x.y;
                    jac[(0, 1)] = c * x.x * x.y;
                    jac[(1, 0)] = c * x.x * x.y;
                    jac[(2, 2)] = 1.0;
                    let n = w / d;
                    Ok((jac - n * n.transpose()) / d)
                }
            }
            LevelSet::Plane { .. } => Ok(Matrix3::zeros()),
            LevelSet::PointCloud(_) => return None,
        };
        Some(h)
    }

    /// Central-difference Hessian of `eval` with step `h`.
    pub fn fd_hessian(&self, x: &Vec3, h: f64) -> Matrix3<f64> {
        let f0 = self.eval(x);
        let e = |i: usize| {
            let mut v = Vec3::zeros();
            v[i] = h;
            v
        };
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            let ei = e(i);
            m[(i, i)] = (self.eval(&(x + ei)) - 2.0 * f0 + self.eval(&(x - ei))) / (h * h);
            for j in (i + 1)..3 {
                let ej = e(j);
                let v = (self.eval(&(x + ei + ej))
                    - self.eval(&(x + ei - ej))
                    - self.eval(&(x - ei + ej))
                    + self.eval(&(x - ei - ej)))
                    / (4.0 * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Axis-aligned box containing the surface, as (lo, hi).
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self {
            LevelSet::SphereQuadratic { radius } | LevelSet::SphereSdf { radius } => {
                let r = Vec3::repeat(*radius);
                (-r, r)
            }
            LevelSet::Torus { major, minor } => {
                let h = Vec3::new(major + minor, major + minor, *minor);
                (-h, h)
            }
            // The plane is unbounded; sample a unit box around the origin.
            LevelSet::Plane { .. } => (Vec3::repeat(-1.0), Vec3::repeat(1.0)),
            LevelSet::PointCloud(pc) => (pc.lo, pc.hi),
        }
    }

    /// A pseudo-random point on the surface. Spheres are sampled uniformly,
    /// the torus by uniform angles, planes by projecting a Gaussian draw, and
    /// point clouds by a uniform choice of sample.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self {
            LevelSet::SphereQuadratic { radius } | LevelSet::SphereSdf { radius } => {
                random_unit_vector(rng) * *radius
            }
            LevelSet::Torus { major, minor } => {
                let u: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let v: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let ring = major + minor * v.cos();
                Vec3::new(ring * u.cos(), ring * u.sin(), minor * v.sin())
            }
            LevelSet::Plane { normal } => {
                let g = gaussian_vector(rng);
                g - normal * (normal.dot(&g) / normal.norm_squared())
            }
            LevelSet::PointCloud(pc) => pc.points()[rng.random_range(0..pc.len())],
        }
    }
}

fn positive(what: &str, v: f64) -> Result<(), LevelSetError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(LevelSetError::Config(format!(
            "{what} must be positive, got {v}"
        )))
    }
}

/// Offset from the torus core circle: (w, |w|, ρ).
fn torus_offset(x: &Vec3, major: f64) -> (Vec3, f64, f64) {
    let rho = x.x.hypot(x.y);
    let s = if rho > 0.0 { 1.0 - major / rho } else { 0.0 };
    let w = Vec3::new(s * x.x, s * x.y, x.z);
    let d = (rho - major).hypot(x.z);
    (w, d, rho)
}

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Uniform direction on the unit sphere from a normalized Gaussian triple.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let g = gaussian_vector(rng);
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Reads a point cloud from whitespace-separated `x y z` lines. Blank lines
/// and lines starting with `#` are skipped.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<LevelSet, LevelSetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let points = parse_point_cloud(&text, &path.display().to_string())?;
    if points.len() < 4 {
        return Err(LevelSetError::Config(format!(
            "point cloud needs at least 4 points, found {}",
            points.len()
        )));
    }
    let cloud = PointCloud::new(points)?;
    if cloud.len() < 4 {
        return Err(LevelSetError::Config(format!(
            "point cloud needs at least 4 distinct points, found {}",
            cloud.len()
        )));
    }
    Ok(LevelSet::PointCloud(cloud))
}

pub fn parse_point_cloud(text: &str, source: &str) -> Result<Vec<Vec3>, LevelSetError> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| LevelSetError::Parse {
            path: source.to_string(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "expected 3 coordinates, found {}",
                fields.len()
            )));
        }
        let mut c = [0.0; 3];
        for (slot, f) in c.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|e| err(format!("bad coordinate {f:?}: {e}")))?;
            if !slot.is_finite() {
                return Err(err(format!("non-finite coordinate {f:?}")));
            }
        }
        points.push(Vec3::new(c[0], c[1], c[2]));
    }
    Ok(points)
}

/// Outcome of sampling the structural condition
/// `|∇φ|² ≥ ν` and `2a‖D²φ‖ ≤ ν` on the band `|φ| ≤ a`.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionAReport {
    pub band_half_width: f64,
    /// Sampled minimum of `|∇φ|²`.
    pub nu: f64,
    /// Sampled maximum spectral norm of `D²φ`.
    pub hessian_bound: f64,
    pub satisfied: bool,
    /// Set when the Hessian came from finite differences.
    pub approximate: bool,
    pub samples: usize,
}

/// Rejection-samples the band `|φ| ≤ a` in the surface's bounding box
/// inflated by `2a` and evaluates the structural condition there.
pub fn check_assumption_a(
    surface: &LevelSet,
    a: f64,
    n_samples: usize,
    seed: u64,
) -> Result<AssumptionAReport, LevelSetError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(LevelSetError::Config(format!(
            "band half-width must be positive, got {a}"
        )));
    }
    if n_samples < 100 {
        return Err(LevelSetError::Config(format!(
            "need at least 100 samples, got {n_samples}"
        )));
    }
    let (mut lo, mut hi) = surface.bounding_box();
    if let LevelSet::SphereQuadratic { radius } = surface {
        // The quadratic band reaches out to √(R² + 2a), which can exceed R + 2a.
        let r = (radius * radius + 2.0 * a).sqrt().max(radius + 2.0 * a);
        lo = Vec3::repeat(-r);
        hi = Vec3::repeat(r);
    } else {
        lo -= Vec3::repeat(2.0 * a);
        hi += Vec3::repeat(2.0 * a);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nu = f64::INFINITY;
    let mut hessian_bound: f64 = 0.0;
    let mut samples = 0;
    let mut attempts = 0;
    while samples < n_samples && attempts < MAX_BAND_ATTEMPTS {
        attempts += 1;
        let x = Vec3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        );
        if surface.eval(&x).abs() > a {
            continue;
        }
        let Ok(g) = surface.grad(&x) else { continue };
        let hess = match surface.hessian(&x) {
            Some(Ok(h)) => h,
            Some(Err(_)) => continue,
            None => surface.fd_hessian(&x, FD_HESSIAN_STEP),
        };
        samples += 1;
        nu = nu.min(g.norm_squared());
        hessian_bound = hessian_bound.max(spectral_norm(&hess));
    }
    if samples == 0 {
        return Err(LevelSetError::Sampling { band: a, attempts });
    }
    Ok(AssumptionAReport {
        band_half_width: a,
        nu,
        hessian_bound,
        satisfied: 2.0 * a * hessian_bound <= nu,
        approximate: !surface.is_analytic(),
        samples,
    })
}

pub fn spectral_norm(m: &Matrix3<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn analytic_surfaces() -> Vec<LevelSet> {
        vec![
            LevelSet::sphere_quadratic(1.0).unwrap(),
            LevelSet::sphere_sdf(1.0).unwrap(),
            LevelSet::torus(TORUS_MAJOR, TORUS_MINOR).unwrap(),
            LevelSet::plane(Vec3::new(0.3, -0.2, 1.0)).unwrap(),
        ]
    }

    fn fd_grad(s: &LevelSet, x: &Vec3) -> Vec3 {
        let h = 1e-5;
        let mut g = Vec3::zeros();
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            g[i] = (s.eval(&(x + e)) - s.eval(&(x - e))) / (2.0 * h);
        }
        g
    }

    fn band_points(s: &LevelSet, band: f64, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = s.bounding_box();
        let mut out = Vec::new();
        while out.len() < n {
            let x = Vec3::new(
                rng.random_range(lo.x - 1.0..hi.x + 1.0),
                rng.random_range(lo.y - 1.0..hi.y + 1.0),
                rng.random_range(lo.z - 1.0..hi.z + 1.0),
            );
            if s.eval(&x).abs() <= band {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn eval_examples() {
        let sdf = LevelSet::sphere_sdf(1.0).unwrap();
        assert_eq!(sdf.eval(&Vec3::new(0.0, 0.0, 1.0)), 0.0);
        assert_eq!(sdf.eval(&Vec3::new(0.0, 0.0, 0.5)), 0.5);
        let quad = LevelSet::sphere_quadratic(1.0).unwrap();
        assert_eq!(quad.eval(&Vec3::new(2.0, 0.0, 0.0)), 1.5);
    }

    #[test]
    fn grad_examples() {
        let x = Vec3::new(0.0, 0.0, 2.0);
        let quad = LevelSet::sphere_quadratic(1.0).unwrap();
        assert_eq!(quad.grad(&x).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        let sdf = LevelSet::sphere_sdf(1.0).unwrap();
        assert_eq!(sdf.grad(&x).unwrap(), Vec3::new(0.0, 0.0, -1.0));
        let plane = LevelSet::plane(Vec3::z()).unwrap();
        assert_eq!(plane.grad(&Vec3::new(5.0, -3.0, 2.0)).unwrap(), Vec3::z());
    }

    #[test]
    fn analytic_kinds_vanish_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in analytic_surfaces() {
            for _ in 0..100 {
                let x = s.random_point(&mut rng);
                assert!(
                    s.eval(&x).abs() <= 1e-12,
                    "{:?} at {x:?}: {}",
                    s.kind(),
                    s.eval(&x)
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (k, s) in analytic_surfaces().iter().enumerate() {
            for x in band_points(s, 0.3, 100, 11 + k as u64) {
                let g = s.grad(&x).unwrap();
                let err = (g - fd_grad(s, &x)).norm();
                assert!(
                    err <= 1e-4 * (1.0 + g.norm()),
                    "{:?} at {x:?}: {err}",
                    s.kind()
                );
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        for (k, s) in analytic_surfaces().iter().enumerate() {
            for x in band_points(s, 0.3, 50, 21 + k as u64) {
                let h = s.hessian(&x).unwrap().unwrap();
                let fd = s.fd_hessian(&x, 1e-4);
                assert!(
                    (h - fd).norm() <= 1e-4 * (1.0 + h.norm()),
                    "{:?} at {x:?}",
                    s.kind()
                );
            }
        }
    }

    #[test]
    fn sdf_gradient_has_unit_norm() {
        let sdf = LevelSet::sphere_sdf(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = gaussian_vector(&mut rng) * rng.random_range(0.01..5.0);
            assert_relative_eq!(sdf.grad(&x).unwrap().norm(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn singularities_are_reported() {
        let sdf = LevelSet::sphere_sdf(1.0).unwrap();
        assert!(matches!(
            sdf.grad(&Vec3::zeros()),
            Err(LevelSetError::Singularity(_))
        ));
        let torus = LevelSet::torus(2.0, 1.0).unwrap();
        assert!(torus.grad(&Vec3::new(0.0, 0.0, 0.4)).is_err());
        assert!(torus.grad(&Vec3::new(2.0, 0.0, 0.0)).is_err());
        let pc = LevelSet::point_cloud(vec![Vec3::x(), Vec3::y()]).unwrap();
        assert!(pc.grad(&Vec3::x()).is_err());
    }

    #[test]
    fn point_cloud_gradient_points_away_from_nearest() {
        let pc = LevelSet::point_cloud(vec![Vec3::z(), -Vec3::z()]).unwrap();
        let g = pc.grad(&Vec3::new(0.0, 0.0, 3.0)).unwrap();
        assert_eq!(g, Vec3::z());
        // Equidistant query: lowest index wins.
        let g = pc.grad(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(g, Vec3::new(1.0, 0.0, -1.0) / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn point_cloud_is_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..300).map(|_| random_unit_vector(&mut rng)).collect();
        let pc = LevelSet::point_cloud(pts).unwrap();
        for _ in 0..500 {
            let x = gaussian_vector(&mut rng);
            let y = gaussian_vector(&mut rng);
            assert!((pc.eval(&x) - pc.eval(&y)).abs() <= (x - y).norm() + 1e-12);
        }
    }

    #[test]
    fn point_cloud_rejects_empty_input() {
        assert!(matches!(
            LevelSet::point_cloud(vec![]),
            Err(LevelSetError::Config(_))
        ));
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "# header\n0 0 1\n\n1 2\n";
        match parse_point_cloud(text, "cloud.txt") {
            Err(LevelSetError::Parse { line, path, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(path, "cloud.txt");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_point_cloud("1 2 x\n", "f"),
            Err(LevelSetError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn band_constants_of_sphere_fields() {
        let sdf = LevelSet::sphere_sdf(1.0).unwrap();
        let r = check_assumption_a(&sdf, 1.0 / 3.0, 20_000, 1).unwrap();
        assert!((r.nu - 1.0).abs() < 1e-12);
        assert!(r.satisfied);
        assert!(r.hessian_bound <= 1.5);

        let quad = LevelSet::sphere_quadratic(1.0).unwrap();
        let r = check_assumption_a(&quad, 0.25, 20_000, 1).unwrap();
        assert!(r.satisfied);
        assert!(r.nu >= 0.5 && r.nu < 0.5 + 1e-2, "nu = {}", r.nu);
        assert!((r.hessian_bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn assumption_a_fails_for_wide_sdf_band() {
        // At |x| = 0.1 the Hessian norm is 1/0.1 = 10 while ν/(2a) = 1/1.8.
        let sdf = LevelSet::sphere_sdf(1.0).unwrap();
        let direct = spectral_norm(&sdf.hessian(&Vec3::new(0.1, 0.0, 0.0)).unwrap().unwrap());
        assert_relative_eq!(direct, 10.0, epsilon = 1e-12);
        let r = check_assumption_a(&sdf, 0.9, 5_000, 2).unwrap();
        assert!(!r.satisfied);
        assert!(r.hessian_bound > 1.0 / 1.8);
    }

    #[test]
    fn assumption_a_is_monotone_in_band_width() {
        let sdf = LevelSet::sphere_sdf(1.0).unwrap();
        assert!(check_assumption_a(&sdf, 0.1, 2_000, 4).unwrap().satisfied);
        for a in [0.05, 0.01] {
            assert!(check_assumption_a(&sdf, a, 2_000, 4).unwrap().satisfied);
        }
    }

    #[test]
    fn assumption_a_argument_checks() {
        let sdf = LevelSet::sphere_sdf(1.0).unwrap();
        assert!(check_assumption_a(&sdf, 0.0, 1000, 0).is_err());
        assert!(check_assumption_a(&sdf, 0.1, 99, 0).is_err());
    }

    #[test]
    fn assumption_a_on_point_cloud_is_flagged_approximate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Vec3> = (0..200).map(|_| random_unit_vector(&mut rng)).collect();
        let pc = LevelSet::point_cloud(pts).unwrap();
        let r = check_assumption_a(&pc, 0.05, 200, 3).unwrap();
        assert!(r.approximate);
        assert!((r.nu - 1.0).abs() < 1e-9);
    }
}
