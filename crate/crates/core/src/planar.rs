//! Flat surfaces `φ(x) = a·x`. Here the curve step can be taken implicitly,
//! and the primal-dual iteration carries an `O(1/k)` bound on the Lagrangian
//! gap of its running averages.

use nalgebra::{Matrix4, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::curve::{init_straight_line, CurveError, DiscreteCurve, MultiplierField};
use crate::levelset::{gaussian_vector, LevelSet};
use crate::schemes::SolverState;
use crate::Vec3;

pub const DEFAULT_PLANAR_EPSILON: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PlanarError {
    #[error("invalid planar problem: {0}")]
    Config(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarProblem {
    pub normal: Vec3,
    pub p: Vec3,
    pub q: Vec3,
    pub m: usize,
    pub tau_gamma: f64,
    pub tau_lambda: f64,
    pub epsilon: f64,
}

impl PlanarProblem {
    pub fn validate(&self) -> Result<(), PlanarError> {
        let bad = |msg: String| Err(PlanarError::Config(msg));
        let n = self.normal.norm();
        if !(n > 0.0 && n.is_finite()) {
            return bad(format!(
                "plane normal must be nonzero and finite, got {:?}",
                self.normal
            ));
        }
        for (name, x) in [("p", self.p), ("q", self.q)] {
            let off = self.normal.dot(&x);
            if off.abs() > 1e-12 * (1.0 + n * x.norm()) {
                return bad(format!(
                    "endpoint {name} is off the plane: a·{name} = {off:e}"
                ));
            }
        }
        if self.m < 2 {
            return bad(format!("m must be >= 2, got {}", self.m));
        }
        if !(self.tau_gamma > 0.0 && self.tau_gamma.is_finite()) {
            return bad(format!("tau_gamma must be > 0, got {}", self.tau_gamma));
        }
        if !(self.tau_lambda > 0.0 && self.tau_lambda.is_finite()) {
            return bad(format!("tau_lambda must be > 0, got {}", self.tau_lambda));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        Ok(())
    }

    /// `τ_λ τ_γ |a|²`; the gap bound is guaranteed when this is below one.
    pub fn step_product(&self) -> f64 {
        self.tau_lambda * self.tau_gamma * self.normal.norm_squared()
    }

    /// The 4×4 metric `[[1/τ_λ, aᵀ], [a, I/τ_γ]]`.
    pub fn metric(&self) -> Matrix4<f64> {
        let a = self.normal;
        let mut m = Matrix4::identity() / self.tau_gamma;
        m[(0, 0)] = 1.0 / self.tau_lambda;
        for i in 0..3 {
            m[(0, i + 1)] = a[i];
            m[(i + 1, 0)] = a[i];
        }
        m
    }

    pub fn metric_min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.metric())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether the metric is positive definite, checked numerically.
    pub fn step_condition_holds(&self) -> bool {
        self.metric_min_eigenvalue() > 0.0
    }

    pub fn surface(&self) -> LevelSet {
        LevelSet::Plane {
            normal: self.normal,
        }
    }

    /// Straight segment with zero multiplier, the saddle point of the
    /// regularized Lagrangian when both endpoints lie in the plane.
    pub fn saddle(&self) -> Result<(DiscreteCurve, MultiplierField), PlanarError> {
        Ok(init_straight_line(self.p, self.q, self.m)?)
    }

    /// `Δt Σᵢ ξᵢᵀ A ξᵢ` for `ξ = (λ₀−λ, γ₀−γ)` over interior nodes.
    pub fn metric_distance_sq(
        &self,
        from: (&DiscreteCurve, &MultiplierField),
        to: (&DiscreteCurve, &MultiplierField),
    ) -> f64 {
        let dt = 1.0 / self.m as f64;
        let mut sum = 0.0;
        for ((x0, x1), (l0, l1)) in from
            .0
            .interior()
            .iter()
            .zip(to.0.interior())
            .zip(from.1.values().iter().zip(to.1.values()))
        {
            let dg = x0 - x1;
            let dl = l0 - l1;
            sum += dl * dl / self.tau_lambda
                + 2.0 * dl * self.normal.dot(&dg)
                + dg.norm_squared() / self.tau_gamma;
        }
        dt * sum
    }
}

/// Lagrangian gap of the running averages at iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicRecord {
    pub k: usize,
    pub gap: f64,
    pub bound: f64,
    /// Kinetic energy of the averaged curve.
    pub kinetic_of_average: f64,
    /// Average kinetic energy of the iterates `1..=k`.
    pub average_kinetic: f64,
}

impl ErgodicRecord {
    pub fn bound_holds(&self) -> bool {
        self.gap <= self.bound + 1e-9
    }
}

#[derive(Debug, Clone)]
pub struct PlanarRun {
    pub state: SolverState,
    pub records: Vec<ErgodicRecord>,
    /// First iteration with a non-finite iterate, if any.
    pub diverged_at: Option<usize>,
}

impl PlanarRun {
    pub fn bound_held(&self) -> bool {
        self.records.iter().all(ErgodicRecord::bound_holds)
    }

    /// Least-squares slope of `log gap` against `log k` over records with a
    /// positive gap.
    pub fn loglog_slope(&self) -> Option<f64> {
        loglog_slope(&self.records)
    }
}

pub fn loglog_slope(records: &[ErgodicRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.gap > 0.0 && r.gap.is_finite())
        .map(|r| ((r.k as f64).ln(), r.gap.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Solves `(I − τ D²) x = rhs` on the interior with `x₀ = rhs₀` and
/// `x_m = rhs_m` held fixed. `D²` is the three-point second difference on the
/// grid `t_i = i/m`, `m = rhs.len() − 1`.
pub fn implicit_gamma_solve(rhs: &[Vec3], tau_gamma: f64) -> Vec<Vec3> {
    let m = rhs.len() - 1;
    let mut out = rhs.to_vec();
    if m < 2 {
        return out;
    }
    let off = -tau_gamma * (m * m) as f64;
    let diag = 1.0 - 2.0 * off;
    let n = m - 1;
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![Vec3::zeros(); n];
    for j in 0..n {
        let i = j + 1;
        let mut d = rhs[i];
        if i == 1 {
            d -= off * rhs[0];
        }
        if i == m - 1 {
            d -= off * rhs[m];
        }
        if j == 0 {
            c_prime[0] = off / diag;
            d_prime[0] = d / diag;
        } else {
            let denom = diag - off * c_prime[j - 1];
            c_prime[j] = off / denom;
            d_prime[j] = (d - d_prime[j - 1] * off) / denom;
        }
    }
    out[n] = d_prime[n - 1];
    for j in (0..n - 1).rev() {
        out[j + 1] = d_prime[j] - out[j + 2] * c_prime[j];
    }
    out
}

/// Kernel of `(1 − τ∂²)⁻¹` on `[0,1]` with zero boundary values:
/// `sinh(min/√τ) sinh((1−max)/√τ) / (√τ sinh(1/√τ))`, evaluated through
/// exponentials of non-positive arguments so it cannot overflow.
pub fn greens_function(t: f64, s: f64, tau_gamma: f64) -> f64 {
    let r = tau_gamma.sqrt();
    let lo = t.min(s) / r;
    let hi = (1.0 - t.max(s)) / r;
    let whole = 1.0 / r;
    if lo <= 0.0 || hi <= 0.0 {
        return 0.0;
    }
    let shape = (-(-2.0 * lo).exp_m1()) * (-(-2.0 * hi).exp_m1()) / (-(-2.0 * whole).exp_m1());
    (lo + hi - whole).exp() * shape / (2.0 * r)
}

/// `½ Σ ‖γ_{i+1} − γ_i‖² / Δt`.
pub fn kinetic_energy(curve: &DiscreteCurve) -> f64 {
    let m = curve.m() as f64;
    0.5 * m
        * curve
            .points()
            .windows(2)
            .map(|w| (w[1] - w[0]).norm_squared())
            .sum::<f64>()
}

/// Discrete regularized Lagrangian
/// `½ Σ ‖Δγ‖²/Δt + Δt Σ λᵢφ(γᵢ) − (ε/2) Δt Σ λᵢ²`.
pub fn lagrangian_eps(
    curve: &DiscreteCurve,
    multiplier: &MultiplierField,
    surface: &LevelSet,
    epsilon: f64,
) -> f64 {
    let dt = curve.dt();
    let coupling: f64 = curve
        .interior()
        .iter()
        .zip(multiplier.values())
        .map(|(x, l)| l * surface.eval(x))
        .sum();
    let reg: f64 = multiplier.values().iter().map(|l| l * l).sum();
    kinetic_energy(curve) + dt * coupling - 0.5 * epsilon * dt * reg
}

/// Saddle point plus a smooth seeded perturbation of size `amplitude`, in
/// both the curve (all directions) and the multiplier.
pub fn perturbed_init(
    problem: &PlanarProblem,
    amplitude: f64,
    seed: u64,
) -> Result<(DiscreteCurve, MultiplierField), PlanarError> {
    let (curve, _) = problem.saddle()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(Vec3, f64)> = (1..=3)
        .map(|_| {
            let g = gaussian_vector(&mut rng);
            let h = gaussian_vector(&mut rng).x;
            (g, h)
        })
        .collect();
    let m = problem.m;
    let bump = |i: usize| -> (Vec3, f64) {
        let t = i as f64 / m as f64;
        modes
            .iter()
            .enumerate()
            .fold((Vec3::zeros(), 0.0), |(v, l), (j, (g, h))| {
                let w = ((j + 1) as f64 * std::f64::consts::PI * t).sin();
                (v + g * w, l + h * w)
            })
    };
    let mut points = curve.points().to_vec();
    let mut lambda = Vec::with_capacity(m - 1);
    for (i, x) in points.iter_mut().enumerate().take(m).skip(1) {
        let (v, l) = bump(i);
        *x += v * amplitude;
        lambda.push(l * amplitude);
    }
    Ok((
        DiscreteCurve::from_points(points)?,
        MultiplierField::from_values(lambda),
    ))
}

/// Runs the semi-implicit iteration from `init`, comparing against the
/// saddle point.
pub fn run_planar(
    problem: &PlanarProblem,
    init: (DiscreteCurve, MultiplierField),
    max_iters: usize,
) -> Result<PlanarRun, PlanarError> {
    let saddle = problem.saddle()?;
    run_planar_against(problem, init, max_iters, (&saddle.0, &saddle.1))
}

/// Runs the semi-implicit iteration and records, at `k = 1, 2, 4, …`, the gap
/// `L(γ̄_k, λ) − L(γ, λ̄_k)` against the comparison pair `(γ, λ)`.
pub fn run_planar_against(
    problem: &PlanarProblem,
    init: (DiscreteCurve, MultiplierField),
    max_iters: usize,
    comparison: (&DiscreteCurve, &MultiplierField),
) -> Result<PlanarRun, PlanarError> {
    problem.validate()?;
    let m = problem.m;
    if init.0.m() != m || init.1.m() != m || comparison.0.m() != m || comparison.1.m() != m {
        return Err(PlanarError::Config(format!(
            "all curves and multipliers must have m = {m}"
        )));
    }
    if init.0.start() != problem.p || init.0.end() != problem.q {
        return Err(PlanarError::Config(
            "initial curve endpoints must equal p and q".into(),
        ));
    }
    if !problem.step_condition_holds() {
        log::warn!(
            "step condition violated: tau_lambda*tau_gamma*|a|^2 = {} >= 1; the gap bound does not apply",
            problem.step_product()
        );
    }
    let surface = problem.surface();
    let a = problem.normal;
    let (tl, tg, eps) = (problem.tau_lambda, problem.tau_gamma, problem.epsilon);
    let bound_numerator = problem.metric_distance_sq((&init.0, &init.1), comparison);

    let mut state =
        SolverState::new(init.0, init.1).map_err(|e| PlanarError::Config(e.to_string()))?;
    let mut sum_points = vec![Vec3::zeros(); m + 1];
    let mut sum_lambda = vec![0.0; m - 1];
    let mut sum_kinetic = 0.0;
    let mut records = Vec::new();
    let mut next_record = 1usize;
    let mut diverged_at = None;

    for k in 1..=max_iters {
        let old_points = state.curve.points().to_vec();
        let old_lambda = state.multiplier.values().to_vec();
        let new_lambda: Vec<f64> = old_lambda
            .iter()
            .zip(&old_points[1..m])
            .map(|(l, x)| (l + tl * a.dot(x)) / (1.0 + eps * tl))
            .collect();
        let mut rhs = old_points;
        for i in 1..m {
            rhs[i] -= a * (tg * (2.0 * new_lambda[i - 1] - old_lambda[i - 1]));
        }
        let next = implicit_gamma_solve(&rhs, tg);
        let finite = new_lambda.iter().all(|v| v.is_finite())
            && next.iter().all(|p| p.iter().all(|c| c.is_finite()));
        if !finite {
            diverged_at = Some(k);
            break;
        }
        state.curve.interior_mut().copy_from_slice(&next[1..m]);
        state.multiplier.values_mut().copy_from_slice(&new_lambda);
        state.iteration = k;

        for (s, x) in sum_points.iter_mut().zip(state.curve.points()) {
            *s += x;
        }
        for (s, l) in sum_lambda.iter_mut().zip(state.multiplier.values()) {
            *s += l;
        }
        sum_kinetic += kinetic_energy(&state.curve);

        if k == next_record {
            let inv = 1.0 / k as f64;
            let avg_curve =
                DiscreteCurve::from_points(sum_points.iter().map(|s| s * inv).collect())?;
            let avg_lambda =
                MultiplierField::from_values(sum_lambda.iter().map(|s| s * inv).collect());
            let gap = lagrangian_eps(&avg_curve, comparison.1, &surface, eps)
                - lagrangian_eps(comparison.0, &avg_lambda, &surface, eps);
            records.push(ErgodicRecord {
                k,
                gap,
                bound: bound_numerator / (2.0 * k as f64),
                kinetic_of_average: kinetic_energy(&avg_curve),
                average_kinetic: sum_kinetic * inv,
            });
            next_record *= 2;
        }
    }
    Ok(PlanarRun {
        state,
        records,
        diverged_at,
    })
}

/// `k,gap,bound` rows.
pub fn write_ergodic_csv<W: std::io::Write>(records: &[ErgodicRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "gap", "bound"])?;
    for r in records {
        w.write_record([r.k.to_string(), r.gap.to_string(), r.bound.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn problem(product: f64) -> PlanarProblem {
        let tau_gamma = 0.01;
        PlanarProblem {
            normal: Vec3::z(),
            p: Vec3::zeros(),
            q: Vec3::x(),
            m: 50,
            tau_gamma,
            tau_lambda: product / tau_gamma,
            epsilon: DEFAULT_PLANAR_EPSILON,
        }
    }

    fn residual(x: &[Vec3], rhs: &[Vec3], tau: f64) -> f64 {
        let m = x.len() - 1;
        let k = tau * (m * m) as f64;
        (1..m)
            .map(|i| {
                let lhs = x[i] - (x[i + 1] - 2.0 * x[i] + x[i - 1]) * k;
                (lhs - rhs[i]).amax()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let x = implicit_gamma_solve(&vec![Vec3::zeros(); 11], 0.3);
        assert!(x.iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn zero_tau_is_identity() {
        let rhs: Vec<Vec3> = (0..=10).map(|i| Vec3::new(i as f64, 1.0, -2.0)).collect();
        assert_eq!(implicit_gamma_solve(&rhs, 0.0), rhs);
    }

    #[test]
    fn constant_rhs_matches_cosh_profile() {
        let (m, tau, c) = (100, 0.01, 1.7);
        let mut rhs = vec![Vec3::new(c, c, c); m + 1];
        rhs[0] = Vec3::zeros();
        rhs[m] = Vec3::zeros();
        let x = implicit_gamma_solve(&rhs, tau);
        let r = tau.sqrt();
        // Exact solution of the difference equation: cosh κ = 1 + 1/(2τm²).
        let kappa = (1.0 + 1.0 / (2.0 * tau * (m * m) as f64)).acosh();
        let half = m as f64 / 2.0;
        for (i, xi) in x.iter().enumerate() {
            let t = i as f64 / m as f64;
            let discrete = c * (1.0 - (kappa * (i as f64 - half)).cosh() / (kappa * half).cosh());
            assert!(
                (xi.x - discrete).abs() < 1e-6,
                "{i}: {} vs {discrete}",
                xi.x
            );
            let continuous = c * (1.0 - ((t - 0.5) / r).cosh() / (0.5 / r).cosh());
            assert!((xi.x - continuous).abs() < c / (m * m) as f64 / tau, "{i}");
        }
    }

    #[test]
    fn impulse_response_matches_green_function() {
        let (m, tau) = (200, 0.01);
        let j = 60;
        let mut rhs = vec![Vec3::zeros(); m + 1];
        rhs[j] = Vec3::new(m as f64, 0.0, 0.0);
        let x = implicit_gamma_solve(&rhs, tau);
        let s = j as f64 / m as f64;
        let err = (0..=m)
            .map(|i| (x[i].x - greens_function(i as f64 / m as f64, s, tau)).abs())
            .fold(0.0, f64::max);
        // Leading error term is G·Δt²/(12τ), about 1e-3 here.
        assert!(err < 100.0 / (m * m) as f64, "max error {err}");
    }

    #[test]
    fn green_function_basics() {
        let tau = 0.02;
        assert_eq!(greens_function(0.0, 0.4, tau), 0.0);
        assert_eq!(greens_function(1.0, 0.4, tau), 0.0);
        // Tiny τ: naive sinh ratios overflow; the kernel must stay finite.
        let g = greens_function(0.5, 0.5, 1e-6);
        assert!(g.is_finite() && g > 0.0);
        assert!((g - 0.5 / 1e-3).abs() < 1e-9);
    }

    #[test]
    fn metric_definiteness_tracks_step_product() {
        assert!(problem(0.5).step_condition_holds());
        assert!(problem(0.99).step_condition_holds());
        assert!(!problem(1.01).step_condition_holds());
        assert!(!problem(4.0).step_condition_holds());
    }

    #[test]
    fn lagrangian_examples() {
        let pr = problem(0.5);
        let s = pr.surface();
        let (c, l) = pr.saddle().unwrap();
        assert!((lagrangian_eps(&c, &l, &s, 0.3) - 0.5).abs() < 1e-12);
        let cst = MultiplierField::from_values(vec![2.0; pr.m - 1]);
        let expect = 0.5 - 0.5 * 0.3 * 4.0 * (pr.m - 1) as f64 / pr.m as f64;
        assert!((lagrangian_eps(&c, &cst, &s, 0.3) - expect).abs() < 1e-12);
    }

    #[test]
    fn saddle_inequality_chain() {
        let pr = problem(0.5);
        let s = pr.surface();
        let (gs, ls) = pr.saddle().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let at_saddle = lagrangian_eps(&gs, &ls, &s, pr.epsilon);
        for _ in 0..100 {
            let (g, l) = perturbed_init(&pr, rng.random_range(0.01..1.0), rng.random()).unwrap();
            assert!(lagrangian_eps(&gs, &l, &s, pr.epsilon) <= at_saddle + 1e-12);
            assert!(at_saddle <= lagrangian_eps(&g, &ls, &s, pr.epsilon) + 1e-12);
        }
    }

    #[test]
    fn start_at_saddle_has_zero_gap() {
        let pr = problem(0.5);
        let run = run_planar(&pr, pr.saddle().unwrap(), 64).unwrap();
        assert_eq!(run.records.len(), 7);
        assert!(run.records.iter().all(|r| r.gap.abs() < 1e-14));
    }

    #[test]
    fn ergodic_gap_is_bounded_and_kinetic_is_convex() {
        let pr = problem(0.5);
        let init = perturbed_init(&pr, 0.3, 2).unwrap();
        let run = run_planar(&pr, init, 1 << 10).unwrap();
        assert_eq!(run.records.len(), 11);
        for r in &run.records {
            assert!(r.gap >= -1e-12, "{r:?}");
            assert!(r.bound_holds(), "{r:?}");
            assert!(r.kinetic_of_average <= r.average_kinetic + 1e-12, "{r:?}");
        }
    }

    #[test]
    fn violated_step_condition_still_runs() {
        let pr = problem(4.0);
        let init = perturbed_init(&pr, 0.3, 2).unwrap();
        let run = run_planar(&pr, init, 256).unwrap();
        assert!(run.diverged_at.is_some() || !run.records.is_empty());
    }

    #[test]
    fn rejects_off_plane_endpoints() {
        let mut pr = problem(0.5);
        pr.q = Vec3::new(1.0, 0.0, 1e-6);
        assert!(pr.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn solve_residual_is_tiny(
            m in 2usize..120,
            tau in 1e-6f64..1.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rhs: Vec<Vec3> = (0..=m).map(|_| gaussian_vector(&mut rng) * 10.0).collect();
            let x = implicit_gamma_solve(&rhs, tau);
            let scale = rhs.iter().map(|v| v.amax()).fold(0.0, f64::max);
            prop_assert!(residual(&x, &rhs, tau) <= 1e-10 * (1.0 + scale) * (1.0 + tau * (m * m) as f64));
            prop_assert_eq!(x[0], rhs[0]);
            prop_assert_eq!(x[m], rhs[m]);
        }

        #[test]
        fn green_function_is_symmetric(t in 0.0f64..1.0, s in 0.0f64..1.0, tau in 1e-4f64..1.0) {
            let a = greens_function(t, s, tau);
            let b = greens_function(s, t, tau);
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }
}
