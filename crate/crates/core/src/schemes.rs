//! Primal-dual relaxation of a (curve, multiplier) pair toward a constrained
//! geodesic, and the driver loop that records diagnostics along the way.
//!
//! Every scheme updates all interior nodes from the old curve (Jacobi style).
//! They differ only in which multiplier value drives the curve step and which
//! value is kept for the next iteration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{curve_length, DiscreteCurve, MultiplierField};
use crate::diagnostics::{IterationTrace, TraceRow};
use crate::levelset::{LevelSet, LevelSetError};

/// A run is declared divergent once the curve is this many times longer than
/// the chord between its endpoints.
pub const DIVERGENCE_LENGTH_FACTOR: f64 = 1e3;

/// Endpoints further than this from the zero level set trigger a warning.
pub const ENDPOINT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Plain gradient descent-ascent.
    Gda,
    /// Regularized descent-ascent, the `ω = 0` case of [`Scheme::BasePdhg`].
    Regularized,
    /// Regularized primal-dual step with multiplier extrapolation `ω`.
    #[serde(rename = "base", alias = "base-pdhg")]
    BasePdhg,
    /// Base step followed by a second multiplier update that drives the curve.
    Var1,
    /// Direct Euler step of the relaxed dynamics with coupling `α`.
    Var2,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Gda,
        Scheme::Regularized,
        Scheme::BasePdhg,
        Scheme::Var1,
        Scheme::Var2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Gda => "gda",
            Scheme::Regularized => "regularized",
            Scheme::BasePdhg => "base",
            Scheme::Var1 => "var1",
            Scheme::Var2 => "var2",
        }
    }

    /// Whether the scheme reads `omega` (as opposed to `alpha`).
    pub fn uses_omega(self) -> bool {
        matches!(self, Scheme::BasePdhg | Scheme::Var1)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "gda" => Ok(Scheme::Gda),
            "regularized" | "regularized-gda" | "rgda" => Ok(Scheme::Regularized),
            "base" | "base-pdhg" | "basepdhg" | "pdhg" => Ok(Scheme::BasePdhg),
            "var1" => Ok(Scheme::Var1),
            "var2" => Ok(Scheme::Var2),
            _ => Err(ConfigError::Invalid {
                field: "scheme",
                message: format!(
                    "unknown scheme '{s}' (expected gda, regularized, base, var1 or var2)"
                ),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid {field}: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub tau_gamma: f64,
    pub tau_lambda: f64,
    pub epsilon: f64,
    /// Multiplier extrapolation, read by `BasePdhg` and `Var1`.
    pub omega: f64,
    /// Coupling of the constraint value into the curve step, read by `Var2`.
    pub alpha: f64,
    pub max_iters: usize,
    pub record_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::BasePdhg,
            tau_gamma: 1e-5,
            tau_lambda: 0.7,
            epsilon: 0.01,
            omega: 1.0,
            alpha: 0.0,
            max_iters: 5000,
            record_every: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau_gamma >= 0.0 && self.tau_gamma.is_finite()) {
            return Err(invalid(
                "tau_gamma",
                format!("must be finite and >= 0, got {}", self.tau_gamma),
            ));
        }
        if !(self.tau_lambda > 0.0 && self.tau_lambda.is_finite()) {
            return Err(invalid(
                "tau_lambda",
                format!("must be finite and > 0, got {}", self.tau_lambda),
            ));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(
                "epsilon",
                format!("must be finite and >= 0, got {}", self.epsilon),
            ));
        }
        if self.scheme != Scheme::Gda && self.epsilon == 0.0 {
            return Err(invalid(
                "epsilon",
                format!(
                    "scheme {} needs epsilon > 0; use gda for the unregularized iteration",
                    self.scheme
                ),
            ));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(invalid(
                "omega",
                format!("must be finite and >= 0, got {}", self.omega),
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid(
                "alpha",
                format!("must be finite and >= 0, got {}", self.alpha),
            ));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        Ok(())
    }

    /// The extrapolation actually applied. `Regularized` always uses zero.
    pub fn effective_omega(&self) -> f64 {
        match self.scheme {
            Scheme::BasePdhg | Scheme::Var1 => self.omega,
            _ => 0.0,
        }
    }

    /// Coupling `α` of the equilibrium system this scheme discretizes:
    /// `(1+ω)τ_γ` for the extrapolated schemes, `alpha` for `Var2`.
    pub fn effective_alpha(&self) -> f64 {
        match self.scheme {
            Scheme::Var2 => self.alpha,
            Scheme::Gda => self.tau_gamma,
            _ => (1.0 + self.effective_omega()) * self.tau_gamma,
        }
    }

    /// Curve step consistent with the multiplier step, `τ_λ/(1+ετ_λ)`.
    pub fn matched_tau(&self) -> f64 {
        self.tau_lambda / (1.0 + self.epsilon * self.tau_lambda)
    }
}

/// The iterate pair and how many steps produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub curve: DiscreteCurve,
    pub multiplier: MultiplierField,
    pub iteration: usize,
}

impl SolverState {
    pub fn new(curve: DiscreteCurve, multiplier: MultiplierField) -> Result<Self, ConfigError> {
        if curve.m() != multiplier.m() {
            return Err(invalid(
                "multiplier",
                format!(
                    "curve has m = {} but multiplier has m = {}",
                    curve.m(),
                    multiplier.m()
                ),
            ));
        }
        Ok(SolverState {
            curve,
            multiplier,
            iteration: 0,
        })
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("iteration {iteration}: non-finite value in the iterate")]
    NonFinite { iteration: usize },
    #[error(
        "iteration {iteration}: curve length {length:.6e} exceeds the divergence limit {limit:.6e}"
    )]
    LengthBlowup {
        iteration: usize,
        length: f64,
        limit: f64,
    },
    #[error("iteration {iteration}: {source}")]
    Singular {
        iteration: usize,
        #[source]
        source: LevelSetError,
    },
    #[error("step for {expected} called with a {actual} configuration")]
    WrongScheme {
        expected: &'static str,
        actual: Scheme,
    },
}

impl StepError {
    pub fn iteration(&self) -> Option<usize> {
        match self {
            StepError::NonFinite { iteration }
            | StepError::LengthBlowup { iteration, .. }
            | StepError::Singular { iteration, .. } => Some(*iteration),
            StepError::WrongScheme { .. } => None,
        }
    }
}

/// Multiplier rule of one scheme: from the old multiplier and the constraint
/// value, the multiplier used in the curve step and the one carried forward.
fn multiplier_rule(cfg: &SolverConfig) -> impl Fn(f64, f64) -> (f64, f64) {
    let tl = cfg.tau_lambda;
    let eps = cfg.epsilon;
    let omega = cfg.effective_omega();
    let alpha = cfg.alpha;
    let scheme = cfg.scheme;
    move |lambda, phi| {
        let plus = (lambda + tl * phi) / (1.0 + eps * tl);
        match scheme {
            Scheme::Gda => {
                let next = lambda + tl * phi;
                (next, next)
            }
            Scheme::Regularized | Scheme::BasePdhg => (plus + omega * (plus - lambda), plus),
            Scheme::Var1 => {
                let tilde = plus + omega * (plus - lambda);
                let bar = (tilde + tl * phi) / (1.0 + eps * tl);
                (bar, plus)
            }
            Scheme::Var2 => ((1.0 - alpha * eps) * plus + alpha * phi, plus),
        }
    }
}

fn advance(
    state: &mut SolverState,
    cfg: &SolverConfig,
    surface: &LevelSet,
) -> Result<(), StepError> {
    let iteration = state.iteration + 1;
    let rule = multiplier_rule(cfg);
    let m = state.curve.m();
    let tg = cfg.tau_gamma;
    let mut next_points = Vec::with_capacity(m - 1);
    let mut next_lambda = Vec::with_capacity(m - 1);
    for i in 1..m {
        let x = state.curve.points()[i];
        let (phi, grad) = surface
            .eval_grad(&x)
            .map_err(|source| StepError::Singular { iteration, source })?;
        let (drive, keep) = rule(state.multiplier.values()[i - 1], phi);
        let accel = state.curve.laplacian(i);
        next_points.push(x - (grad * drive - accel) * tg);
        next_lambda.push(keep);
    }
    let finite = next_lambda.iter().all(|v| v.is_finite())
        && next_points.iter().all(|p| p.iter().all(|c| c.is_finite()));
    if !finite {
        return Err(StepError::NonFinite { iteration });
    }
    state.curve.interior_mut().copy_from_slice(&next_points);
    state.multiplier.values_mut().copy_from_slice(&next_lambda);
    state.iteration = iteration;

    let chord = (state.curve.end() - state.curve.start()).norm();
    if chord > 0.0 {
        let length = curve_length(&state.curve);
        let limit = DIVERGENCE_LENGTH_FACTOR * chord;
        if length > limit {
            return Err(StepError::LengthBlowup {
                iteration,
                length,
                limit,
            });
        }
    }
    Ok(())
}

fn expect_scheme(
    cfg: &SolverConfig,
    expected: &'static str,
    ok: &[Scheme],
) -> Result<(), StepError> {
    if ok.contains(&cfg.scheme) {
        Ok(())
    } else {
        Err(StepError::WrongScheme {
            expected,
            actual: cfg.scheme,
        })
    }
}

/// `λ ← λ + τ_λφ(γ)`, then the curve step with the new `λ`.
pub fn step_gda(
    state: &mut SolverState,
    cfg: &SolverConfig,
    surface: &LevelSet,
) -> Result<(), StepError> {
    expect_scheme(cfg, "gda", &[Scheme::Gda])?;
    advance(state, cfg, surface)
}

/// Regularized multiplier step with extrapolation `ω` (zero for `Regularized`).
pub fn step_base(
    state: &mut SolverState,
    cfg: &SolverConfig,
    surface: &LevelSet,
) -> Result<(), StepError> {
    expect_scheme(cfg, "base", &[Scheme::BasePdhg, Scheme::Regularized])?;
    advance(state, cfg, surface)
}

/// Base multiplier step, then a second regularized update from the
/// extrapolated value. The curve is driven by the second update; the base
/// value is carried forward.
pub fn step_var1(
    state: &mut SolverState,
    cfg: &SolverConfig,
    surface: &LevelSet,
) -> Result<(), StepError> {
    expect_scheme(cfg, "var1", &[Scheme::Var1])?;
    advance(state, cfg, surface)
}

/// Curve driven by `(1−αε)λ⁺ + αφ(γ)`.
pub fn step_var2(
    state: &mut SolverState,
    cfg: &SolverConfig,
    surface: &LevelSet,
) -> Result<(), StepError> {
    expect_scheme(cfg, "var2", &[Scheme::Var2])?;
    advance(state, cfg, surface)
}

/// One iteration of whichever scheme `cfg` selects.
pub fn step(
    state: &mut SolverState,
    cfg: &SolverConfig,
    surface: &LevelSet,
) -> Result<(), StepError> {
    match cfg.scheme {
        Scheme::Gda => step_gda(state, cfg, surface),
        Scheme::Regularized | Scheme::BasePdhg => step_base(state, cfg, surface),
        Scheme::Var1 => step_var1(state, cfg, surface),
        Scheme::Var2 => step_var2(state, cfg, surface),
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("diverged: {error}")]
    Diverged {
        error: StepError,
        /// Iterate at the moment of divergence (the last finite one for
        /// non-finite failures).
        state: Box<SolverState>,
        /// Rows recorded up to the last finite iterate.
        trace: IterationTrace,
    },
}

/// Runs `cfg.max_iters` steps from `init`. Rows are recorded at iteration 0,
/// every `record_every` iterations, and at the final iteration.
pub fn run(
    cfg: &SolverConfig,
    surface: &LevelSet,
    init: (DiscreteCurve, MultiplierField),
    reference_distance: Option<f64>,
) -> Result<(SolverState, IterationTrace), RunError> {
    run_recording(cfg, surface, init, reference_distance, &[])
}

/// [`run`] with extra iterations at which a row is always recorded.
pub fn run_recording(
    cfg: &SolverConfig,
    surface: &LevelSet,
    init: (DiscreteCurve, MultiplierField),
    reference_distance: Option<f64>,
    also_record: &[usize],
) -> Result<(SolverState, IterationTrace), RunError> {
    cfg.validate()?;
    if let Some(d) = reference_distance {
        if !(d > 0.0 && d.is_finite()) {
            return Err(invalid("reference_distance", format!("must be > 0, got {d}")).into());
        }
    }
    let mut state = SolverState::new(init.0, init.1)?;
    for (name, x) in [("start", state.curve.start()), ("end", state.curve.end())] {
        let off = surface.eval(&x).abs();
        if off > ENDPOINT_TOLERANCE {
            log::warn!("{name} point {x:?} is {off:.3e} away from the surface");
        }
    }
    if cfg.scheme.uses_omega() || cfg.scheme == Scheme::Regularized {
        let tau = cfg.matched_tau();
        if (tau - cfg.tau_gamma).abs() > 1e-12 * tau.max(cfg.tau_gamma) {
            log::debug!(
                "tau_gamma = {} differs from tau_lambda/(1+eps*tau_lambda) = {}; residuals use alpha = (1+omega)*tau_gamma = {}",
                cfg.tau_gamma,
                tau,
                cfg.effective_alpha()
            );
        }
    }

    let mut trace = IterationTrace::default();
    let record = |state: &SolverState, trace: &mut IterationTrace| -> Result<(), StepError> {
        let row = TraceRow::measure(state, cfg, surface, reference_distance).map_err(|source| {
            StepError::Singular {
                iteration: state.iteration,
                source,
            }
        })?;
        trace.push(row);
        Ok(())
    };

    let diverged =
        |error: StepError, state: SolverState, trace: IterationTrace| RunError::Diverged {
            error,
            state: Box::new(state),
            trace,
        };

    if let Err(e) = record(&state, &mut trace) {
        return Err(diverged(e, state, trace));
    }
    for _ in 0..cfg.max_iters {
        if let Err(e) = step(&mut state, cfg, surface) {
            return Err(diverged(e, state, trace));
        }
        let k = state.iteration;
        if k % cfg.record_every == 0 || k == cfg.max_iters || also_record.contains(&k) {
            if let Err(e) = record(&state, &mut trace) {
                return Err(diverged(e, state, trace));
            }
        }
    }
    Ok((state, trace))
}

/// Largest `|λ|` a regularized scheme can reach from `λ₀` when `|φ| ≤ band`
/// along the iterates.
pub fn multiplier_bound(initial: &MultiplierField, band: f64, epsilon: f64) -> f64 {
    let start = initial.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    start.max(band / epsilon)
}
