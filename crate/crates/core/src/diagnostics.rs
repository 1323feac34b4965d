//! Error metrics, equilibrium residuals and the Lyapunov functional, all
//! computed from a snapshot of the iterate.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::curve::{curve_length, DiscreteCurve};
use crate::levelset::{LevelSet, LevelSetError};
use crate::schemes::{SolverConfig, SolverState};

pub const TRACE_HEADER: [&str; 9] = [
    "iteration",
    "length",
    "absolute_error",
    "relative_error",
    "surface_error",
    "lyapunov_J",
    "lambda_residual",
    "gamma_residual",
    "geodesic_defect",
];

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("the Lyapunov functional needs alpha*epsilon < 1, got {alpha_eps}")]
    Regime { alpha_eps: f64 },
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
}

/// One recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub length: f64,
    pub absolute_error: Option<f64>,
    pub relative_error: Option<f64>,
    pub surface_error: f64,
    /// Absent when `αε ≥ 1`.
    pub lyapunov_j: Option<f64>,
    pub lambda_residual_norm: f64,
    pub gamma_residual_norm: f64,
    pub geodesic_defect: f64,
    /// `max |γ̈·γ̇|` without normalization. Not part of the CSV.
    pub geodesic_defect_raw: f64,
}

impl TraceRow {
    pub fn measure(
        state: &SolverState,
        cfg: &SolverConfig,
        surface: &LevelSet,
        reference_distance: Option<f64>,
    ) -> Result<Self, LevelSetError> {
        let length = curve_length(&state.curve);
        let absolute_error = reference_distance.map(|d| (length - d).abs());
        let relative_error = reference_distance.zip(absolute_error).map(|(d, e)| e / d);
        let res = equilibrium_residuals(state, cfg, surface)?;
        let lyapunov_j = match lyapunov_from(&res, cfg) {
            Ok(j) => Some(j),
            Err(DiagnosticsError::Regime { .. }) => None,
            Err(DiagnosticsError::LevelSet(e)) => return Err(e),
        };
        Ok(TraceRow {
            iteration: state.iteration,
            length,
            absolute_error,
            relative_error,
            surface_error: surface_error(state, surface),
            lyapunov_j,
            lambda_residual_norm: res.lambda,
            gamma_residual_norm: res.gamma,
            geodesic_defect: geodesic_defect(&state.curve),
            geodesic_defect_raw: geodesic_defect_raw(&state.curve),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    rows: Vec<TraceRow>,
}

impl IterationTrace {
    /// Appends a row. Panics if the iteration does not increase.
    pub fn push(&mut self, row: TraceRow) {
        if let Some(last) = self.rows.last() {
            assert!(
                row.iteration > last.iteration,
                "trace rows must have strictly increasing iterations"
            );
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn first(&self) -> Option<&TraceRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn at_iteration(&self, k: usize) -> Option<&TraceRow> {
        self.rows
            .binary_search_by_key(&k, |r| r.iteration)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.length.to_string(),
                opt(r.absolute_error),
                opt(r.relative_error),
                r.surface_error.to_string(),
                opt(r.lyapunov_j),
                r.lambda_residual_norm.to_string(),
                r.gamma_residual_norm.to_string(),
                r.geodesic_defect.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// `| length − d |`.
pub fn absolute_error(curve: &DiscreteCurve, d: f64) -> f64 {
    (curve_length(curve) - d).abs()
}

/// `|Σᵢ λᵢ φ(γᵢ)|` over the interior nodes, without a grid weight.
pub fn surface_error(state: &SolverState, surface: &LevelSet) -> f64 {
    state
        .curve
        .interior()
        .iter()
        .zip(state.multiplier.values())
        .map(|(x, l)| l * surface.eval(x))
        .sum::<f64>()
        .abs()
}

/// Grid-weighted L² norms of the two equilibrium residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub lambda: f64,
    pub gamma: f64,
}

/// `R_λ = −ελ + φ(γ)` and `R_γ = γ̈ − ((1−αε)λ + αφ(γ))∇φ(γ)` at each interior
/// node, with `α` from [`SolverConfig::effective_alpha`].
pub fn equilibrium_residuals(
    state: &SolverState,
    cfg: &SolverConfig,
    surface: &LevelSet,
) -> Result<Residuals, LevelSetError> {
    let eps = cfg.epsilon;
    let alpha = cfg.effective_alpha();
    let curve = &state.curve;
    let mut sum_l = 0.0;
    let mut sum_g = 0.0;
    for i in 1..curve.m() {
        let lambda = state.multiplier.values()[i - 1];
        let (phi, grad) = surface.eval_grad(&curve.points()[i])?;
        let rl = -eps * lambda + phi;
        let rg = curve.laplacian(i) - grad * ((1.0 - alpha * eps) * lambda + alpha * phi);
        sum_l += rl * rl;
        sum_g += rg.norm_squared();
    }
    let dt = curve.dt();
    Ok(Residuals {
        lambda: (dt * sum_l).sqrt(),
        gamma: (dt * sum_g).sqrt(),
    })
}

fn lyapunov_from(res: &Residuals, cfg: &SolverConfig) -> Result<f64, DiagnosticsError> {
    let alpha_eps = cfg.effective_alpha() * cfg.epsilon;
    if alpha_eps >= 1.0 {
        return Err(DiagnosticsError::Regime { alpha_eps });
    }
    let mu = 1.0 / (1.0 - alpha_eps);
    Ok(res.lambda * res.lambda + mu * res.gamma * res.gamma)
}

/// `J = ‖R_λ‖² + ‖R_γ‖²/(1−αε)`, defined for `αε < 1`.
pub fn lyapunov(
    state: &SolverState,
    cfg: &SolverConfig,
    surface: &LevelSet,
) -> Result<f64, DiagnosticsError> {
    let alpha_eps = cfg.effective_alpha() * cfg.epsilon;
    if alpha_eps >= 1.0 {
        return Err(DiagnosticsError::Regime { alpha_eps });
    }
    let res = equilibrium_residuals(state, cfg, surface)?;
    lyapunov_from(&res, cfg)
}

/// `max |γ̈ᵢ·γ̇ᵢ| / (1 + ‖γ̇ᵢ‖²)` over interior nodes.
pub fn geodesic_defect(curve: &DiscreteCurve) -> f64 {
    (1..curve.m())
        .map(|i| {
            let v = curve.velocity(i);
            curve.laplacian(i).dot(&v).abs() / (1.0 + v.norm_squared())
        })
        .fold(0.0, f64::max)
}

/// `max |γ̈ᵢ·γ̇ᵢ|` over interior nodes.
pub fn geodesic_defect_raw(curve: &DiscreteCurve) -> f64 {
    (1..curve.m())
        .map(|i| curve.laplacian(i).dot(&curve.velocity(i)).abs())
        .fold(0.0, f64::max)
}

/// `max |γ̇ᵢ·∇φ(γᵢ)| / ‖γ̇ᵢ‖` over interior nodes; nodes with zero velocity
/// are skipped.
pub fn tangency_defect(curve: &DiscreteCurve, surface: &LevelSet) -> Result<f64, LevelSetError> {
    let mut worst = 0.0f64;
    for i in 1..curve.m() {
        let v = curve.velocity(i);
        let speed = v.norm();
        if speed == 0.0 {
            continue;
        }
        let g = surface.grad(&curve.points()[i])?;
        worst = worst.max(v.dot(&g).abs() / speed);
    }
    Ok(worst)
}
