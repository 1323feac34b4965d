//! Python bindings for the level-set geodesic solver.

use geo::curve::{self, DiscreteCurve};
use geo::diagnostics;
use geo::levelset::{self, LevelSet};
use geo::planar::{self, PlanarProblem};
use geo::schemes::{self, RunError, Scheme, SolverConfig};
use geo::{TraceRow, Vec3};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(levelset_geodesic, DivergedError, PyRuntimeError);

type Triple = (f64, f64, f64);

fn vec3(t: Triple) -> Vec3 {
    Vec3::new(t.0, t.1, t.2)
}

fn triple(v: &Vec3) -> Triple {
    (v.x, v.y, v.z)
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "LevelSet", frozen)]
struct PyLevelSet(LevelSet);

#[pymethods]
impl PyLevelSet {
    #[staticmethod]
    #[pyo3(signature = (radius = 1.0))]
    fn sphere(radius: f64) -> PyResult<Self> {
        LevelSet::sphere_sdf(radius).map(Self).map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (radius = 1.0))]
    fn sphere_quadratic(radius: f64) -> PyResult<Self> {
        LevelSet::sphere_quadratic(radius)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (major = 2.0, minor = 1.0))]
    fn torus(major: f64, minor: f64) -> PyResult<Self> {
        LevelSet::torus(major, minor).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn plane(normal: Triple) -> PyResult<Self> {
        LevelSet::plane(vec3(normal)).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn point_cloud(points: Vec<Triple>) -> PyResult<Self> {
        LevelSet::point_cloud(points.into_iter().map(vec3).collect())
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn load_point_cloud(path: &str) -> PyResult<Self> {
        levelset::load_point_cloud(path)
            .map(Self)
            .map_err(value_err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.0.kind().to_string()
    }

    fn eval(&self, x: Triple) -> f64 {
        self.0.eval(&vec3(x))
    }

    fn grad(&self, x: Triple) -> PyResult<Triple> {
        self.0.grad(&vec3(x)).map(|g| triple(&g)).map_err(value_err)
    }

    /// Band constants as a dict: nu, hessian_bound, satisfied, approximate.
    #[pyo3(signature = (band, samples = 10_000, seed = 0))]
    fn check_assumption_a<'py>(
        &self,
        py: Python<'py>,
        band: f64,
        samples: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let r = levelset::check_assumption_a(&self.0, band, samples, seed).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("band_half_width", r.band_half_width)?;
        d.set_item("nu", r.nu)?;
        d.set_item("hessian_bound", r.hessian_bound)?;
        d.set_item("satisfied", r.satisfied)?;
        d.set_item("approximate", r.approximate)?;
        d.set_item("samples", r.samples)?;
        Ok(d)
    }
}

#[pyclass(name = "Curve", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCurve(DiscreteCurve);

#[pymethods]
impl PyCurve {
    #[new]
    fn new(points: Vec<Triple>) -> PyResult<Self> {
        DiscreteCurve::from_points(points.into_iter().map(vec3).collect())
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (p, q, m = curve::DEFAULT_M))]
    fn straight(p: Triple, q: Triple, m: usize) -> PyResult<Self> {
        curve::init_straight_line(vec3(p), vec3(q), m)
            .map(|(c, _)| Self(c))
            .map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (p, q, surface, m = curve::DEFAULT_M, tau_r = curve::DEFAULT_TAU_R, seed = 0))]
    fn randomized(
        p: Triple,
        q: Triple,
        surface: &PyLevelSet,
        m: usize,
        tau_r: f64,
        seed: u64,
    ) -> PyResult<Self> {
        curve::init_randomized(vec3(p), vec3(q), m, &surface.0, tau_r, seed)
            .map(|(c, _)| Self(c))
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        DiscreteCurve::from_json(text).map(Self).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn points(&self) -> Vec<Triple> {
        self.0.points().iter().map(triple).collect()
    }

    fn length(&self) -> f64 {
        curve::curve_length(&self.0)
    }

    fn speed_profile(&self) -> Vec<f64> {
        curve::speed_profile(&self.0)
    }

    fn geodesic_defect(&self) -> f64 {
        diagnostics::geodesic_defect(&self.0)
    }

    fn tangency_defect(&self, surface: &PyLevelSet) -> PyResult<f64> {
        diagnostics::tangency_defect(&self.0, &surface.0).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.0.points().len()
    }
}

#[allow(clippy::too_many_arguments)]
fn solver_config(
    scheme: &str,
    tau_gamma: f64,
    tau_lambda: f64,
    epsilon: f64,
    omega: f64,
    alpha: f64,
    iters: usize,
    record_every: usize,
) -> PyResult<SolverConfig> {
    let cfg = SolverConfig {
        scheme: scheme.parse::<Scheme>().map_err(value_err)?,
        tau_gamma,
        tau_lambda,
        epsilon,
        omega,
        alpha,
        max_iters: iters,
        record_every,
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

fn row_dict<'py>(py: Python<'py>, r: &TraceRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iteration", r.iteration)?;
    d.set_item("length", r.length)?;
    d.set_item("absolute_error", r.absolute_error)?;
    d.set_item("relative_error", r.relative_error)?;
    d.set_item("surface_error", r.surface_error)?;
    d.set_item("lyapunov_j", r.lyapunov_j)?;
    d.set_item("lambda_residual_norm", r.lambda_residual_norm)?;
    d.set_item("gamma_residual_norm", r.gamma_residual_norm)?;
    d.set_item("geodesic_defect", r.geodesic_defect)?;
    Ok(d)
}

/// Relaxes `init` on `surface`. Returns `(curve, multiplier, trace)` with the
/// trace as a list of dicts; raises `DivergedError` on divergence.
#[pyfunction]
#[pyo3(signature = (
    surface, init, *, scheme = "base", tau_gamma = 1e-5, tau_lambda = 0.7,
    epsilon = 0.01, omega = 1.0, alpha = 0.0, iters = 5000, record_every = 10,
    reference = None,
))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    surface: &PyLevelSet,
    init: &PyCurve,
    scheme: &str,
    tau_gamma: f64,
    tau_lambda: f64,
    epsilon: f64,
    omega: f64,
    alpha: f64,
    iters: usize,
    record_every: usize,
    reference: Option<f64>,
) -> PyResult<(PyCurve, Vec<f64>, Vec<Bound<'py, PyDict>>)> {
    let cfg = solver_config(
        scheme,
        tau_gamma,
        tau_lambda,
        epsilon,
        omega,
        alpha,
        iters,
        record_every,
    )?;
    let m = init.0.m();
    let start = (init.0.clone(), curve::MultiplierField::zeros(m));
    let result = py.detach(|| schemes::run(&cfg, &surface.0, start, reference));
    match result {
        Ok((state, trace)) => {
            let rows = trace
                .rows()
                .iter()
                .map(|r| row_dict(py, r))
                .collect::<PyResult<Vec<_>>>()?;
            Ok((
                PyCurve(state.curve),
                state.multiplier.values().to_vec(),
                rows,
            ))
        }
        Err(RunError::Diverged { error, .. }) => Err(DivergedError::new_err(error.to_string())),
        Err(e) => Err(value_err(e)),
    }
}

/// Exact geodesic distance between two points of a sphere centred at the origin.
#[pyfunction]
fn sphere_geodesic_distance(p: Triple, q: Triple, radius: f64) -> f64 {
    geo::harness::sphere_geodesic_distance(&vec3(p), &vec3(q), radius)
}

#[pyfunction]
fn greens_function(t: f64, s: f64, tau_gamma: f64) -> f64 {
    planar::greens_function(t, s, tau_gamma)
}

/// Solves `(I − τ D²) x = rhs` with the first and last entries held fixed.
#[pyfunction]
fn implicit_gamma_solve(rhs: Vec<Triple>, tau_gamma: f64) -> PyResult<Vec<Triple>> {
    if rhs.len() < 2 {
        return Err(PyValueError::new_err("need at least two nodes"));
    }
    let rhs: Vec<Vec3> = rhs.into_iter().map(vec3).collect();
    Ok(planar::implicit_gamma_solve(&rhs, tau_gamma)
        .iter()
        .map(triple)
        .collect())
}

/// Planar run from a perturbed straight line. Returns a dict with the
/// ergodic records, whether the bound held, and the log-log slope.
#[pyfunction]
#[pyo3(signature = (
    *, normal = (0.0, 0.0, 1.0), p = (0.0, 0.0, 0.0), q = (1.0, 0.0, 0.0), m = 100,
    tau_gamma = 0.01, tau_lambda = 50.0, epsilon = planar::DEFAULT_PLANAR_EPSILON,
    iters = 1 << 14, amplitude = 0.3, seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn run_planar<'py>(
    py: Python<'py>,
    normal: Triple,
    p: Triple,
    q: Triple,
    m: usize,
    tau_gamma: f64,
    tau_lambda: f64,
    epsilon: f64,
    iters: usize,
    amplitude: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let problem = PlanarProblem {
        normal: vec3(normal),
        p: vec3(p),
        q: vec3(q),
        m,
        tau_gamma,
        tau_lambda,
        epsilon,
    };
    let init = planar::perturbed_init(&problem, amplitude, seed).map_err(value_err)?;
    let out = py
        .detach(|| planar::run_planar(&problem, init, iters))
        .map_err(value_err)?;
    let records = out
        .records
        .iter()
        .map(|r| (r.k, r.gap, r.bound))
        .collect::<Vec<_>>();
    let d = PyDict::new(py);
    d.set_item("step_product", problem.step_product())?;
    d.set_item("records", records)?;
    d.set_item("bound_held", out.bound_held())?;
    d.set_item("loglog_slope", out.loglog_slope())?;
    d.set_item("diverged_at", out.diverged_at)?;
    d.set_item("curve", PyCurve(out.state.curve))?;
    Ok(d)
}

#[pymodule]
fn levelset_geodesic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLevelSet>()?;
    m.add_class::<PyCurve>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sphere_geodesic_distance, m)?)?;
    m.add_function(wrap_pyfunction!(greens_function, m)?)?;
    m.add_function(wrap_pyfunction!(implicit_gamma_solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_planar, m)?)?;
    m.add("DivergedError", m.py().get_type::<DivergedError>())?;
    Ok(())
}
