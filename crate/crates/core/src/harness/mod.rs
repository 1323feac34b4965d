//! Experiment orchestration: single runs, parameter sweeps, scheme
//! comparisons, multi-pair benchmarks and the planar certificate, with their
//! on-disk artifacts.

pub mod cli;
pub mod spec;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::curve::{CurveError, DiscreteCurve, MultiplierField};
use crate::diagnostics::{tangency_defect, IterationTrace, TraceRow};
use crate::levelset::{random_unit_vector, LevelSet, LevelSetError};
use crate::planar::{self, PlanarError, PlanarProblem, PlanarRun};
use crate::schemes::{self, ConfigError, RunError, Scheme, SolverConfig, SolverState};
use crate::Vec3;

pub use spec::{
    sphere_geodesic_distance, Endpoints, ExperimentSpec, InitSpec, ReferenceSpec, Resolved,
    Settings, SpecError, SurfaceSpec,
};

/// Benchmark pairs closer than this angle (radians) are redrawn.
pub const MIN_PAIR_ANGLE: f64 = 0.1;

pub const SWEEP_PARAMETERS: [&str; 5] = ["epsilon", "tau_lambda", "tau_gamma", "omega", "alpha"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Planar(#[from] PlanarError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?)
}

/// Final state of one run as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub surface: String,
    pub scheme: Scheme,
    pub iterations: usize,
    pub reference_distance: Option<f64>,
    pub length: Option<f64>,
    pub absolute_error: Option<f64>,
    pub relative_error: Option<f64>,
    pub surface_error: Option<f64>,
    pub lambda_residual: Option<f64>,
    pub gamma_residual: Option<f64>,
    pub geodesic_defect: Option<f64>,
    pub tangency_defect: Option<f64>,
    pub diverged: bool,
    pub divergence: Option<String>,
}

/// Everything one solver run produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub summary: RunSummary,
    pub init: DiscreteCurve,
    pub state: SolverState,
    pub trace: IterationTrace,
    pub wall_time: f64,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.summary.diverged
    }

    /// Diverged, or surface error not monotone over the second half of the
    /// recorded rows.
    pub fn unstable(&self) -> bool {
        self.diverged() || !tail_monotone(&self.trace, 0.5)
    }
}

/// Whether the surface error never increases (beyond rounding) over the last
/// `fraction` of recorded rows.
pub fn tail_monotone(trace: &IterationTrace, fraction: f64) -> bool {
    let rows = trace.rows();
    if rows.len() < 2 {
        return true;
    }
    let last_it = rows.last().unwrap().iteration as f64;
    let from = last_it * (1.0 - fraction);
    let tail: Vec<f64> = rows
        .iter()
        .filter(|r| r.iteration as f64 >= from)
        .map(|r| r.surface_error)
        .collect();
    tail.windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-300)
}

fn summarize(
    surface: &LevelSet,
    cfg: &SolverConfig,
    state: &SolverState,
    trace: &IterationTrace,
    reference_distance: Option<f64>,
    divergence: Option<String>,
) -> RunSummary {
    let last: Option<&TraceRow> = trace.last();
    let finite = state
        .curve
        .points()
        .iter()
        .all(|p| p.iter().all(|c| c.is_finite()));
    RunSummary {
        surface: surface.kind().to_string(),
        scheme: cfg.scheme,
        iterations: state.iteration,
        reference_distance,
        length: last.map(|r| r.length),
        absolute_error: last.and_then(|r| r.absolute_error),
        relative_error: last.and_then(|r| r.relative_error),
        surface_error: last.map(|r| r.surface_error),
        lambda_residual: last.map(|r| r.lambda_residual_norm),
        gamma_residual: last.map(|r| r.gamma_residual_norm),
        geodesic_defect: last.map(|r| r.geodesic_defect),
        tangency_defect: if finite {
            tangency_defect(&state.curve, surface).ok()
        } else {
            None
        },
        diverged: divergence.is_some(),
        divergence,
    }
}

/// Runs the solver once. Divergence is captured in the record, not returned
/// as an error.
pub fn execute(
    cfg: &SolverConfig,
    resolved: &Resolved,
    init: (DiscreteCurve, MultiplierField),
) -> Result<RunRecord, HarnessError> {
    let init_curve = init.0.clone();
    let start = Instant::now();
    let outcome = schemes::run(cfg, &resolved.surface, init, resolved.reference_distance);
    let wall_time = start.elapsed().as_secs_f64();
    let (state, trace, divergence) = match outcome {
        Ok((state, trace)) => (state, trace, None),
        Err(RunError::Diverged {
            error,
            state,
            trace,
        }) => (*state, trace, Some(error.to_string())),
        Err(RunError::Config(e)) => return Err(e.into()),
    };
    let summary = summarize(
        &resolved.surface,
        cfg,
        &state,
        &trace,
        resolved.reference_distance,
        divergence,
    );
    Ok(RunRecord {
        summary,
        init: init_curve,
        state,
        trace,
        wall_time,
    })
}

/// Writes `trace.csv`, `curve_init.json`, `curve_final.json`, `summary.json`
/// and `run.log` into `dir`.
pub fn write_run_artifacts(dir: &Path, record: &RunRecord) -> Result<(), HarnessError> {
    create_dir(dir)?;
    let trace_path = dir.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    record.trace.write_csv(file).map_err(csv_err(&trace_path))?;
    write_file(&dir.join("curve_init.json"), &record.init.to_json())?;
    write_file(&dir.join("curve_final.json"), &record.state.curve.to_json())?;
    let summary = serde_json::to_string_pretty(&record.summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), &(summary + "\n"))?;
    let log = format!(
        "wall_time_seconds = {:.3}\niterations = {}\ndiverged = {}\n",
        record.wall_time, record.summary.iterations, record.summary.diverged
    );
    write_file(&dir.join("run.log"), &log)
}

/// Single run; artifacts go to `spec.output_dir`.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunRecord, HarnessError> {
    let resolved = spec.resolve()?;
    let init = spec.initial_state(&resolved)?;
    let record = execute(&spec.solver, &resolved, init)?;
    write_run_artifacts(&spec.output_dir, &record)?;
    Ok(record)
}

/// Returns a copy of `cfg` with one named parameter replaced.
pub fn with_parameter(
    cfg: &SolverConfig,
    name: &str,
    value: f64,
) -> Result<SolverConfig, HarnessError> {
    let mut c = *cfg;
    match name {
        "epsilon" => c.epsilon = value,
        "tau_lambda" => c.tau_lambda = value,
        "tau_gamma" => c.tau_gamma = value,
        "omega" => c.omega = value,
        "alpha" => c.alpha = value,
        other => {
            return Err(SpecError {
                location: "flag --param".into(),
                message: format!(
                    "unknown sweep parameter '{other}' (expected one of {})",
                    SWEEP_PARAMETERS.join(", ")
                ),
            }
            .into())
        }
    }
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    /// The value as given on the command line.
    pub label: String,
    pub value: f64,
    /// `None` when the configuration itself was rejected.
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

impl SweepEntry {
    pub fn unstable(&self) -> bool {
        self.record
            .as_ref()
            .map(RunRecord::unstable)
            .unwrap_or(true)
    }
}

/// One run per value of `parameter`, each in `out/<parameter>=<value>/`, plus
/// `sweep_summary.csv`.
pub fn cmd_sweep(
    spec: &ExperimentSpec,
    parameter: &str,
    values: &[String],
) -> Result<Vec<SweepEntry>, HarnessError> {
    let parsed: Vec<(String, f64)> = values
        .iter()
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map(|x| (v.trim().to_string(), x))
                .map_err(|e| SpecError {
                    location: "flag --values".into(),
                    message: format!("invalid value '{v}': {e}"),
                })
        })
        .collect::<Result<_, _>>()?;
    if parsed.is_empty() {
        return Err(SpecError {
            location: "flag --values".into(),
            message: "no values given".into(),
        }
        .into());
    }
    with_parameter(&spec.solver, parameter, parsed[0].1)?;
    let resolved = spec.resolve()?;
    let init = spec.initial_state(&resolved)?;
    create_dir(&spec.output_dir)?;

    let entries: Vec<Result<SweepEntry, HarnessError>> = pool(spec.jobs)?.install(|| {
        parsed
            .par_iter()
            .map(|(label, value)| {
                let cfg = with_parameter(&spec.solver, parameter, *value)?;
                if let Err(e) = cfg.validate() {
                    return Ok(SweepEntry {
                        label: label.clone(),
                        value: *value,
                        record: None,
                        error: Some(e.to_string()),
                    });
                }
                let record = execute(&cfg, &resolved, init.clone())?;
                write_run_artifacts(
                    &spec.output_dir.join(format!("{parameter}={label}")),
                    &record,
                )?;
                Ok(SweepEntry {
                    label: label.clone(),
                    value: *value,
                    record: Some(record),
                    error: None,
                })
            })
            .collect()
    });
    let entries: Vec<SweepEntry> = entries.into_iter().collect::<Result<_, _>>()?;

    let path = spec.output_dir.join("sweep_summary.csv");
    let mut w = csv_writer(&path)?;
    let write = |w: &mut csv::Writer<fs::File>| -> csv::Result<()> {
        w.write_record([
            parameter,
            "iterations",
            "length",
            "absolute_error",
            "relative_error",
            "surface_error",
            "diverged",
            "unstable",
        ])?;
        for e in &entries {
            let s = e.record.as_ref().map(|r| &r.summary);
            w.write_record([
                e.label.clone(),
                s.map(|s| s.iterations.to_string()).unwrap_or_default(),
                opt(s.and_then(|s| s.length)),
                opt(s.and_then(|s| s.absolute_error)),
                opt(s.and_then(|s| s.relative_error)),
                opt(s.and_then(|s| s.surface_error)),
                s.map(|s| s.diverged).unwrap_or(false).to_string(),
                e.unstable().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(csv_err(&path))?;
    Ok(entries)
}

/// Each scheme on the same problem and initialization; `comparison.csv` plus
/// one artifact directory per entry.
pub fn cmd_compare(
    spec: &ExperimentSpec,
    schemes_to_run: &[Scheme],
) -> Result<Vec<RunRecord>, HarnessError> {
    let resolved = spec.resolve()?;
    let init = spec.initial_state(&resolved)?;
    let configs: Vec<SolverConfig> = schemes_to_run
        .iter()
        .map(|s| {
            let c = SolverConfig {
                scheme: *s,
                ..spec.solver
            };
            c.validate().map(|_| c)
        })
        .collect::<Result<_, _>>()?;
    create_dir(&spec.output_dir)?;
    let records: Vec<Result<RunRecord, HarnessError>> = pool(spec.jobs)?.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, cfg)| {
                let record = execute(cfg, &resolved, init.clone())?;
                write_run_artifacts(
                    &spec.output_dir.join(format!("{i}_{}", cfg.scheme)),
                    &record,
                )?;
                Ok(record)
            })
            .collect()
    });
    let records: Vec<RunRecord> = records.into_iter().collect::<Result<_, _>>()?;
    let path = spec.output_dir.join("comparison.csv");
    let mut w = csv_writer(&path)?;
    let write = |w: &mut csv::Writer<fs::File>| -> csv::Result<()> {
        w.write_record([
            "scheme",
            "iterations",
            "length",
            "absolute_error",
            "relative_error",
            "surface_error",
            "diverged",
        ])?;
        for r in &records {
            let s = &r.summary;
            w.write_record([
                s.scheme.to_string(),
                s.iterations.to_string(),
                opt(s.length),
                opt(s.absolute_error),
                opt(s.relative_error),
                opt(s.surface_error),
                s.diverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(csv_err(&path))?;
    Ok(records)
}

/// `n` seeded endpoint pairs on `surface`, never closer than
/// [`MIN_PAIR_ANGLE`] (as seen from the origin).
pub fn sample_pairs(surface: &LevelSet, n: usize, seed: u64) -> Vec<(Vec3, Vec3)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| match surface.sphere_radius() {
        Some(r) => random_unit_vector(rng) * r,
        None => surface.random_point(rng),
    };
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let (np, nq) = (p.norm(), q.norm());
        let angle = if np > 0.0 && nq > 0.0 {
            (p.dot(&q) / (np * nq)).clamp(-1.0, 1.0).acos()
        } else {
            0.0
        };
        if angle >= MIN_PAIR_ANGLE {
            pairs.push((p, q));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub p: Vec3,
    pub q: Vec3,
    pub reference_distance: Option<f64>,
    /// Row at each checkpoint, `None` once the run has diverged.
    pub rows: Vec<Option<TraceRow>>,
    /// Seconds spent stepping up to each checkpoint.
    pub times: Vec<Option<f64>>,
    pub divergence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointAverage {
    pub iterations: usize,
    pub runs: usize,
    pub diverged: usize,
    pub avg_absolute_error: Option<f64>,
    pub avg_relative_error: Option<f64>,
    pub avg_surface_error: f64,
    pub avg_wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub pairs: Vec<PairResult>,
    pub checkpoints: Vec<CheckpointAverage>,
}

fn run_pair(
    cfg: &SolverConfig,
    surface: &LevelSet,
    init: (DiscreteCurve, MultiplierField),
    reference_distance: Option<f64>,
    checkpoints: &[usize],
) -> Result<PairResult, HarnessError> {
    let p = init.0.start();
    let q = init.0.end();
    let mut state = SolverState::new(init.0, init.1)?;
    let mut rows = vec![None; checkpoints.len()];
    let mut times = vec![None; checkpoints.len()];
    let mut elapsed = 0.0;
    let mut divergence = None;
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    'outer: for k in 0..=last {
        if k > 0 {
            let t = Instant::now();
            let r = schemes::step(&mut state, cfg, surface);
            elapsed += t.elapsed().as_secs_f64();
            if let Err(e) = r {
                divergence = Some(e.to_string());
                break 'outer;
            }
        }
        for (j, &c) in checkpoints.iter().enumerate() {
            if c == k {
                match TraceRow::measure(&state, cfg, surface, reference_distance) {
                    Ok(row) => rows[j] = Some(row),
                    Err(e) => {
                        divergence = Some(e.to_string());
                        break 'outer;
                    }
                }
                times[j] = Some(elapsed);
            }
        }
    }
    Ok(PairResult {
        p,
        q,
        reference_distance,
        rows,
        times,
        divergence,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs every pair of the benchmark and averages at each checkpoint.
/// `spec.endpoints` is ignored; pairs come from [`sample_pairs`] with
/// `spec.seed`.
pub fn run_benchmark(
    spec: &ExperimentSpec,
    n_pairs: usize,
    checkpoints: &[usize],
) -> Result<BenchmarkReport, HarnessError> {
    spec.solver.validate()?;
    let surface = spec.surface.load()?;
    let pairs = sample_pairs(&surface, n_pairs, spec.seed);
    let results: Vec<Result<PairResult, HarnessError>> = pool(spec.jobs)?.install(|| {
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, (p, q))| {
                let reference = match spec.reference {
                    ReferenceSpec::None => None,
                    ReferenceSpec::Value(d) => Some(d),
                    ReferenceSpec::SphereExact => spec
                        .surface
                        .sphere_radius()
                        .map(|r| sphere_geodesic_distance(p, q, r)),
                };
                let init = match spec.init {
                    InitSpec::Straight => crate::curve::init_straight_line(*p, *q, spec.m)?,
                    InitSpec::Randomized { tau_r, seed } => crate::curve::init_randomized(
                        *p,
                        *q,
                        spec.m,
                        &surface,
                        tau_r,
                        seed.wrapping_add(i as u64),
                    )?,
                };
                run_pair(&spec.solver, &surface, init, reference, checkpoints)
            })
            .collect()
    });
    let pairs: Vec<PairResult> = results.into_iter().collect::<Result<_, _>>()?;
    let averages = checkpoints
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let done: Vec<(&TraceRow, f64)> = pairs
                .iter()
                .filter_map(|p| p.rows[j].as_ref().zip(p.times[j]))
                .collect();
            CheckpointAverage {
                iterations: c,
                runs: done.len(),
                diverged: pairs.len() - done.len(),
                avg_absolute_error: mean(done.iter().filter_map(|(r, _)| r.absolute_error)),
                avg_relative_error: mean(done.iter().filter_map(|(r, _)| r.relative_error)),
                avg_surface_error: mean(done.iter().map(|(r, _)| r.surface_error))
                    .unwrap_or(f64::NAN),
                avg_wall_time: mean(done.iter().map(|(_, t)| *t)).unwrap_or(f64::NAN),
            }
        })
        .collect();
    Ok(BenchmarkReport {
        pairs,
        checkpoints: averages,
    })
}

/// [`run_benchmark`] plus `benchmark.csv`, `benchmark_pairs.csv` and
/// `benchmark_timing.csv`. Timings live in their own file so the other two
/// are reproducible byte for byte.
pub fn cmd_benchmark(
    spec: &ExperimentSpec,
    n_pairs: usize,
    checkpoints: &[usize],
) -> Result<BenchmarkReport, HarnessError> {
    let report = run_benchmark(spec, n_pairs, checkpoints)?;
    create_dir(&spec.output_dir)?;

    let path = spec.output_dir.join("benchmark.csv");
    let mut w = csv_writer(&path)?;
    (|| -> csv::Result<()> {
        w.write_record([
            "iterations",
            "runs",
            "diverged",
            "avg_absolute_error",
            "avg_relative_error",
            "avg_surface_error",
        ])?;
        for c in &report.checkpoints {
            w.write_record([
                c.iterations.to_string(),
                c.runs.to_string(),
                c.diverged.to_string(),
                opt(c.avg_absolute_error),
                opt(c.avg_relative_error),
                c.avg_surface_error.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })()
    .map_err(csv_err(&path))?;

    let path = spec.output_dir.join("benchmark_pairs.csv");
    let mut w = csv_writer(&path)?;
    (|| -> csv::Result<()> {
        w.write_record([
            "pair",
            "p",
            "q",
            "reference_distance",
            "iterations",
            "absolute_error",
            "relative_error",
            "surface_error",
        ])?;
        let fmt = |v: &Vec3| format!("{},{},{}", v.x, v.y, v.z);
        for (i, pr) in report.pairs.iter().enumerate() {
            for (j, c) in checkpoints.iter().enumerate() {
                let row = pr.rows[j].as_ref();
                w.write_record([
                    i.to_string(),
                    fmt(&pr.p),
                    fmt(&pr.q),
                    opt(pr.reference_distance),
                    c.to_string(),
                    opt(row.and_then(|r| r.absolute_error)),
                    opt(row.and_then(|r| r.relative_error)),
                    opt(row.map(|r| r.surface_error)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })()
    .map_err(csv_err(&path))?;

    let path = spec.output_dir.join("benchmark_timing.csv");
    let mut w = csv_writer(&path)?;
    (|| -> csv::Result<()> {
        w.write_record(["iterations", "avg_wall_time_s"])?;
        for c in &report.checkpoints {
            w.write_record([c.iterations.to_string(), format!("{:.3}", c.avg_wall_time)])?;
        }
        w.flush()?;
        Ok(())
    })()
    .map_err(csv_err(&path))?;
    Ok(report)
}

/// Planar run; writes `ergodic.csv` into `out`.
pub fn cmd_planar(
    problem: &PlanarProblem,
    init: (DiscreteCurve, MultiplierField),
    max_iters: usize,
    out: &Path,
) -> Result<PlanarRun, HarnessError> {
    let run = planar::run_planar(problem, init, max_iters)?;
    create_dir(out)?;
    let path = out.join("ergodic.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    planar::write_ergodic_csv(&run.records, file).map_err(csv_err(&path))?;
    Ok(run)
}
