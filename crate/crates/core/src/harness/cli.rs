//! The `lsgeo` command line.

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::levelset::check_assumption_a;
use crate::planar::{perturbed_init, PlanarProblem, DEFAULT_PLANAR_EPSILON};
use crate::schemes::Scheme;

use super::spec::{parse_vec3, ExperimentSpec, Settings, SpecError, SurfaceSpec};
use super::{cmd_benchmark, cmd_compare, cmd_planar, cmd_run, cmd_sweep, HarnessError};

/// `println!` that ignores a closed stdout, so piping into `head` is not a panic.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "lsgeo",
    version,
    about = "Geodesics on implicit surfaces by primal-dual curve relaxation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Relax one curve and write its trace, curves and summary.
    Run(ExperimentArgs),
    /// Repeat a run over several values of one solver parameter.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// epsilon, tau_lambda, tau_gamma, omega or alpha.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Average errors over random endpoint pairs at several iteration counts.
    Benchmark {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
        #[arg(long, default_value = "100,1000,2000")]
        checkpoints: String,
    },
    /// Run several schemes on the same problem and initialization.
    Compare {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value = "base,var1,var2")]
        schemes: String,
    },
    /// Semi-implicit iteration on a plane with the ergodic gap certificate.
    Planar(PlanarArgs),
    /// Estimate the band constants of a surface and print them as JSON.
    CheckSurface(CheckSurfaceArgs),
}

#[derive(Debug, Args)]
struct SurfaceArgs {
    /// sphere, sphere-quadratic, torus, plane or point-cloud.
    #[arg(long)]
    surface: Option<String>,
    /// Whitespace-separated xyz file for point-cloud surfaces.
    #[arg(long)]
    points: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    /// Plane normal `x,y,z`.
    #[arg(long, allow_hyphen_values = true)]
    normal: Option<String>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Flat TOML file with any of the settings below; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    surface: SurfaceArgs,
    /// `antipodal-z`, or give --p and --q.
    #[arg(long)]
    endpoints: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    p: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    q: Option<String>,
    /// gda, regularized, base, var1 or var2.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long = "tau-gamma", allow_hyphen_values = true)]
    tau_gamma: Option<String>,
    #[arg(long = "tau-lambda", allow_hyphen_values = true)]
    tau_lambda: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    /// straight or randomized.
    #[arg(long)]
    init: Option<String>,
    #[arg(long = "tau-r", allow_hyphen_values = true)]
    tau_r: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// none, sphere-exact, or a distance.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long = "record-every")]
    record_every: Option<String>,
}

impl SurfaceArgs {
    fn apply(&self, s: &mut Settings) {
        for (key, v) in [
            ("surface", &self.surface),
            ("points", &self.points),
            ("radius", &self.radius),
            ("normal", &self.normal),
        ] {
            if let Some(v) = v {
                s.set_flag(key, v.clone());
            }
        }
    }
}

impl ExperimentArgs {
    fn settings(&self) -> Result<Settings, HarnessError> {
        let mut s = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        self.surface.apply(&mut s);
        for (key, v) in [
            ("endpoints", &self.endpoints),
            ("p", &self.p),
            ("q", &self.q),
            ("scheme", &self.scheme),
            ("tau_gamma", &self.tau_gamma),
            ("tau_lambda", &self.tau_lambda),
            ("epsilon", &self.epsilon),
            ("omega", &self.omega),
            ("alpha", &self.alpha),
            ("m", &self.m),
            ("iters", &self.iters),
            ("init", &self.init),
            ("tau_r", &self.tau_r),
            ("seed", &self.seed),
            ("reference", &self.reference),
            ("out", &self.out),
            ("jobs", &self.jobs),
            ("record_every", &self.record_every),
        ] {
            if let Some(v) = v {
                s.set_flag(key, v.clone());
            }
        }
        Ok(s)
    }

    fn spec(&self) -> Result<ExperimentSpec, HarnessError> {
        Ok(ExperimentSpec::from_settings(&self.settings()?)?)
    }
}

#[derive(Debug, Args)]
struct PlanarArgs {
    /// Plane normal `x,y,z`.
    #[arg(long, allow_hyphen_values = true, default_value = "0,0,1")]
    normal: String,
    #[arg(long, allow_hyphen_values = true, default_value = "0,0,0")]
    p: String,
    #[arg(long, allow_hyphen_values = true, default_value = "1,0,0")]
    q: String,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long = "tau-gamma", default_value_t = 0.01)]
    tau_gamma: f64,
    #[arg(long = "tau-lambda", default_value_t = 50.0)]
    tau_lambda: f64,
    #[arg(long, default_value_t = DEFAULT_PLANAR_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 1 << 14)]
    iters: usize,
    /// perturbed or saddle.
    #[arg(long, default_value = "perturbed")]
    init: String,
    /// Size of the perturbation for `--init perturbed`.
    #[arg(long, default_value_t = 0.3)]
    amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CheckSurfaceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    surface: SurfaceArgs,
    /// Half-width `a` of the band `|φ| ≤ a`.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    band: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn flag_error(flag: &str, message: impl Into<String>) -> HarnessError {
    SpecError {
        location: format!("flag {flag}"),
        message: message.into(),
    }
    .into()
}

fn parse_list<T: FromStr>(flag: &str, text: &str) -> Result<Vec<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|e| flag_error(flag, format!("'{t}': {e}")))
        })
        .collect()
}

fn print_json<T: serde::Serialize>(value: &T) {
    out!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn dispatch(command: Command) -> Result<i32, HarnessError> {
    match command {
        Command::Run(args) => {
            let spec = args.spec()?;
            let record = cmd_run(&spec)?;
            print_json(&record.summary);
            if record.diverged() {
                eprintln!(
                    "run diverged: {}",
                    record.summary.divergence.as_deref().unwrap_or("")
                );
                return Ok(EXIT_DIVERGED);
            }
            Ok(EXIT_OK)
        }
        Command::Sweep { exp, param, values } => {
            let spec = exp.spec()?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            let entries = cmd_sweep(&spec, &param, &values)?;
            for e in &entries {
                let err = e
                    .record
                    .as_ref()
                    .and_then(|r| r.summary.absolute_error)
                    .map(|x| format!("{x:.6}"))
                    .unwrap_or_else(|| "-".into());
                out!(
                    "{param}={}: absolute_error={err} unstable={}{}",
                    e.label,
                    e.unstable(),
                    e.error
                        .as_deref()
                        .map(|m| format!(" ({m})"))
                        .unwrap_or_default()
                );
            }
            Ok(EXIT_OK)
        }
        Command::Benchmark {
            exp,
            pairs,
            checkpoints,
        } => {
            let mut settings = exp.settings()?;
            if settings.text("init").is_none() {
                settings.set_flag("init", "straight");
            }
            let spec = ExperimentSpec::from_settings(&settings)?;
            let checkpoints: Vec<usize> = parse_list("--checkpoints", &checkpoints)?;
            if checkpoints.is_empty() {
                return Err(flag_error("--checkpoints", "no checkpoints given"));
            }
            let report = cmd_benchmark(&spec, pairs, &checkpoints)?;
            for c in &report.checkpoints {
                out!(
                    "{:>6} iters: avg_absolute_error={} avg_relative_error={} avg_time={:.3}s diverged={}",
                    c.iterations,
                    c.avg_absolute_error.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into()),
                    c.avg_relative_error.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into()),
                    c.avg_wall_time,
                    c.diverged
                );
            }
            Ok(EXIT_OK)
        }
        Command::Compare { exp, schemes } => {
            let spec = exp.spec()?;
            let schemes: Vec<Scheme> = parse_list("--schemes", &schemes)?;
            let records = cmd_compare(&spec, &schemes)?;
            for r in &records {
                out!(
                    "{}: absolute_error={} surface_error={} diverged={}",
                    r.summary.scheme,
                    r.summary
                        .absolute_error
                        .map(|x| format!("{x:.6}"))
                        .unwrap_or_else(|| "-".into()),
                    r.summary
                        .surface_error
                        .map(|x| format!("{x:.6e}"))
                        .unwrap_or_else(|| "-".into()),
                    r.summary.diverged
                );
            }
            Ok(EXIT_OK)
        }
        Command::Planar(args) => {
            let vec = |flag: &str, t: &str| parse_vec3(t).map_err(|e| flag_error(flag, e));
            let problem = PlanarProblem {
                normal: vec("--normal", &args.normal)?,
                p: vec("--p", &args.p)?,
                q: vec("--q", &args.q)?,
                m: args.m,
                tau_gamma: args.tau_gamma,
                tau_lambda: args.tau_lambda,
                epsilon: args.epsilon,
            };
            problem.validate()?;
            let init = match args.init.as_str() {
                "perturbed" => perturbed_init(&problem, args.amplitude, args.seed)?,
                "saddle" => problem.saddle()?,
                other => {
                    return Err(flag_error(
                        "--init",
                        format!("unknown planar init '{other}' (expected perturbed or saddle)"),
                    ))
                }
            };
            out!(
                "step product tau_lambda*tau_gamma*|a|^2 = {}",
                problem.step_product()
            );
            if !problem.step_condition_holds() {
                out!("WARNING: step condition violated (tau_lambda*tau_gamma*|a|^2 >= 1); the ergodic bound is not guaranteed");
            }
            let run = cmd_planar(&problem, init, args.iters, &args.out)?;
            if let Some(k) = run.diverged_at {
                out!("diverged at iteration {k}");
            }
            out!("bound held: {}", run.bound_held());
            match run.loglog_slope() {
                Some(s) => out!("log-log slope: {s:.4}"),
                None => out!("log-log slope: n/a"),
            }
            Ok(EXIT_OK)
        }
        Command::CheckSurface(args) => {
            let mut s = match &args.config {
                Some(path) => Settings::from_file(path)?,
                None => Settings::default(),
            };
            args.surface.apply(&mut s);
            let surface = SurfaceSpec::from_settings(&s)?.load()?;
            let report = check_assumption_a(&surface, args.band, args.samples, args.seed)?;
            print_json(&report);
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 invalid input, 2 divergence.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
