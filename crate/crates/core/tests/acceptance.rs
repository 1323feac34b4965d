//! End-to-end criteria. Runs without the libtest harness so that every
//! `criterion N: PASS|FAIL` line is printed; exits nonzero if any fails.

use std::f64::consts::PI;

use levelset_geodesic::curve::{init_randomized, init_straight_line, speed_profile};
use levelset_geodesic::diagnostics::{geodesic_defect, tangency_defect};
use levelset_geodesic::harness::{
    cmd_sweep, run_benchmark, Endpoints, ExperimentSpec, InitSpec, ReferenceSpec, SurfaceSpec,
};
use levelset_geodesic::levelset::{check_assumption_a, random_unit_vector, LevelSet};
use levelset_geodesic::planar::{
    greens_function, implicit_gamma_solve, perturbed_init, run_planar, PlanarProblem,
};
use levelset_geodesic::schemes::{run, Scheme, SolverConfig};
use levelset_geodesic::{IterationTrace, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INIT_SEED: u64 = 0;
const PAIR_SEED: u64 = 0;

struct Verdict {
    pass: bool,
    line: String,
}

fn verdict(n: u32, title: &str, pass: bool, detail: String) -> Verdict {
    let status = if pass { "PASS" } else { "FAIL" };
    Verdict {
        pass,
        line: format!("criterion {n}: {status} {title}: {detail}"),
    }
}

fn unit_sphere() -> LevelSet {
    LevelSet::sphere_sdf(1.0).unwrap()
}

fn poles() -> (Vec3, Vec3) {
    (Vec3::z(), -Vec3::z())
}

fn default_steps(scheme: Scheme) -> SolverConfig {
    SolverConfig {
        scheme,
        tau_gamma: 1e-5,
        tau_lambda: 0.7,
        epsilon: 0.01,
        omega: 1.0,
        alpha: 0.0,
        max_iters: 5000,
        record_every: 10,
    }
}

fn antipodal_run(cfg: &SolverConfig) -> Result<IterationTrace, String> {
    let s = unit_sphere();
    let (p, q) = poles();
    let init = init_randomized(p, q, 100, &s, 4.0, INIT_SEED).unwrap();
    run(cfg, &s, init, Some(PI))
        .map(|(_, t)| t)
        .map_err(|e| e.to_string())
}

fn final_abs(trace: &IterationTrace) -> f64 {
    trace.last().unwrap().absolute_error.unwrap()
}

fn criterion_01_sphere_antipodal_reproduction() -> Verdict {
    let trace = antipodal_run(&default_steps(Scheme::BasePdhg)).unwrap();
    let last = trace.last().unwrap();
    let abs = last.absolute_error.unwrap();
    let rel = last.relative_error.unwrap();
    verdict(
        1,
        "sphere antipodal, base scheme, 5000 iterations",
        (0.1..=0.5).contains(&abs) && rel < 0.15,
        format!(
            "absolute error {abs:.4} (want [0.1, 0.5]), relative {:.3}% (want < 15%)",
            rel * 100.0
        ),
    )
}

fn criterion_02_benchmark_trend() -> Verdict {
    let spec = ExperimentSpec {
        surface: SurfaceSpec::Sphere { radius: 1.0 },
        endpoints: Endpoints::AntipodalZ,
        init: InitSpec::Straight,
        solver: default_steps(Scheme::BasePdhg),
        m: 100,
        reference: ReferenceSpec::SphereExact,
        output_dir: std::env::temp_dir(),
        seed: PAIR_SEED,
        jobs: 4,
    };
    let report = run_benchmark(&spec, 10, &[100, 1000, 2000]).unwrap();
    let avg: Vec<f64> = report
        .checkpoints
        .iter()
        .map(|c| c.avg_absolute_error.unwrap_or(f64::NAN))
        .collect();
    let target = [0.169, 0.107, 0.057];
    let within = avg
        .iter()
        .zip(target)
        .all(|(a, t)| *a >= t / 2.0 && *a <= t * 2.0);
    let decreasing = avg.windows(2).all(|w| w[1] < w[0]);
    let no_divergence = report.checkpoints.iter().all(|c| c.diverged == 0);
    verdict(
        2,
        "10-pair sphere benchmark at 100/1000/2000 iterations",
        within && decreasing && no_divergence,
        format!(
            "avg absolute errors {:.4} / {:.4} / {:.4} (targets 0.169 / 0.107 / 0.057 within 2x, strictly decreasing)",
            avg[0], avg[1], avg[2]
        ),
    )
}

fn criterion_03_scheme_ordering() -> Verdict {
    let base = SolverConfig {
        epsilon: 1e-4,
        omega: 1000.0,
        alpha: 1000.0,
        ..default_steps(Scheme::BasePdhg)
    };
    let errs: Vec<f64> = [Scheme::BasePdhg, Scheme::Var1, Scheme::Var2]
        .iter()
        .map(|s| {
            antipodal_run(&SolverConfig { scheme: *s, ..base })
                .map(|t| final_abs(&t))
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let (b, v1, v2) = (errs[0], errs[1], errs[2]);
    verdict(
        3,
        "var2 < var1 < base at eps=1e-4, omega=alpha=1000",
        v2 < v1 && v1 < b && v1 <= 0.02 && v2 <= 0.005,
        format!("base {b:.5}, var1 {v1:.5} (want <= 0.02), var2 {v2:.5} (want <= 0.005)"),
    )
}

fn criterion_04_gda_does_not_converge() -> Verdict {
    let gda = SolverConfig {
        epsilon: 0.0,
        record_every: 1,
        ..default_steps(Scheme::Gda)
    };
    let base = SolverConfig {
        record_every: 1,
        ..default_steps(Scheme::BasePdhg)
    };
    let best = |r: Result<IterationTrace, String>| -> (f64, Option<usize>) {
        match r {
            Ok(t) => {
                let min = t
                    .rows()
                    .iter()
                    .filter_map(|r| r.absolute_error)
                    .fold(f64::INFINITY, f64::min);
                let first = t
                    .rows()
                    .iter()
                    .find(|r| r.absolute_error.unwrap() < 0.5)
                    .map(|r| r.iteration);
                (min, first)
            }
            Err(_) => (f64::INFINITY, None),
        }
    };
    let (gda_min, gda_first) = best(antipodal_run(&gda));
    let (base_min, base_first) = best(antipodal_run(&base));
    verdict(
        4,
        "gda never below 0.5 while base reaches it",
        gda_first.is_none() && base_first.is_some(),
        format!(
            "gda min absolute error {gda_min:.4} (first below 0.5 at {gda_first:?}), base min {base_min:.4} (first below 0.5 at {base_first:?})"
        ),
    )
}

fn criterion_05_regularization_necessity() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let spec = |scheme: Scheme, epsilon: f64| ExperimentSpec {
        surface: SurfaceSpec::Sphere { radius: 1.0 },
        endpoints: Endpoints::AntipodalZ,
        init: InitSpec::Randomized {
            tau_r: 4.0,
            seed: INIT_SEED,
        },
        solver: SolverConfig {
            epsilon,
            ..default_steps(scheme)
        },
        m: 100,
        reference: ReferenceSpec::SphereExact,
        output_dir: dir.path().join(format!("{scheme}")),
        seed: INIT_SEED,
        jobs: 3,
    };
    let values: Vec<String> = ["0.1", "0.7", "1.0"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let unregularized = cmd_sweep(&spec(Scheme::Gda, 0.0), "tau_lambda", &values).unwrap();
    let regularized =
        cmd_sweep(&spec(Scheme::BasePdhg, 0.01), "tau_lambda", &["0.7".into()]).unwrap();
    let flags: Vec<bool> = unregularized.iter().map(|e| e.unstable()).collect();
    let reg = regularized[0].record.as_ref().unwrap();
    let first = reg.trace.first().unwrap();
    let last = reg.trace.last().unwrap();
    let converges = !reg.unstable()
        && last.lambda_residual_norm < first.lambda_residual_norm
        && last.gamma_residual_norm < first.gamma_residual_norm;
    verdict(
        5,
        "eps=0 unstable for tau_lambda in {0.1, 0.7, 1.0}; eps=0.01 converges",
        flags.iter().all(|f| *f) && converges,
        format!(
            "unstable flags {flags:?}; regularized unstable={}, residuals lambda {:.3e} -> {:.3e}, gamma {:.3e} -> {:.3e}",
            reg.unstable(),
            first.lambda_residual_norm,
            last.lambda_residual_norm,
            first.gamma_residual_norm,
            last.gamma_residual_norm
        ),
    )
}

fn criterion_06_planar_ergodic_rate() -> Verdict {
    let tau_gamma = 0.01;
    let problem = PlanarProblem {
        normal: Vec3::z(),
        p: Vec3::zeros(),
        q: Vec3::x(),
        m: 100,
        tau_gamma,
        tau_lambda: 0.5 / tau_gamma,
        epsilon: 0.01,
    };
    let init = perturbed_init(&problem, 0.3, 0).unwrap();
    let out = run_planar(&problem, init, 1 << 14).unwrap();
    let ks: Vec<usize> = out.records.iter().map(|r| r.k).collect();
    let dyadic = ks == (0..=14).map(|j| 1usize << j).collect::<Vec<_>>();
    let slope = out.loglog_slope().unwrap_or(f64::NAN);
    let worst = out
        .records
        .iter()
        .map(|r| r.gap / r.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        6,
        "planar gap below the O(1/k) bound up to k = 2^14",
        dyadic && out.bound_held() && slope <= -0.9 && out.diverged_at.is_none(),
        format!(
            "max gap/bound {worst:.3e}, log-log slope {slope:.3} (want <= -0.9), {} records",
            ks.len()
        ),
    )
}

fn criterion_07_green_function_order() -> Verdict {
    let tau = 0.01;
    let s = 0.3;
    let errors: Vec<f64> = [200usize, 400, 800]
        .iter()
        .map(|&m| {
            let j = (s * m as f64).round() as usize;
            let mut rhs = vec![Vec3::zeros(); m + 1];
            rhs[j] = Vec3::new(m as f64, 0.0, 0.0);
            let x = implicit_gamma_solve(&rhs, tau);
            (0..=m)
                .map(|i| (x[i].x - greens_function(i as f64 / m as f64, s, tau)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    verdict(
        7,
        "impulse response converges to the Green's function at second order",
        orders.iter().all(|o| *o >= 1.8),
        format!("max errors {errors:.3?} at m = 200/400/800, observed orders {orders:.3?}"),
    )
}

fn criterion_08_lyapunov_decay() -> Verdict {
    let s = unit_sphere();
    let (epsilon, alpha_eps, tau) = (1.0, 0.75, 1e-3);
    let cfg = SolverConfig {
        scheme: Scheme::Var2,
        tau_gamma: tau,
        tau_lambda: tau / (1.0 - epsilon * tau),
        epsilon,
        omega: 0.0,
        alpha: alpha_eps / epsilon,
        max_iters: 5000,
        record_every: 10,
    };
    let band = 1.0 / 3.0;
    let report = check_assumption_a(&s, band, 2000, 0).unwrap();
    let init = init_straight_line(Vec3::z(), Vec3::x(), 20).unwrap();
    let max_phi_init = init
        .0
        .points()
        .iter()
        .map(|x| s.eval(x).abs())
        .fold(0.0, f64::max);
    let (state, trace) = run(&cfg, &s, init, None).unwrap();
    let max_phi_final = state
        .curve
        .points()
        .iter()
        .map(|x| s.eval(x).abs())
        .fold(0.0, f64::max);

    let rows = trace.rows();
    let tail = &rows[rows.len() / 2..];
    let js: Vec<f64> = tail.iter().map(|r| r.lyapunov_j.unwrap()).collect();
    let non_increasing = js.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .map(|r| (r.iteration as f64 * tau, r.lyapunov_j.unwrap().ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let rate = -slope;
    verdict(
        8,
        "Lyapunov functional decays at alpha*eps = 0.75 inside the band",
        report.satisfied && max_phi_init <= band && max_phi_final <= band && non_increasing && rate > 0.0,
        format!(
            "band check satisfied={}, max |phi| init {max_phi_init:.3} final {max_phi_final:.2e}, tail non-increasing={non_increasing}, fitted rate {rate:.3} per unit time, J {:.3e} -> {:.3e}",
            report.satisfied,
            rows[0].lyapunov_j.unwrap(),
            rows.last().unwrap().lyapunov_j.unwrap()
        ),
    )
}

fn criterion_09_geodesic_quality() -> Verdict {
    let s = unit_sphere();
    let (p, q) = poles();
    let cfg = SolverConfig {
        scheme: Scheme::Var2,
        tau_gamma: 1.6e-4,
        tau_lambda: 0.7,
        epsilon: 1e-4,
        omega: 0.0,
        alpha: 1000.0,
        max_iters: 40_000,
        record_every: 1000,
    };
    let init = init_randomized(p, q, 50, &s, 4.0, INIT_SEED).unwrap();
    let defect_init = geodesic_defect(&init.0);
    let (state, _) = run(&cfg, &s, init, Some(PI)).unwrap();
    let speeds = speed_profile(&state.curve);
    let ratio = speeds.iter().copied().fold(0.0, f64::max)
        / speeds.iter().copied().fold(f64::INFINITY, f64::min);
    let tangency = tangency_defect(&state.curve, &s).unwrap();
    let defect = geodesic_defect(&state.curve);
    verdict(
        9,
        "converged sphere curve is a constant-speed tangent geodesic",
        ratio <= 1.05 && tangency <= 0.05 && defect * 10.0 <= defect_init,
        format!(
            "speed max/min {ratio:.4}, tangency {tangency:.4}, geodesic defect {defect_init:.3} -> {defect:.4}"
        ),
    )
}

fn criterion_10_band_constants() -> Verdict {
    let sdf =
        check_assumption_a(&LevelSet::sphere_sdf(1.0).unwrap(), 1.0 / 3.0, 10_000, 0).unwrap();
    let quad =
        check_assumption_a(&LevelSet::sphere_quadratic(1.0).unwrap(), 0.25, 10_000, 0).unwrap();
    verdict(
        10,
        "band constants of the two sphere fields",
        (sdf.nu - 1.0).abs() <= 1e-9 && sdf.satisfied && quad.satisfied && quad.nu >= 0.5 - 1e-3,
        format!(
            "sdf nu {:.6} satisfied={}, quadratic nu {:.6} satisfied={}",
            sdf.nu, sdf.satisfied, quad.nu, quad.satisfied
        ),
    )
}

/// Largest surface error over the first tenth of the run against the final one.
fn surface_error_drop(trace: &IterationTrace, iters: usize) -> (f64, f64) {
    let early = trace
        .rows()
        .iter()
        .filter(|r| r.iteration * 10 <= iters)
        .map(|r| r.surface_error)
        .fold(0.0, f64::max);
    (early, trace.last().unwrap().surface_error)
}

fn criterion_11_torus_and_point_cloud() -> Verdict {
    let torus = LevelSet::torus(2.0, 1.0).unwrap();
    let cfg = SolverConfig {
        record_every: 10,
        ..SolverConfig::default()
    };
    let init = init_straight_line(Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0), 100).unwrap();
    let torus_trace = run(&cfg, &torus, init, None).map(|(_, t)| t);
    let (t0, t1) = torus_trace
        .as_ref()
        .map(|t| surface_error_drop(t, cfg.max_iters))
        .unwrap_or((f64::NAN, f64::NAN));

    let mut rng = ChaCha8Rng::seed_from_u64(INIT_SEED);
    let samples: Vec<Vec3> = (0..5000).map(|_| random_unit_vector(&mut rng)).collect();
    let cloud = LevelSet::point_cloud(samples.clone()).unwrap();
    let top = samples
        .iter()
        .copied()
        .fold(samples[0], |a, b| if b.z > a.z { b } else { a });
    let bottom = samples
        .iter()
        .copied()
        .fold(samples[0], |a, b| if b.z < a.z { b } else { a });
    let cloud_cfg = SolverConfig {
        scheme: Scheme::Var1,
        epsilon: 1e-7,
        omega: 1e5,
        max_iters: 100,
        record_every: 1,
        ..SolverConfig::default()
    };
    let init = init_randomized(top, bottom, 100, &cloud, 4.0, INIT_SEED).unwrap();
    let cloud_trace = run(&cloud_cfg, &cloud, init, None).map(|(_, t)| t);
    let (c0, c1) = cloud_trace
        .as_ref()
        .map(|t| surface_error_drop(t, cloud_cfg.max_iters))
        .unwrap_or((f64::NAN, f64::NAN));

    let pass = t1 * 10.0 <= t0 && c1 * 10.0 <= c0;
    verdict(
        11,
        "surface error drops 10x on the torus and a sampled sphere cloud",
        pass,
        format!(
            "torus {t0:.3e} -> {t1:.3e} ({:.1}x){}, cloud {c0:.3e} -> {c1:.3e} ({:.1}x){}",
            t0 / t1,
            torus_trace
                .err()
                .map(|e| format!(" [{e}]"))
                .unwrap_or_default(),
            c0 / c1,
            cloud_trace
                .err()
                .map(|e| format!(" [{e}]"))
                .unwrap_or_default(),
        ),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Verdict); 11] = [
        (1, criterion_01_sphere_antipodal_reproduction),
        (2, criterion_02_benchmark_trend),
        (3, criterion_03_scheme_ordering),
        (4, criterion_04_gda_does_not_converge),
        (5, criterion_05_regularization_necessity),
        (6, criterion_06_planar_ergodic_rate),
        (7, criterion_07_green_function_order),
        (8, criterion_08_lyapunov_decay),
        (9, criterion_09_geodesic_quality),
        (10, criterion_10_band_constants),
        (11, criterion_11_torus_and_point_cloud),
    ];
    let verdicts: Vec<Verdict> = std::thread::scope(|scope| {
        let handles: Vec<_> = criteria.iter().map(|&(n, f)| (n, scope.spawn(f))).collect();
        handles
            .into_iter()
            .map(|(n, h)| {
                h.join().unwrap_or_else(|_| Verdict {
                    pass: false,
                    line: format!("criterion {n}: FAIL panicked"),
                })
            })
            .collect()
    });
    for v in &verdicts {
        println!("{}", v.line);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        verdicts.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
