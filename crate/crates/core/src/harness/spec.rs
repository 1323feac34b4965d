//! Experiment description: a flat key-value config file plus command-line
//! overrides, resolved into a surface, endpoints, initialization and solver
//! settings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::curve::{
    init_randomized, init_straight_line, DiscreteCurve, MultiplierField, DEFAULT_M, DEFAULT_TAU_R,
};
use crate::levelset::{load_point_cloud, LevelSet};
use crate::schemes::{Scheme, SolverConfig};
use crate::Vec3;

use super::HarnessError;

/// Endpoints of an analytic surface must be this close to the zero level set.
pub const ENDPOINT_HARD_TOLERANCE: f64 = 1e-3;

/// Every key accepted in a config file, with the flag that overrides it.
pub const KEYS: &[(&str, &str)] = &[
    ("surface", "--surface"),
    ("points", "--points"),
    ("radius", "--radius"),
    ("normal", "--normal"),
    ("endpoints", "--endpoints"),
    ("p", "--p"),
    ("q", "--q"),
    ("scheme", "--scheme"),
    ("tau_gamma", "--tau-gamma"),
    ("tau_lambda", "--tau-lambda"),
    ("epsilon", "--epsilon"),
    ("omega", "--omega"),
    ("alpha", "--alpha"),
    ("m", "--m"),
    ("iters", "--iters"),
    ("init", "--init"),
    ("tau_r", "--tau-r"),
    ("seed", "--seed"),
    ("reference", "--reference"),
    ("out", "--out"),
    ("jobs", "--jobs"),
    ("record_every", "--record-every"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    Flag(String),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Flag(flag) => write!(f, "flag {flag}"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{location}: {message}")]
pub struct SpecError {
    /// `file:line`, `flag --x`, or the file alone for syntax errors without a
    /// position.
    pub location: String,
    pub message: String,
}

impl SpecError {
    fn at(origin: &Origin, message: impl Into<String>) -> Self {
        SpecError {
            location: origin.to_string(),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> Self {
        SpecError {
            location: "experiment".into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Setting {
    text: String,
    origin: Origin,
}

/// Raw key-value settings with their provenance.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, Setting>,
}

fn key_line(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .map(|rest| rest.trim_start().starts_with('='))
                .unwrap_or(false)
                || l.strip_prefix(&format!("\"{key}\""))
                    .map(|rest| rest.trim_start().starts_with('='))
                    .unwrap_or(false)
        })
        .map(|i| i + 1)
        .unwrap_or(0)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

impl Settings {
    /// Parses a flat TOML document. Tables and unknown keys are errors.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, SpecError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let location = match e.span() {
                Some(span) => format!("{}:{}", path.display(), line_of_offset(text, span.start)),
                None => path.display().to_string(),
            };
            SpecError {
                location,
                message: e.message().to_string(),
            }
        })?;
        let mut values = BTreeMap::new();
        for (key, value) in &table {
            let origin = Origin::File {
                path: path.to_path_buf(),
                line: key_line(text, key),
            };
            if !KEYS.iter().any(|(k, _)| k == key) {
                return Err(SpecError::at(&origin, format!("unknown key '{key}'")));
            }
            let text_value = match value {
                toml::Value::Array(items) => items
                    .iter()
                    .map(|v| toml_scalar(v).ok_or(()))
                    .collect::<Result<Vec<_>, _>>()
                    .map(|v| v.join(","))
                    .map_err(|_| SpecError::at(&origin, format!("'{key}' must be a flat list")))?,
                other => toml_scalar(other).ok_or_else(|| {
                    SpecError::at(&origin, format!("'{key}' must be a scalar or a list"))
                })?,
            };
            values.insert(
                key.clone(),
                Setting {
                    text: text_value,
                    origin,
                },
            );
        }
        Ok(Settings { values })
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_toml_str(&text, path)?)
    }

    /// Overrides `key` with a command-line value; flags win over the file.
    pub fn set_flag(&mut self, key: &str, text: impl Into<String>) {
        let flag = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, f)| f.to_string())
            .unwrap_or_else(|| format!("--{}", key.replace('_', "-")));
        self.values.insert(
            key.to_string(),
            Setting {
                text: text.into(),
                origin: Origin::Flag(flag),
            },
        );
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.text.as_str())
    }

    fn parse<T>(&self, key: &str) -> Result<Option<T>, SpecError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(s) => s.text.trim().parse::<T>().map(Some).map_err(|e| {
                SpecError::at(
                    &s.origin,
                    format!("invalid value '{}' for {key}: {e}", s.text),
                )
            }),
        }
    }

    fn parse_with<T>(
        &self,
        key: &str,
        f: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<Option<T>, SpecError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(s) => f(s.text.trim()).map(Some).map_err(|e| {
                SpecError::at(
                    &s.origin,
                    format!("invalid value '{}' for {key}: {e}", s.text),
                )
            }),
        }
    }

    fn origin(&self, key: &str) -> Option<&Origin> {
        self.values.get(key).map(|s| &s.origin)
    }
}

/// Parses `x,y,z` (brackets and spaces tolerated).
pub fn parse_vec3(text: &str) -> Result<Vec3, String> {
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!(
            "expected three comma-separated numbers, got {}",
            parts.len()
        ));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part.parse::<f64>().map_err(|e| format!("'{part}': {e}"))?;
        if !slot.is_finite() {
            return Err(format!("'{part}' is not finite"));
        }
    }
    Ok(Vec3::from(v))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceSpec {
    Sphere { radius: f64 },
    SphereQuadratic { radius: f64 },
    Torus,
    Plane { normal: Vec3 },
    PointCloud { path: PathBuf },
}

impl SurfaceSpec {
    /// Reads the `surface`, `radius`, `normal` and `points` keys.
    pub fn from_settings(s: &Settings) -> Result<Self, SpecError> {
        let radius = s.parse::<f64>("radius")?.unwrap_or(1.0);
        let surface_name = s
            .text("surface")
            .unwrap_or("sphere")
            .trim()
            .to_ascii_lowercase();
        Ok(match surface_name.as_str() {
            "sphere" | "sphere-sdf" => SurfaceSpec::Sphere { radius },
            "sphere-quadratic" => SurfaceSpec::SphereQuadratic { radius },
            "torus" => SurfaceSpec::Torus,
            "plane" => SurfaceSpec::Plane {
                normal: s.parse_with("normal", parse_vec3)?.unwrap_or_else(Vec3::z),
            },
            "point-cloud" | "cloud" => {
                let path = s.text("points").ok_or_else(|| {
                    let origin = s
                        .origin("surface")
                        .cloned()
                        .unwrap_or(Origin::Flag("--surface".into()));
                    SpecError::at(&origin, "surface point-cloud needs a --points file")
                })?;
                SurfaceSpec::PointCloud {
                    path: PathBuf::from(path.trim()),
                }
            }
            other => {
                let origin = s.origin("surface").expect("surface was given");
                return Err(SpecError::at(
                origin,
                format!("unknown surface '{other}' (expected sphere, sphere-quadratic, torus, plane or point-cloud)"),
            ));
            }
        })
    }

    pub fn load(&self) -> Result<LevelSet, HarnessError> {
        Ok(match self {
            SurfaceSpec::Sphere { radius } => LevelSet::sphere_sdf(*radius)?,
            SurfaceSpec::SphereQuadratic { radius } => LevelSet::sphere_quadratic(*radius)?,
            SurfaceSpec::Torus => {
                LevelSet::torus(crate::levelset::TORUS_MAJOR, crate::levelset::TORUS_MINOR)?
            }
            SurfaceSpec::Plane { normal } => LevelSet::plane(*normal)?,
            SurfaceSpec::PointCloud { path } => load_point_cloud(path)?,
        })
    }

    pub fn sphere_radius(&self) -> Option<f64> {
        match self {
            SurfaceSpec::Sphere { radius } | SurfaceSpec::SphereQuadratic { radius } => {
                Some(*radius)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Endpoints {
    Explicit {
        p: Vec3,
        q: Vec3,
    },
    /// North and south poles of a sphere, or the highest and lowest samples
    /// of a point cloud.
    AntipodalZ,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    Straight,
    Randomized { tau_r: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceSpec {
    None,
    SphereExact,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub surface: SurfaceSpec,
    pub endpoints: Endpoints,
    pub init: InitSpec,
    pub solver: SolverConfig,
    pub m: usize,
    pub reference: ReferenceSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
}

/// An experiment with its surface loaded and endpoints fixed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub surface: LevelSet,
    pub p: Vec3,
    pub q: Vec3,
    pub reference_distance: Option<f64>,
}

/// Great-circle distance between two points of a sphere of radius `r`.
pub fn sphere_geodesic_distance(p: &Vec3, q: &Vec3, radius: f64) -> f64 {
    let c = (p.dot(q) / (radius * radius)).clamp(-1.0, 1.0);
    radius * c.acos()
}

impl ExperimentSpec {
    pub fn from_settings(s: &Settings) -> Result<Self, SpecError> {
        let surface = SurfaceSpec::from_settings(s)?;
        let p = s.parse_with("p", parse_vec3)?;
        let q = s.parse_with("q", parse_vec3)?;
        let endpoints = match (s.text("endpoints").map(str::trim), p, q) {
            (Some("antipodal-z"), None, None) => Endpoints::AntipodalZ,
            (Some("antipodal-z"), _, _) => {
                return Err(SpecError::at(
                    s.origin("endpoints").unwrap(),
                    "endpoints = antipodal-z conflicts with explicit p/q",
                ))
            }
            (Some(other), _, _) if other != "explicit" => {
                return Err(SpecError::at(
                    s.origin("endpoints").unwrap(),
                    format!("unknown endpoints '{other}' (expected antipodal-z, or give p and q)"),
                ))
            }
            (_, Some(p), Some(q)) => Endpoints::Explicit { p, q },
            (_, None, None) => match surface {
                SurfaceSpec::Sphere { .. } | SurfaceSpec::SphereQuadratic { .. } => {
                    Endpoints::AntipodalZ
                }
                _ => {
                    return Err(SpecError::general(
                        "endpoints p and q are required for this surface",
                    ))
                }
            },
            (_, Some(_), None) => {
                return Err(SpecError::at(s.origin("p").unwrap(), "q is missing"))
            }
            (_, None, Some(_)) => {
                return Err(SpecError::at(s.origin("q").unwrap(), "p is missing"))
            }
        };

        let seed = s.parse::<u64>("seed")?.unwrap_or(0);
        let init = match s
            .text("init")
            .map(|t| t.trim().to_ascii_lowercase())
            .as_deref()
        {
            None | Some("randomized") | Some("random") => InitSpec::Randomized {
                tau_r: s.parse::<f64>("tau_r")?.unwrap_or(DEFAULT_TAU_R),
                seed,
            },
            Some("straight") | Some("straight-line") | Some("line") => InitSpec::Straight,
            Some(other) => {
                return Err(SpecError::at(
                    s.origin("init").unwrap(),
                    format!("unknown init '{other}' (expected straight or randomized)"),
                ))
            }
        };
        if let InitSpec::Randomized { tau_r, .. } = init {
            if !(tau_r >= 0.0 && tau_r.is_finite()) {
                return Err(SpecError::at(
                    s.origin("tau_r").unwrap(),
                    "tau_r must be >= 0",
                ));
            }
        }

        let defaults = SolverConfig::default();
        let scheme = s
            .parse_with("scheme", |t| Scheme::from_str(t).map_err(|e| e.to_string()))?
            .unwrap_or(defaults.scheme);
        let solver = SolverConfig {
            scheme,
            tau_gamma: s.parse("tau_gamma")?.unwrap_or(defaults.tau_gamma),
            tau_lambda: s.parse("tau_lambda")?.unwrap_or(defaults.tau_lambda),
            epsilon: s.parse("epsilon")?.unwrap_or(defaults.epsilon),
            omega: s.parse("omega")?.unwrap_or(defaults.omega),
            alpha: s.parse("alpha")?.unwrap_or(defaults.alpha),
            max_iters: s.parse("iters")?.unwrap_or(defaults.max_iters),
            record_every: s.parse("record_every")?.unwrap_or(defaults.record_every),
        };
        if let Err(crate::schemes::ConfigError::Invalid { field, message }) = solver.validate() {
            let key = if field == "max_iters" { "iters" } else { field };
            let err = match s.origin(key).or_else(|| s.origin("scheme")) {
                Some(origin) => SpecError::at(origin, format!("invalid {field}: {message}")),
                None => SpecError::general(format!("invalid {field}: {message}")),
            };
            return Err(err);
        }

        let m = s.parse::<usize>("m")?.unwrap_or(DEFAULT_M);
        if m < 2 {
            return Err(SpecError::at(s.origin("m").unwrap(), "m must be >= 2"));
        }

        let reference = match s.text("reference").map(|t| t.trim().to_ascii_lowercase()) {
            None => {
                if surface.sphere_radius().is_some() {
                    ReferenceSpec::SphereExact
                } else {
                    ReferenceSpec::None
                }
            }
            Some(t) if t == "none" => ReferenceSpec::None,
            Some(t) if t == "sphere-exact" => {
                if surface.sphere_radius().is_none() {
                    return Err(SpecError::at(
                        s.origin("reference").unwrap(),
                        "sphere-exact needs a sphere surface",
                    ));
                }
                ReferenceSpec::SphereExact
            }
            Some(_) => {
                let d: f64 = s.parse("reference")?.unwrap();
                if !(d > 0.0 && d.is_finite()) {
                    return Err(SpecError::at(
                        s.origin("reference").unwrap(),
                        "reference distance must be > 0",
                    ));
                }
                ReferenceSpec::Value(d)
            }
        };

        let jobs = s.parse::<usize>("jobs")?.unwrap_or(1);
        if jobs == 0 {
            return Err(SpecError::at(
                s.origin("jobs").unwrap(),
                "jobs must be >= 1",
            ));
        }
        let output_dir = PathBuf::from(s.text("out").unwrap_or("out").trim());

        Ok(ExperimentSpec {
            surface,
            endpoints,
            init,
            solver,
            m,
            reference,
            output_dir,
            seed,
            jobs,
        })
    }

    /// Loads the surface, fixes the endpoints and checks them against it.
    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        let surface = self.surface.load()?;
        let (p, q) = match &self.endpoints {
            Endpoints::Explicit { p, q } => (*p, *q),
            Endpoints::AntipodalZ => match (&self.surface, &surface) {
                (_, LevelSet::PointCloud(pc)) => {
                    let pts = pc.points();
                    let hi = pts
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, x)| if x.z > pts[b].z { i } else { b });
                    let lo = pts
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, x)| if x.z < pts[b].z { i } else { b });
                    (pts[hi], pts[lo])
                }
                (spec, _) => match spec.sphere_radius() {
                    Some(r) => (Vec3::new(0.0, 0.0, r), Vec3::new(0.0, 0.0, -r)),
                    None => {
                        return Err(SpecError::general(
                            "endpoints antipodal-z needs a sphere or a point cloud",
                        )
                        .into())
                    }
                },
            },
        };
        for (name, x) in [("p", p), ("q", q)] {
            let off = surface.eval(&x).abs();
            if off > ENDPOINT_HARD_TOLERANCE {
                if surface.is_analytic() {
                    return Err(SpecError::general(format!(
                        "endpoint {name} = {x:?} is {off:.3e} away from the surface (limit {ENDPOINT_HARD_TOLERANCE:e})"
                    ))
                    .into());
                }
                log::warn!("endpoint {name} is {off:.3e} away from the nearest cloud sample");
            }
        }
        let reference_distance = match self.reference {
            ReferenceSpec::None => None,
            ReferenceSpec::Value(d) => Some(d),
            ReferenceSpec::SphereExact => {
                let r = self.surface.sphere_radius().expect("checked when parsing");
                let d = sphere_geodesic_distance(&p, &q, r);
                if d > 0.0 {
                    Some(d)
                } else {
                    None
                }
            }
        };
        Ok(Resolved {
            surface,
            p,
            q,
            reference_distance,
        })
    }

    pub fn initial_state(
        &self,
        resolved: &Resolved,
    ) -> Result<(DiscreteCurve, MultiplierField), HarnessError> {
        Ok(match self.init {
            InitSpec::Straight => init_straight_line(resolved.p, resolved.q, self.m)?,
            InitSpec::Randomized { tau_r, seed } => init_randomized(
                resolved.p,
                resolved.q,
                self.m,
                &resolved.surface,
                tau_r,
                seed,
            )?,
        })
    }
}
