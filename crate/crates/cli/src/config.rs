//! Flat key-value experiment configuration: one `key = value` per line,
//! `#` comments, no nesting. Unknown or duplicate keys are errors that name
//! the offending key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use coarse_forge_core::models::CoarseMap;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Exactness,
    GapCheck,
    PoincareCheck,
    PoissonCheck,
    ErrorVsBound,
    Scaling,
    Stationarity,
    GrowthInT,
    RandomClockCompare,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> CliResult<Self> {
        Ok(match s {
            "exactness" => Self::Exactness,
            "gap-check" => Self::GapCheck,
            "poincare-check" => Self::PoincareCheck,
            "poisson-check" => Self::PoissonCheck,
            "error-vs-bound" => Self::ErrorVsBound,
            "scaling" => Self::Scaling,
            "stationarity" => Self::Stationarity,
            "growth-in-T" => Self::GrowthInT,
            "random-clock-compare" => Self::RandomClockCompare,
            other => {
                return Err(CliError::Config(format!(
                    "key 'experiment': unknown experiment '{other}'"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exactness => "exactness",
            Self::GapCheck => "gap-check",
            Self::PoincareCheck => "poincare-check",
            Self::PoissonCheck => "poisson-check",
            Self::ErrorVsBound => "error-vs-bound",
            Self::Scaling => "scaling",
            Self::Stationarity => "stationarity",
            Self::GrowthInT => "growth-in-T",
            Self::RandomClockCompare => "random-clock-compare",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapSpec {
    FirstCoordinate,
    Coordinate(usize),
    Affine { t_rows: Vec<Vec<f64>>, tau: Vec<f64> },
}

impl MapSpec {
    pub fn build(&self, dim: usize) -> CliResult<CoarseMap> {
        match self {
            MapSpec::FirstCoordinate => Ok(CoarseMap::first_coordinate(dim)),
            MapSpec::Coordinate(i) => {
                if *i >= dim {
                    return Err(CliError::Config(format!(
                        "key 'coord_index': index {i} out of range for dimension {dim}"
                    )));
                }
                Ok(CoarseMap::coordinate(dim, *i))
            }
            MapSpec::Affine { t_rows, tau } => {
                if t_rows.iter().any(|r| r.len() != dim) {
                    return Err(CliError::Config(format!(
                        "key 'map_t': every row must have {dim} entries"
                    )));
                }
                CoarseMap::from_rows(t_rows, tau.clone())
                    .map_err(|e| CliError::Config(format!("key 'map_t': {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectiveChoice {
    Analytic,
    Estimated,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model_spec: String,
    pub map: MapSpec,
    pub effective: EffectiveChoice,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub bins: usize,
    pub samples: usize,
    pub grid_r_sd: f64,
    pub grid_nodes: usize,
    pub epsilon_list: Vec<f64>,
    pub horizon_list: Vec<f64>,
    /// Number of leading paths whose (xi(X_t), Z_t) traces are exported.
    pub export_paths: usize,
    pub out_dir: PathBuf,
}

fn parse_kv(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Config(format!("key '{key}': duplicated")));
        }
    }
    Ok(map)
}

struct Keys {
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl Keys {
    fn get(&self, key: &str) -> Option<&str> {
        if self.map.contains_key(key) {
            self.used.borrow_mut().insert(key.to_string());
        }
        self.map.get(key).map(|s| s.as_str())
    }

    fn f64_or(&self, key: &str, default: f64) -> CliResult<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("key '{key}': bad float '{v}'"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> CliResult<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("key '{key}': bad integer '{v}'"))),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> CliResult<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("key '{key}': bad integer '{v}'"))),
        }
    }

    fn f64_list_or(&self, key: &str, default: &[f64]) -> CliResult<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Config(format!("key '{key}': bad float '{s}'")))
                })
                .collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read '{}': {e}", path.display())))?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> CliResult<Self> {
        let keys = Keys { map: parse_kv(text)?, used: Default::default() };

        let experiment = ExperimentKind::parse(
            keys.get("experiment")
                .ok_or_else(|| CliError::Config("key 'experiment': missing".into()))?,
        )?;
        let model_spec = keys
            .get("model")
            .ok_or_else(|| CliError::Config("key 'model': missing".into()))?
            .to_string();

        let map = match keys.get("map") {
            None | Some("x1") => MapSpec::FirstCoordinate,
            Some("coordinate") => {
                MapSpec::Coordinate(keys.usize_or("coord_index", 0)?)
            }
            Some("affine") => {
                let t_raw = keys
                    .get("map_t")
                    .ok_or_else(|| CliError::Config("key 'map_t': required for affine map".into()))?;
                let t_rows: Vec<Vec<f64>> = t_raw
                    .split(';')
                    .map(|row| {
                        row.split(',')
                            .map(|s| {
                                s.trim().parse::<f64>().map_err(|_| {
                                    CliError::Config(format!("key 'map_t': bad float '{s}'"))
                                })
                            })
                            .collect()
                    })
                    .collect::<CliResult<_>>()?;
                let tau = keys.f64_list_or("map_tau", &vec![0.0; t_rows.len()])?;
                MapSpec::Affine { t_rows, tau }
            }
            Some(other) => {
                return Err(CliError::Config(format!(
                    "key 'map': expected x1 | coordinate | affine, got '{other}'"
                )))
            }
        };

        let effective = match keys.get("effective") {
            None | Some("analytic") => EffectiveChoice::Analytic,
            Some("estimated") => EffectiveChoice::Estimated,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "key 'effective': expected analytic | estimated, got '{other}'"
                )))
            }
        };

        let cfg = ExperimentConfig {
            experiment,
            model_spec,
            map,
            effective,
            dt: keys.f64_or("dt", 1e-3)?,
            horizon: keys.f64_or("T", 1.0)?,
            n_paths: keys.usize_or("n_paths", 1000)?,
            seed: keys.u64_or("seed", 0)?,
            bins: keys.usize_or("bins", 50)?,
            samples: keys.usize_or("samples", 1_000_000)?,
            grid_r_sd: keys.f64_or("grid_r_sd", 5.0)?,
            grid_nodes: keys.usize_or("grid_nodes", 2001)?,
            epsilon_list: keys.f64_list_or("epsilon_list", &[0.2, 0.1, 0.05, 0.025])?,
            horizon_list: keys.f64_list_or("T_list", &[1.0, 2.0, 4.0])?,
            export_paths: keys.usize_or("export_paths", 0)?,
            out_dir: PathBuf::from(keys.get("out").unwrap_or("out")),
        };

        for key in keys.map.keys() {
            if !keys.used.borrow().contains(key) {
                return Err(CliError::Config(format!("key '{key}': unknown")));
            }
        }

        for (name, v) in [("dt", cfg.dt), ("T", cfg.horizon), ("grid_r_sd", cfg.grid_r_sd)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::Config(format!("key '{name}': must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("n_paths", cfg.n_paths),
            ("bins", cfg.bins),
            ("samples", cfg.samples),
            ("grid_nodes", cfg.grid_nodes),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("key '{name}': must be positive")));
            }
        }
        if cfg.epsilon_list.iter().any(|&e| !(e > 0.0)) {
            return Err(CliError::Config("key 'epsilon_list': entries must be positive".into()));
        }
        if cfg.horizon_list.iter().any(|&t| !(t > 0.0)) {
            return Err(CliError::Config("key 'T_list': entries must be positive".into()));
        }
        Ok(cfg)
    }
}
