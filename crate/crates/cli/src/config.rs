//! Run configuration: TOML (or JSON) with every table closed to unknown keys.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use hyperperiodic::builtins::{self, EulerParams};
use hyperperiodic::{BoundarySpec, Harmonic, Harmonics, Signal, SystemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default = "one")]
    pub length: f64,
    /// Radius of the admissible ball around the origin.
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub period: f64,
    /// One entry per component, in component order. Amplitudes are
    /// multiplied by the experiment's ε.
    pub forcing: Vec<ForcingConfig>,
    /// Reflection gain `k` of the two-family builtins.
    pub gain: Option<f64>,
    /// Quadratic boundary term of the two-family builtins.
    pub quadratic: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    #[serde(default)]
    pub harmonics: Vec<HarmonicConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicConfig {
    pub amplitude: f64,
    #[serde(default = "first_harmonic")]
    pub harmonic: u32,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nt: usize,
    pub nx: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nt: 128, nx: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Splitting constant; defaults to `K_min + 1e-6`.
    pub k: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Rescale time when `μ_max > 1`; without it such systems fail validation.
    #[serde(default = "yes")]
    pub rescale: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { k: None, tol: default_tol(), max_iter: default_max_iter(), rescale: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Validate,
    Periodic,
    Stability,
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    #[serde(default = "default_epsilon")]
    pub epsilon: Vec<f64>,
    /// Bump amplitude as a multiple of ε.
    #[serde(default = "half")]
    pub perturbation: f64,
    /// End time of the forward run; defaults to `6·T₀`.
    pub t_end: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { mode: None, epsilon: default_epsilon(), perturbation: half(), t_end: None, cfl: default_cfl() }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}
fn first_harmonic() -> u32 {
    1
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    200
}
fn default_epsilon() -> Vec<f64> {
    vec![0.01]
}
fn default_cfl() -> f64 {
    hyperperiodic::ivp::DEFAULT_CFL
}

/// A configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

impl RunConfig {
    /// TOML, or JSON when the extension is `.json`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let amps = self.boundary.forcing.iter().flat_map(|f| &f.harmonics).map(|h| h.amplitude);
        if amps.chain(self.experiment.epsilon.iter().copied()).any(|a| !(a >= 0.0 && a.is_finite())) {
            return bad("amplitudes and ε values must be finite and nonnegative");
        }
        if !(self.experiment.perturbation >= 0.0) {
            return bad("perturbation must be nonnegative");
        }
        if self.experiment.epsilon.is_empty() {
            return bad("experiment.epsilon must list at least one value");
        }
        if self.grid.nt < 8 || self.grid.nx < 8 {
            return bad("grid sizes must be at least 8");
        }
        if !(self.boundary.period > 0.0) || !(self.system.length > 0.0) {
            return bad("period and length must be positive");
        }
        self.builtin()?;
        Ok(())
    }

    fn builtin(&self) -> Result<Builtin, ConfigError> {
        let params = &self.system.params;
        let allow = |keys: &[&str]| -> Result<(), ConfigError> {
            match params.keys().find(|k| !keys.contains(&k.as_str())) {
                Some(k) => bad(format!("unknown parameter `{k}` for system `{}`", self.system.name)),
                None => Ok(()),
            }
        };
        let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
        let b = match self.system.name.as_str() {
            "linear_damped_scalar" => {
                allow(&["speed", "damping"])?;
                if self.boundary.gain.is_some() || self.boundary.quadratic.is_some() {
                    return bad("linear_damped_scalar has Dirichlet inflow data; gain/quadratic do not apply");
                }
                Builtin::Scalar { speed: get("speed", 1.0), damping: get("damping", 0.5) }
            }
            "linear_reflect_2x2" => {
                allow(&["speed"])?;
                Builtin::Reflect { speed: get("speed", 1.0) }
            }
            "quasilinear_euler_damping" => {
                allow(&["gamma", "damping", "sound_speed"])?;
                let d = EulerParams::default();
                Builtin::Euler(EulerParams {
                    gamma: get("gamma", d.gamma),
                    damping: get("damping", d.damping),
                    sound_speed: get("sound_speed", d.sound_speed),
                })
            }
            other => return bad(format!("unknown builtin system `{other}`")),
        };
        let n = if matches!(b, Builtin::Scalar { .. }) { 1 } else { 2 };
        if self.boundary.forcing.len() != n {
            return bad(format!("{} needs {n} forcing entries, got {}", self.system.name, self.boundary.forcing.len()));
        }
        Ok(b)
    }

    /// The system and boundary data at amplitude `epsilon`.
    pub fn build(&self, epsilon: f64) -> Result<(SystemSpec, BoundarySpec), BuildError> {
        let len = self.system.length;
        let period = self.boundary.period;
        let signals: Vec<Arc<dyn Signal>> = self
            .boundary
            .forcing
            .iter()
            .map(|f| {
                Arc::new(Harmonics {
                    period,
                    terms: f
                        .harmonics
                        .iter()
                        .map(|h| Harmonic { amplitude: epsilon * h.amplitude, harmonic: h.harmonic, phase: h.phase })
                        .collect(),
                }) as Arc<dyn Signal>
            })
            .collect();
        let gain = self.boundary.gain.unwrap_or(0.5);
        let quad = self.boundary.quadratic.unwrap_or(0.0);
        let built = match self.builtin().map_err(BuildError::Config)? {
            Builtin::Scalar { speed, damping } => {
                let spec = builtins::linear_damped_scalar(speed, damping, len, self.system.radius.unwrap_or(0.5))?;
                let b = builtins::scalar_inflow(&spec, signals[0].clone(), period)?;
                (spec, b)
            }
            Builtin::Reflect { speed } => (
                builtins::linear_reflect(speed, len, self.system.radius.unwrap_or(0.5))?,
                builtins::reflecting_boundary(gain, quad, signals[0].clone(), signals[1].clone(), period)?,
            ),
            Builtin::Euler(p) => (
                builtins::quasilinear_euler(p, len, self.system.radius.unwrap_or(0.3))?,
                builtins::reflecting_boundary(gain, quad, signals[0].clone(), signals[1].clone(), period)?,
            ),
        };
        Ok(built)
    }
}

#[derive(Clone, Copy, Debug)]
enum Builtin {
    Scalar { speed: f64, damping: f64 },
    Reflect { speed: f64 },
    Euler(EulerParams),
}

#[derive(Debug)]
pub enum BuildError {
    Config(ConfigError),
    Model(hyperperiodic::Error),
}

impl From<hyperperiodic::Error> for BuildError {
    fn from(e: hyperperiodic::Error) -> Self {
        BuildError::Model(e)
    }
}
