//! JSON run configuration. Every section is optional and falls back to its defaults;
//! unknown keys are rejected with their dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Formulation, SimConfig, State};
use crate::elliptic::EllipticSettings;
use crate::grid::Grid;
use crate::initial::InitialData;
use crate::picard::PicardConfig;
use crate::viscosity::ViscosityLaw;
use crate::{Error, Result};

/// Failure to obtain a usable configuration, split by cause for distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON in {path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("schema error at `{key}`: {message}")]
    Schema { key: String, message: String },
    #[error(transparent)]
    Invalid(#[from] Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 64, length: 2.0 * std::f64::consts::PI }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawName {
    PowerLaw,
    Constant,
}

/// `f(rho) = a rho^alpha + b` or `f = c`; `rho_star` defaults to `0.9 min rho0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViscosityConfig {
    pub law: LawName,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub c: f64,
    pub rho_star: Option<f64>,
}

impl Default for ViscosityConfig {
    fn default() -> Self {
        Self { law: LawName::PowerLaw, a: 1.0, b: 0.0, alpha: 1.0, c: 0.0, rho_star: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipticConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        let d = EllipticSettings::default();
        Self { tol: d.tol, max_iter: d.max_iter }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationName {
    Original,
    Reduced,
    Elsasser,
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub formulation: FormulationName,
    /// Only read for the regularized formulation.
    pub epsilon: f64,
    /// Fixed step; `null` selects CFL-driven steps.
    pub dt: Option<f64>,
    pub cfl: f64,
    pub t_end: f64,
    pub integrating_factor: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            formulation: FormulationName::Reduced,
            epsilon: 0.01,
            dt: d.dt,
            cfl: d.cfl,
            t_end: d.t_end,
            integrating_factor: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub epsilon: f64,
    pub t_end: f64,
    pub n_max: usize,
    pub tol: f64,
    pub dt: f64,
}

impl Default for PicardSection {
    fn default() -> Self {
        let d = PicardConfig::default();
        Self { epsilon: d.epsilon, t_end: d.t_end, n_max: d.n_max, tol: d.tol, dt: d.dt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Diagnostics row every `diag_every` steps (and at the end).
    pub diag_every: usize,
    /// Snapshot every `snapshot_every` diagnostics rows; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), diag_every: 10, snapshot_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub deltas: Vec<f64>,
    pub max_constant: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { deltas: vec![1e-3, 5e-4, 2.5e-4], max_constant: 1e4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsSweepConfig {
    pub epsilons: Vec<f64>,
    pub dt: f64,
    pub t_end: f64,
}

impl Default for EpsSweepConfig {
    fn default() -> Self {
        Self { epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4], dt: 5e-4, t_end: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub viscosity: ViscosityConfig,
    pub elliptic: EllipticConfig,
    pub dynamics: DynamicsConfig,
    pub picard: PicardSection,
    pub initial: InitialData,
    pub output: OutputConfig,
    pub seed: u64,
    pub stability: StabilityConfig,
    pub eps_sweep: EpsSweepConfig,
}

/// Parses JSON text, reporting unknown or mistyped keys by dotted path.
pub fn parse_config_str(text: &str, origin: &Path) -> std::result::Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            ConfigError::Syntax { path: origin.to_path_buf(), message: inner.to_string() }
        } else {
            ConfigError::Schema { key, message: inner.to_string() }
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> std::result::Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    parse_config_str(&text, path)
}

impl RunConfig {
    /// Checks every section before any compute starts.
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.initial.validate()?;
        let law = self.law()?;
        let rho_min = self.initial.density(&self.grid()?).min();
        if rho_min < law.rho_star() {
            return Err(Error::InvalidConfig(format!(
                "viscosity.rho_star = {} exceeds the initial minimum density {rho_min}",
                law.rho_star()
            )));
        }
        self.elliptic_settings().validate()?;
        self.sim_config().validate()?;
        self.picard_config().validate()?;
        if self.output.diag_every == 0 {
            return Err(Error::InvalidConfig("output.diag_every must be >= 1".into()));
        }
        if self.stability.deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidConfig("stability.deltas must be positive".into()));
        }
        if !(self.stability.max_constant >= 1.0) {
            return Err(Error::InvalidConfig("stability.max_constant must be >= 1".into()));
        }
        let sweep = &self.eps_sweep;
        if sweep.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(Error::InvalidConfig("eps_sweep.epsilons must lie in (0, 1]".into()));
        }
        if !(sweep.dt > 0.0 && sweep.t_end >= 0.0) {
            return Err(Error::InvalidConfig("eps_sweep needs dt > 0 and t_end >= 0".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.grid.length)
    }

    pub fn elliptic_settings(&self) -> EllipticSettings {
        EllipticSettings { tol: self.elliptic.tol, max_iter: self.elliptic.max_iter }
    }

    /// Initial state from the `initial` section and the seed.
    pub fn initial_state(&self) -> Result<State> {
        let g = self.grid()?;
        State::new(self.initial.density(&g), self.initial.velocity(&g, self.seed), 0.0)
    }

    pub fn law(&self) -> Result<ViscosityLaw> {
        let v = &self.viscosity;
        let rho_star = match v.rho_star {
            Some(r) => r,
            None => 0.9 * self.initial.density(&self.grid()?).min(),
        };
        let law = match v.law {
            LawName::PowerLaw => ViscosityLaw::power_law(v.a, v.b, v.alpha, rho_star)?,
            LawName::Constant => ViscosityLaw::constant(v.c, rho_star)?,
        };
        law.validate_range(self.initial.density(&self.grid()?).max())?;
        Ok(law)
    }

    pub fn formulation(&self) -> Formulation {
        match self.dynamics.formulation {
            FormulationName::Original => Formulation::Original,
            FormulationName::Reduced => Formulation::Reduced,
            FormulationName::Elsasser => Formulation::Elsasser,
            FormulationName::Regularized => Formulation::Regularized { epsilon: self.dynamics.epsilon },
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let d = &self.dynamics;
        SimConfig {
            formulation: self.formulation(),
            dt: d.dt,
            cfl: d.cfl,
            t_end: d.t_end,
            integrating_factor: d.integrating_factor,
            output_every: self.output.diag_every.max(1),
            elliptic: self.elliptic_settings(),
        }
    }

    pub fn picard_config(&self) -> PicardConfig {
        let p = &self.picard;
        PicardConfig {
            epsilon: p.epsilon,
            t_end: p.t_end,
            n_max: p.n_max,
            tol: p.tol,
            dt: p.dt,
            elliptic: self.elliptic_settings(),
        }
    }
}
