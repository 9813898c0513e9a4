use std::fmt;
use std::path::{Path, PathBuf};

use isaacs_lab::model::{builtin_models, risk_sensitive, RiskSensitiveParams};
use isaacs_lab::{Model, Side};
use serde::{Deserialize, Serialize};

/// A rejected configuration, pointing at the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error in `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pde,
    PdeTransform,
    RbsdeChain,
    Penalized,
    Dynkin,
    RiskSensitiveMc,
    Crosscheck,
    ApproxChain,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Pde,
        Method::PdeTransform,
        Method::RbsdeChain,
        Method::Penalized,
        Method::Dynkin,
        Method::RiskSensitiveMc,
        Method::Crosscheck,
        Method::ApproxChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pde => "pde",
            Method::PdeTransform => "pde-transform",
            Method::RbsdeChain => "rbsde-chain",
            Method::Penalized => "penalized",
            Method::Dynkin => "dynkin",
            Method::RiskSensitiveMc => "risk-sensitive-mc",
            Method::Crosscheck => "crosscheck",
            Method::ApproxChain => "approx-chain",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| ConfigError::new("method", format!("unknown method `{name}`")))
    }
}

/// A built-in model by name, or risk-sensitive coefficients given inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Named(String),
    Inline { risk_sensitive: RiskSensitiveParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Defaults to the model's domain.
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub nx: usize,
    /// Fixed number of time steps; `None` picks the CFL step count.
    pub nt: Option<usize>,
    /// With a fixed `nt`, raise it to the CFL count instead of failing.
    pub auto_cfl: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_min: None,
            x_max: None,
            nx: 100,
            nt: None,
            auto_cfl: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub alpha_points: usize,
    pub beta_points: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideChoice {
    #[default]
    Lower,
    Upper,
    Both,
}

impl SideChoice {
    pub fn sides(self) -> &'static [Side] {
        match self {
            SideChoice::Lower => &[Side::Lower],
            SideChoice::Upper => &[Side::Upper],
            SideChoice::Both => &[Side::Lower, Side::Upper],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Nx,
    Controls,
    Penalty,
    P,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        match name {
            "nx" => Ok(SweepAxis::Nx),
            "controls" => Ok(SweepAxis::Controls),
            "penalty" => Ok(SweepAxis::Penalty),
            "p" => Ok(SweepAxis::P),
            _ => Err(ConfigError::new("sweep.axis", format!("unknown axis `{name}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Nx => "nx",
            SweepAxis::Controls => "controls",
            SweepAxis::Penalty => "penalty",
            SweepAxis::P => "p",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// One experiment, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridConfig,
    /// Refines both control grids to uniform point counts.
    #[serde(default)]
    pub controls: Option<ControlConfig>,
    #[serde(default)]
    pub side: SideChoice,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Penalty `λ` of the penalized method.
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    /// Largest approximation index of the approx-chain method.
    #[serde(default = "default_p_max")]
    pub p_max: usize,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_paths() -> usize {
    10_000
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_penalty() -> f64 {
    1000.0
}

fn default_p_max() -> usize {
    13
}

impl ExperimentConfig {
    /// Minimal config for `method` on a built-in model.
    pub fn new(model: &str, method: Method) -> Self {
        Self {
            model: ModelSpec::Named(model.into()),
            grid: GridConfig::default(),
            controls: None,
            side: SideChoice::default(),
            method,
            seed: 0,
            n_paths: default_paths(),
            output_dir: default_output(),
            penalty: default_penalty(),
            p_max: default_p_max(),
            sweep: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError::new("<document>", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = self.model()?;
        if model.state_dim != 1 {
            return Err(ConfigError::new("model", "only one-dimensional models are supported"));
        }
        let g = &self.grid;
        if g.nx < 4 {
            return Err(ConfigError::new("grid.nx", format!("need at least 4 intervals, got {}", g.nx)));
        }
        if g.nt == Some(0) {
            return Err(ConfigError::new("grid.nt", "must be positive"));
        }
        let (lo, hi) = self.domain(&model);
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ConfigError::new("grid", format!("x_min = {lo} must be below x_max = {hi}")));
        }
        if let Some(c) = self.controls {
            if c.alpha_points == 0 || c.beta_points == 0 {
                return Err(ConfigError::new("controls", "point counts must be positive"));
            }
        }
        if self.n_paths < 2 {
            return Err(ConfigError::new("n_paths", "need at least 2 paths"));
        }
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(ConfigError::new("penalty", format!("must be finite and nonnegative, got {}", self.penalty)));
        }
        if !(2..=30).contains(&self.p_max) {
            return Err(ConfigError::new("p_max", format!("must lie in 2..=30, got {}", self.p_max)));
        }
        if matches!(self.method, Method::RiskSensitiveMc) && !model.is_risk_sensitive() {
            return Err(ConfigError::new("method", "risk-sensitive-mc needs a model with a running cost"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(ConfigError::new("sweep.values", "empty"));
            }
            if s.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ConfigError::new("sweep.values", "values must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// The model with control refinement applied.
    pub fn model(&self) -> Result<Model, ConfigError> {
        let mut model = match &self.model {
            ModelSpec::Named(name) => builtin_models::<f64>()
                .get(name)
                .cloned()
                .map_err(|e| ConfigError::new("model", e))?,
            ModelSpec::Inline { risk_sensitive: p } => risk_sensitive(p.clone()),
        };
        if let Some(c) = self.controls {
            model = model.with_control_points(c.alpha_points, c.beta_points);
        }
        let (lo, hi) = self.domain(&model);
        model.domain = vec![(lo, hi)];
        if !(lo..=hi).contains(&model.x0[0]) {
            model.x0 = vec![(lo + hi) / 2.0];
        }
        Ok(model)
    }

    fn domain(&self, model: &Model) -> (f64, f64) {
        let (lo, hi) = model.domain[0];
        (self.grid.x_min.unwrap_or(lo), self.grid.x_max.unwrap_or(hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let c = ExperimentConfig::from_json(r#"{"model": "heat_no_control", "method": "pde"}"#).unwrap();
        assert_eq!(c.grid.nx, 100);
        assert_eq!(c.side, SideChoice::Lower);
    }

    #[test]
    fn inline_model() {
        let c = ExperimentConfig::from_json(
            r#"{"model": {"risk_sensitive": {"name": "mine", "phi_const": 0.1}}, "method": "crosscheck", "grid": {"nx": 40}}"#,
        )
        .unwrap();
        assert_eq!(c.model().unwrap().name, "mine");
    }

    #[test]
    fn field_level_errors() {
        let e = ExperimentConfig::from_json(r#"{"model": "nope", "method": "pde"}"#).unwrap_err();
        assert_eq!(e.field, "model");
        let e = ExperimentConfig::from_json(r#"{"model": "heat_no_control", "method": "pde", "grid": {"nx": 2}}"#).unwrap_err();
        assert_eq!(e.field, "grid.nx");
        let e = ExperimentConfig::from_json(r#"{"model": "heat_no_control", "method": "fourier"}"#).unwrap_err();
        assert!(e.message.contains("fourier"));
        let e = ExperimentConfig::from_json(r#"{"model": "heat_no_control", "method": "risk-sensitive-mc"}"#).unwrap_err();
        assert_eq!(e.field, "method");
    }
}
