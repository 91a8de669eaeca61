//! Run configuration: a JSON document with `design`, `hyper`, `plan` and
//! `bounds` sections, flat CLI overrides on top, and run manifests.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::error::EioError;
use crate::experiments::{default_lambda_grid, default_mu_grid, default_tau_grid, SweepPlan};
use crate::model::{power_decay_theta, validate_spec, DesignSpec, Hyperparams, Mu, ValidatedSpec};
use crate::theory::BoundConfig;

pub const OUT_DIR_ENV: &str = "EIO_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

impl From<EioError> for ConfigError {
    fn from(e: EioError) -> Self {
        match e {
            EioError::InvalidParameter { name, reason } => ConfigError::Validation {
                field: name.to_string(),
                reason,
            },
            other => ConfigError::Validation {
                field: "design".into(),
                reason: other.to_string(),
            },
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    }
}

// `mu` is a positive number or the string "inf".
impl Serialize for Mu {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Mu::Finite(v) => s.serialize_f64(*v),
            Mu::Infinite => s.serialize_str("inf"),
        }
    }
}

struct MuVisitor;

impl Visitor<'_> for MuVisitor {
    type Value = Mu;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a positive number or \"inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Mu, E> {
        Ok(Mu::from(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Mu, E> {
        Ok(Mu::Finite(v as f64))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Mu, E> {
        Ok(Mu::Finite(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Mu, E> {
        parse_mu(v).map_err(E::custom)
    }
}

impl<'de> Deserialize<'de> for Mu {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Mu, D::Error> {
        d.deserialize_any(MuVisitor)
    }
}

/// Parses `inf` (any case, optional `+`) or a float.
pub fn parse_mu(s: &str) -> Result<Mu, String> {
    let t = s.trim().trim_start_matches('+');
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
        return Ok(Mu::Infinite);
    }
    t.parse::<f64>()
        .map(Mu::from)
        .map_err(|_| format!("expected a number or \"inf\", got {s:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKindConfig {
    Sine,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: DesignKindConfig,
    pub dim: usize,
    pub noise_std: f64,
    /// `theta_k = k^{-theta_decay}`.
    pub theta_decay: f64,
    /// Gaussian design only; `None` means `Sigma = I`.
    pub spectrum: Option<Vec<f64>>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            kind: DesignKindConfig::Sine,
            dim: 50,
            noise_std: 0.09,
            theta_decay: 3.0,
            spectrum: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub mu: Mu,
    pub lambda: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        HyperConfig {
            mu: h.mu,
            lambda: h.lambda,
            tau: h.tau,
            max_iter: h.max_iter,
            tol: h.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Sample size for single-`n` commands (`fit`, `grid-search`).
    pub n: usize,
    /// `None` selects the command's own default sweep.
    pub n_grid: Option<Vec<usize>>,
    pub lambda_grid: Vec<f64>,
    pub mu_grid: Vec<Mu>,
    pub tau_grid: Vec<f64>,
    pub replicates: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            n: 200,
            n_grid: None,
            lambda_grid: default_lambda_grid(),
            mu_grid: default_mu_grid().into_iter().map(Mu::Finite).collect(),
            tau_grid: default_tau_grid(),
            replicates: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub c_x: f64,
    /// `None` uses the design's noise level.
    pub sigma_psi1: Option<f64>,
    pub delta: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            c_x: 1.0,
            sigma_psi1: None,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub design: DesignConfig,
    pub hyper: HyperConfig,
    pub plan: PlanConfig,
    pub bounds: BoundsConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
}

/// Flat command-line overrides; `None` leaves the file value alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub full_scale: bool,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub mu: Option<Mu>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub replicates: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = if text.trim().is_empty() {
            RunConfig::default()
        } else {
            serde_json::from_str(text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies overrides; `full_scale` goes first so explicit flags win.
    pub fn apply(&mut self, o: &Overrides) {
        if o.full_scale {
            self.design.dim = 200;
            self.plan.lambda_grid = default_lambda_grid();
            self.plan.mu_grid = default_mu_grid().into_iter().map(Mu::Finite).collect();
            self.plan.tau_grid = default_tau_grid();
            self.plan.n_grid = Some((1..=10).map(|k| 50 * k).collect());
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.output_dir = Some(v.clone());
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.d {
            self.design.dim = v;
        }
        if let Some(v) = o.n {
            self.plan.n = v;
            self.plan.n_grid = Some(vec![v]);
        }
        // a fixed value also pins the corresponding search grid
        if let Some(v) = o.mu {
            self.hyper.mu = v;
            self.plan.mu_grid = vec![v];
        }
        if let Some(v) = o.lambda {
            self.hyper.lambda = v;
            self.plan.lambda_grid = vec![v];
        }
        if let Some(v) = o.tau {
            self.hyper.tau = v;
            self.plan.tau_grid = vec![v];
        }
        if let Some(v) = o.replicates {
            self.plan.replicates = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.design.dim == 0 {
            return Err(invalid("dim", "dim must be ≥ 1"));
        }
        if let Some(s) = &self.design.spectrum {
            if self.design.kind == DesignKindConfig::Sine {
                return Err(invalid("spectrum", "only valid for the gaussian design"));
            }
            if s.len() != self.design.dim {
                return Err(invalid("spectrum", format!("expected {} entries, got {}", self.design.dim, s.len())));
            }
        }
        if !self.design.theta_decay.is_finite() {
            return Err(invalid("theta_decay", "must be finite"));
        }
        if self.plan.n == 0 {
            return Err(invalid("n", "must be ≥ 1"));
        }
        if let Some(g) = &self.plan.n_grid {
            if g.is_empty() {
                return Err(invalid("n_grid", "must be nonempty"));
            }
        }
        self.spec()?;
        self.hyperparams().validate()?;
        self.sweep_plan(&[1]).validate()?;
        self.bound_config()?;
        Ok(())
    }

    pub fn spec(&self) -> Result<ValidatedSpec, ConfigError> {
        let d = &self.design;
        let theta = power_decay_theta(d.dim, d.theta_decay);
        let raw = match d.kind {
            DesignKindConfig::Sine => DesignSpec::sine(d.dim, theta, d.noise_std),
            DesignKindConfig::Gaussian => DesignSpec::gaussian(
                d.spectrum.clone().unwrap_or_else(|| vec![1.0; d.dim]),
                None,
                theta,
                d.noise_std,
            ),
        };
        Ok(validate_spec(raw)?)
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            mu: self.hyper.mu,
            lambda: self.hyper.lambda,
            tau: self.hyper.tau,
            max_iter: self.hyper.max_iter,
            tol: self.hyper.tol,
        }
    }

    pub fn bound_config(&self) -> Result<BoundConfig, ConfigError> {
        let sigma = self.bounds.sigma_psi1.unwrap_or(self.design.noise_std);
        Ok(BoundConfig::new(self.bounds.c_x, sigma, self.bounds.delta)?)
    }

    /// Sweep plan with `default_n` used when no `n_grid` is configured.
    pub fn sweep_plan(&self, default_n: &[usize]) -> SweepPlan {
        SweepPlan {
            n_grid: self.plan.n_grid.clone().unwrap_or_else(|| default_n.to_vec()),
            lambda_grid: self.plan.lambda_grid.clone(),
            mu_grid: self.plan.mu_grid.iter().map(|m| m.value()).collect(),
            tau_grid: self.plan.tau_grid.clone(),
            replicates: self.plan.replicates,
            base_seed: self.seed,
        }
    }

    /// Output directory: config value, then `EIO_OUT_DIR`, then `./out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Config echo plus provenance of one run; `config` alone reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Subcommand and its own arguments.
    pub command: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let m: Manifest = serde_json::from_str(text)?;
        m.config.validate()?;
        Ok(m)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
