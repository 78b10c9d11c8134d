//! JSON problem configuration.
//!
//! ```json
//! {
//!   "distribution": { "family": "gaussian", "sigma": 50.0 },
//!   "utility": { "family": "log", "w0": 50.0 },
//!   "cost": { "kappa": 3.3333333333333335e-5, "power": 2.0 },
//!   "a0": 100.0,
//!   "action_interval": [0.0, 200.0],
//!   "reservation_utility": 4.8
//! }
//! ```
//!
//! `reservation_utility` is a number or a list of numbers (a sweep).
//! `tolerances` and `grids` are optional; every field inside them defaults
//! to the library defaults. Unknown keys are rejected at every level.

use std::path::Path;

use moral_hazard::distributions::{DistributionSpec, OutputDistribution};
use moral_hazard::numerics::Tolerances;
use moral_hazard::preferences::{CostSpec, UtilityFamily, UtilitySpec};
use moral_hazard::{Grids, Problem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reservation {
    Single(f64),
    Sweep(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub distribution: DistributionSpec,
    pub utility: UtilityFamily,
    pub cost: CostSpec,
    pub a0: f64,
    pub action_interval: [f64; 2],
    pub reservation_utility: Reservation,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub grids: Grids,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "io",
            ConfigError::Parse { .. } => "parse",
            ConfigError::Invalid(_) => "invalid_config",
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ProblemSpec, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_config_str(&text)
}

/// Parses and validates a config document.
pub fn parse_config_str(text: &str) -> Result<ProblemSpec, ConfigError> {
    let spec: ProblemSpec = serde_json::from_str(text)
        .map_err(|e| ConfigError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
    spec.validate()?;
    Ok(spec)
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let us = self.reservations();
        if us.is_empty() {
            return Err(ConfigError::Invalid("reservation_utility list is empty".into()));
        }
        if let Some(u) = us.iter().find(|u| !u.is_finite()) {
            return Err(ConfigError::Invalid(format!("reservation utility {u} is not finite")));
        }
        self.problem(us[0]).map(|_| ())
    }

    /// Reservation utilities in file order.
    pub fn reservations(&self) -> Vec<f64> {
        match &self.reservation_utility {
            Reservation::Single(u) => vec![*u],
            Reservation::Sweep(us) => us.clone(),
        }
    }

    /// The single reservation utility, for commands that solve one instance.
    pub fn single_reservation(&self) -> Result<f64, ConfigError> {
        match &self.reservation_utility {
            Reservation::Single(u) => Ok(*u),
            Reservation::Sweep(us) if us.len() == 1 => Ok(us[0]),
            Reservation::Sweep(_) => Err(ConfigError::Invalid("this command needs a single reservation_utility".into())),
        }
    }

    pub fn problem(&self, reservation: f64) -> Result<Problem, ConfigError> {
        let invalid = |e: moral_hazard::Error| ConfigError::Invalid(e.to_string());
        let dist = OutputDistribution::new(self.distribution.clone()).map_err(invalid)?;
        let utility = UtilitySpec::new(self.utility).map_err(invalid)?;
        let [lo, hi] = self.action_interval;
        Problem::new(dist, utility, self.cost, self.a0, (lo, hi), reservation, self.tolerances, self.grids).map_err(invalid)
    }
}
