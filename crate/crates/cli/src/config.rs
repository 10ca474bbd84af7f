//! TOML config loading. Every file is optional and fully defaulted;
//! command-line flags are applied on top.

use std::path::Path;

use apr_core::fixtures;
use apr_core::mech::MechParams;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

/// A parameter file: the model parameters plus optional labels for the
/// trajectories simulated from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    #[serde(default)]
    pub agent_id: Option<String>,
    #[serde(default)]
    pub condition: Option<String>,
    pub beta: f64,
    pub kappa_s: f64,
    pub kappa_f: f64,
    pub omega_s: Vec<f64>,
    pub omega_f: Vec<f64>,
    pub log_theta: f64,
}

impl ParamsFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Looks up a tabulated row given as `MODEL/REASONING`.
    pub fn fixture(name: &str) -> Result<Self, CliError> {
        let (model, reasoning) = name
            .rsplit_once('/')
            .ok_or_else(|| CliError::Usage(format!("fixture must be MODEL/REASONING, got {name:?}")))?;
        let row = fixtures::find(model, reasoning).ok_or_else(|| {
            let known: Vec<String> = fixtures::ROWS.iter().map(|r| format!("{}/{}", r.model, r.reasoning)).collect();
            CliError::Usage(format!("unknown fixture {name:?}; known: {}", known.join(", ")))
        })?;
        let p = row.params();
        Ok(ParamsFile {
            agent_id: Some(row.model.to_string()),
            condition: Some(row.reasoning.to_string()),
            beta: p.beta,
            kappa_s: p.kappa_s,
            kappa_f: p.kappa_f,
            omega_s: p.omega_s,
            omega_f: p.omega_f,
            log_theta: p.log_theta,
        })
    }

    /// The parameters with bias vectors renormalized onto the simplex.
    pub fn params(&self) -> MechParams {
        MechParams {
            beta: self.beta,
            kappa_s: self.kappa_s,
            kappa_f: self.kappa_f,
            omega_s: self.omega_s.clone(),
            omega_f: self.omega_f.clone(),
            log_theta: self.log_theta,
        }
        .normalized()
    }
}
