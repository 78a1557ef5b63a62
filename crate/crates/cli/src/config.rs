use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::output::CliError;

/// Read a configuration file, or the defaults when none is given. Files ending
/// in `.json` are JSON, everything else TOML.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Settings of the `infer` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub level: f64,
    /// Any of `alpha_dagger`, `z`, `f`, `theta`, `p`. The `theta` and `p`
    /// families cover the pairs listed in `pairs`.
    pub families: Vec<String>,
    /// One-based `(hyperlink, vertex)` pairs for `theta` and `p`.
    pub pairs: Vec<[usize; 2]>,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            level: 0.95,
            families: vec!["alpha_dagger".into(), "z".into(), "f".into()],
            pairs: Vec::new(),
        }
    }
}

/// Settings of the `ellipses` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EllipseConfig {
    pub level: f64,
    /// Labels or one-based indices; empty draws the first ten vertices.
    pub vertices: Vec<String>,
    /// Plot side length in pixels.
    pub size: u32,
}

impl Default for EllipseConfig {
    fn default() -> Self {
        Self {
            level: 0.95,
            vertices: Vec::new(),
            size: 600,
        }
    }
}
