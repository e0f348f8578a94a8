use std::path::Path;

use serde::{Deserialize, Serialize};

use scos::select::DEFAULT_TAU;
use scos::solver::SolverConfig;
use scos::synth::ScenarioConfig;
use scos::{Result, ScosError};

/// Configuration file contents. Every section is optional; flags given on the
/// command line override the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub solver: SolverConfig,
    /// Replaces the `--scale` preset when present.
    pub scenario: Option<ScenarioConfig>,
    pub select: SelectSection,
    pub hsi: HsiSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub tau: f64,
    pub r_max: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            r_max: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HsiSection {
    pub s_r: usize,
    pub s_a: usize,
}

impl Default for HsiSection {
    fn default() -> Self {
        Self { s_r: 3, s_a: 3 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = scos::io::read_text(path)?;
        toml::from_str(&text).map_err(|e| ScosError::FormatError {
            offset: e.span().map_or(0, |s| s.start as u64),
            msg: e.message().to_string(),
        })
    }

    /// Writes the effective configuration as `run_config.toml` in `dir`.
    pub fn record(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| ScosError::InvalidArgument(format!("cannot encode config: {e}")))?;
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run_config.toml"), text)?;
        Ok(())
    }
}
