//! Plan artifacts: versioned TOML files holding the fluence, objective
//! value and provenance of a plan.

use std::path::Path;

use serde::{Deserialize, Serialize};

use robart_core::solver::Plan;

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanArtifact {
    pub format_version: u32,
    /// `nominal`, `probabilistic`, `worst-case` or `robust-cvar`.
    pub label: String,
    pub plan: Plan,
}

impl PlanArtifact {
    pub fn new(plan: Plan) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            label: plan.provenance.label().to_string(),
            plan,
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let a: PlanArtifact = toml::from_str(text).map_err(|e| CliError::Config(format!("plan artifact: {e}")))?;
        if a.format_version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "plan artifact version {} is not supported (expected {FORMAT_VERSION})",
                a.format_version
            )));
        }
        Ok(a)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
