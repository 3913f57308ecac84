//! Run reports: versioned JSON recording everything needed to repeat a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::commands::CommandConfig;
use crate::error::{CliError, CliResult};
use crate::io;

pub const REPORT_FORMAT: &str = "bayeshield-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub tool_version: String,
    pub config: CommandConfig,
    /// Worker threads used; results do not depend on it.
    pub threads: Option<usize>,
    pub results: Value,
    pub outputs: Vec<OutputRecord>,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, source: &str) -> CliResult<Self> {
        let report: RunReport =
            serde_json::from_str(text).map_err(|e| CliError::user(format!("{source}: not a valid report: {e}")))?;
        if report.format != REPORT_FORMAT {
            return Err(CliError::user(format!("{source}: unknown report format `{}`", report.format)));
        }
        if report.version != REPORT_VERSION {
            return Err(CliError::user(format!(
                "{source}: report version {} is not supported (expected {REPORT_VERSION})",
                report.version
            )));
        }
        Ok(report)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_json(&io::read_text(path)?, &path.display().to_string())
    }
}
