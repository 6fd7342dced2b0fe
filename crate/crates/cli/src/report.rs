use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub started_unix_s: f64,
    pub elapsed_s: f64,
}

/// Envelope written by every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    /// `choicectx.<subcommand>`.
    pub schema: String,
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub invocation: Vec<String>,
    pub flags: Value,
    pub seed: Option<u64>,
    pub timing: Timing,
    pub payload: Value,
}

impl Report {
    pub fn to_pretty_json(&self) -> serde_json::Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

/// Writes `text` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes the report to `path`, or to stdout when no path is given.
pub fn write_report(report: &Report, path: Option<&Path>) -> std::io::Result<()> {
    let text = report.to_pretty_json().map_err(std::io::Error::other)?;
    match path {
        Some(p) => write_atomic(p, &text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()
        }
    }
}
