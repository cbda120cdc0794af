//! Report envelopes, CSV formatting and the single write phase.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// A file to be written under the output directory.
pub struct Artifact {
    pub relative: PathBuf,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(relative: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) -> Self {
        Artifact { relative: relative.into(), bytes: bytes.into() }
    }

    pub fn json<T: Serialize>(relative: impl Into<PathBuf>, value: &T) -> Self {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        Artifact::new(relative, text)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport<T: Serialize> {
    pub kind: &'static str,
    pub provenance: Provenance,
    pub payload: T,
}

/// Comma-separated rows with a header and `\n` line endings.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn into_artifact(self, relative: impl Into<PathBuf>) -> Artifact {
        Artifact::new(relative, self.text)
    }
}

/// Shortest round-tripping decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes every artifact after all computation is done.
pub fn write_all(root: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let path = root.join(&a.relative);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        }
        std::fs::write(&path, &a.bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
