use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&data)), bytes: data.len() as u64 })
}

/// Provenance record written next to every command's outputs.
///
/// The manifest itself is never listed among the outputs, so output
/// digests stay comparable across reruns even though the timings differ.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub wall_seconds: f64,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            argv: std::env::args().collect(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            finished_at: String::new(),
            wall_seconds: 0.0,
            clock: Some(Instant::now()),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn outputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
        for p in paths {
            self.outputs.push(digest_file(p)?);
        }
        Ok(())
    }

    /// Prints the warning to stderr and keeps it in the record.
    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        eprintln!("WARNING: {message}");
        self.warnings.push(message);
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
        self.wall_seconds = self.clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `<output>.manifest.json` for commands that write a single file.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
