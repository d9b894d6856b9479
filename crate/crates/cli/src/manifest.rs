//! `manifest.json` written beside every run's outputs.

use std::path::Path;
use std::process::Command;

use anyhow::Result;
use modcnn::config::ConfigEntries;
use serde::Serialize;
use serde_json::Value;

use crate::Global;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub git_commit: Option<String>,
    pub argv: Vec<String>,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    /// Effective `--config` and `--set` entries in application order.
    pub config: Vec<(String, String)>,
    /// Resolved architecture, training recipe or grid, per command.
    pub details: Value,
    pub outputs: Vec<String>,
}

fn git_commit() -> Option<String> {
    let out = Command::new("git").args(["rev-parse", "--short=12", "HEAD"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

impl Manifest {
    pub fn new(command: &str, g: &Global, entries: &ConfigEntries) -> Self {
        Manifest {
            tool: "modcnn",
            version: env!("CARGO_PKG_VERSION"),
            git_commit: git_commit(),
            argv: std::env::args().collect(),
            command: command.to_string(),
            seed: g.seed,
            threads: g.threads,
            config: entries.entries.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
            details: Value::Null,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}
