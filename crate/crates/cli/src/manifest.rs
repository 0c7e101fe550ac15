use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.json";

/// Record of one invocation, written into its output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub args: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub scenario: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub tool_version: String,
    pub started_unix_secs: u64,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], scenario: Option<&Path>, out: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            args: args.to_vec(),
            cwd: std::env::current_dir().unwrap_or_default(),
            scenario: scenario.map(Path::to_path_buf),
            seeds: Vec::new(),
            out: out.to_path_buf(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_seconds: 0.0,
        }
    }

    pub fn write(&mut self, started: std::time::Instant) -> anyhow::Result<()> {
        self.wall_seconds = started.elapsed().as_secs_f64();
        let path = self.out.join(FILE_NAME);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::InputError(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| crate::InputError(format!("manifest {}: {e}", path.display())).into())
    }

    /// Arguments with the output directory replaced.
    pub fn args_with_out(&self, out: &Path) -> Vec<String> {
        let mut args = Vec::with_capacity(self.args.len());
        let mut it = self.args.iter();
        while let Some(a) = it.next() {
            if a == "--out" {
                it.next();
                args.push("--out".to_string());
                args.push(out.display().to_string());
            } else if a.starts_with("--out=") {
                args.push(format!("--out={}", out.display()));
            } else {
                args.push(a.clone());
            }
        }
        args
    }
}
