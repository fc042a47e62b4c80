use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

/// Record of one invocation, written as `manifest.json` next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub exit_code: u8,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub tool_version: String,
    /// Extra settings worth recording (EM options and the like).
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub settings: serde_json::Map<String, serde_json::Value>,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str) -> Self {
        Self {
            manifest: RunManifest {
                subcommand: subcommand.into(),
                args: std::env::args().collect(),
                seed: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                exit_code: 0,
                threads: rayon::current_num_threads(),
                wall_time_secs: 0.0,
                tool_version: env!("CARGO_PKG_VERSION").into(),
                settings: serde_json::Map::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("setting serializes");
        self.manifest.settings.insert(key.into(), v);
    }

    pub fn finish(mut self, dir: &Path, exit_code: u8) -> anyhow::Result<()> {
        self.manifest.exit_code = exit_code;
        self.manifest.wall_time_secs = self.started.elapsed().as_secs_f64();
        let path = dir.join("manifest.json");
        self.manifest.outputs.push(path.clone());
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }
}
