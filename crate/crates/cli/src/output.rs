//! Output directory handling: CSV tables, the run manifest, and timings.
//!
//! The manifest holds only deterministic content so that reruns with the
//! same config and seed reproduce it byte for byte; wall-clock timings go to
//! a separate `<command>.timings.json`.

use std::fs;
use std::path::{Path, PathBuf};

use deeplimit_core::io::Table;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    file: String,
    rows: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    experiment: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    outputs: Vec<OutputEntry>,
    summary: Value,
}

pub struct RunOutput {
    dir: PathBuf,
    command: String,
    outputs: Vec<OutputEntry>,
    timings: Vec<(String, f64)>,
}

impl RunOutput {
    pub fn create(dir: &Path, command: &str) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RunOutput {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            outputs: Vec::new(),
            timings: Vec::new(),
        })
    }

    /// Writes `<command>[_<suffix>].csv`.
    pub fn table(&mut self, suffix: Option<&str>, table: &Table) -> deeplimit_core::Result<PathBuf> {
        let name = match suffix {
            Some(s) => format!("{}_{s}.csv", self.command),
            None => format!("{}.csv", self.command),
        };
        let bytes = table.to_bytes()?;
        let path = self.dir.join(&name);
        fs::write(&path, &bytes)?;
        self.outputs.push(OutputEntry {
            file: name,
            rows: table.rows().len(),
            sha256: sha256_hex(&bytes),
        });
        Ok(path)
    }

    pub fn timing(&mut self, label: impl Into<String>, seconds: f64) {
        self.timings.push((label.into(), seconds));
    }

    /// Writes the manifest and the timings file and returns the manifest path.
    pub fn finish(self, config: &RunConfig, summary: Value) -> std::io::Result<PathBuf> {
        let config_text = config.to_toml();
        let manifest = Manifest {
            command: &self.command,
            experiment: &config.experiment,
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            config,
            outputs: self.outputs,
            summary,
        };
        let path = self.dir.join(format!("{}.manifest.json", self.command));
        let mut text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;

        let timings: serde_json::Map<String, Value> =
            self.timings.into_iter().map(|(k, v)| (k, Value::from(v))).collect();
        let mut text = serde_json::to_string_pretty(&timings).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(self.dir.join(format!("{}.timings.json", self.command)), text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = RunOutput::create(dir.path(), "demo").unwrap();
        let mut t = Table::new(["a"]);
        t.push(vec!["1".into()]);
        out.table(None, &t).unwrap();
        out.table(Some("extra"), &t).unwrap();
        out.timing("total", 0.5);
        let path = out.finish(&RunConfig::default(), Value::Null).unwrap();
        let m: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(m["outputs"][1]["file"], "demo_extra.csv");
        assert_eq!(m["outputs"][0]["rows"], 1);
        assert!(dir.path().join("demo.timings.json").exists());
        assert!(m.get("timings").is_none());
    }
}
