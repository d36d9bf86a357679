//! Report files, CSV formatting and the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::experiments::Outcome;
use crate::CliError;

/// Floats in every output: 17 significant digits.
pub fn f(x: f64) -> String {
    format!("{x:.16e}")
}

/// `# ` comment lines opening a CSV.
pub fn header(lines: &[&str]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

/// `key = value` lines.
#[derive(Default)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "{key} = {value}");
        self
    }

    pub fn float(&mut self, key: &str, value: f64) -> &mut Self {
        self.kv(key, f(value))
    }

    pub fn raw(&mut self, text: &str) -> &mut Self {
        self.text.push_str(text);
        self
    }

    pub fn finish(self) -> String {
        self.text
    }
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// All files of one run: the outcome's files, `report.txt`, `config.toml`
/// and `manifest.txt`.
pub fn render(cfg: &ExperimentConfig, outcome: &Outcome) -> BTreeMap<String, String> {
    let mut files = outcome.files.clone();
    // the output location never enters the files, so trees compare equal
    let stored = ExperimentConfig {
        output: None,
        ..cfg.clone()
    };
    let mut report = String::new();
    report.push_str(&header(&[outcome.description]));
    let _ = writeln!(report, "kind = {}", cfg.experiment.kind());
    let _ = writeln!(report, "seed = {}", cfg.seed);
    let _ = writeln!(report, "config_hash = {}", cfg.hash());
    let _ = writeln!(report, "passed = {}", outcome.passed());
    report.push_str("\n[results]\n");
    report.push_str(&outcome.report);
    report.push_str("\n[checks]\n");
    for c in &outcome.checks {
        let _ = writeln!(report, "{} = {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
    }
    report.push_str("\n[config]\n");
    report.push_str(&stored.to_toml());
    files.insert("report.txt".into(), report);
    files.insert("config.toml".into(), stored.to_toml());
    let mut manifest = header(&["Files of one experiment run with their SHA-256 digests."]);
    let _ = writeln!(manifest, "kind = {}", cfg.experiment.kind());
    let _ = writeln!(manifest, "seed = {}", cfg.seed);
    let _ = writeln!(manifest, "config_hash = {}", cfg.hash());
    let _ = writeln!(manifest, "towerlab_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "passed = {}", outcome.passed());
    manifest.push_str("\n[files]\n");
    for (name, body) in &files {
        let _ = writeln!(manifest, "{name} = {}", digest(body.as_bytes()));
    }
    files.insert("manifest.txt".into(), manifest);
    files
}

pub fn write_files(dir: &Path, files: &BTreeMap<String, String>) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
