//! Run manifests written next to every CSV.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Default)]
pub struct ErrorBudget {
    pub statistical: f64,
    pub quadrature: f64,
    pub discretization: f64,
    pub total: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, P: Serialize> {
    pub software: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub argv: &'a [String],
    pub scene_sha256: Option<String>,
    /// Every parameter after defaults were applied, including seeds.
    pub parameters: &'a P,
    pub workers: usize,
    pub wall_time_s: f64,
    pub csv_sha256: String,
    pub error_budget: Option<ErrorBudget>,
    pub result: serde_json::Value,
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    csv.with_file_name(name)
}
