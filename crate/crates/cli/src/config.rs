//! Declarative run configuration: TOML files with strict key checking,
//! overridden field-by-field by command-line flags.

use serde::{Deserialize, Serialize};

fn default_schema() -> u32 {
    1
}

/// Configuration of one complexity solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub a: f64,
    pub q: f64,
    pub alpha: f64,
    /// "tilde0", "fin", or "tc".
    pub mode: String,
    /// Pinned energy; omit for the free-energy maximum.
    #[serde(default)]
    pub e: Option<f64>,
    /// Also compute the energy band (tilde0/fin only).
    #[serde(default)]
    pub band: bool,
    /// Optional CSV output of the shifted Hessian density.
    #[serde(default)]
    pub rho_grid: Option<String>,
    /// Optional CSV output of the joint label density on a grid.
    #[serde(default)]
    pub nu_grid: Option<String>,
    /// Output path of the solution record (JSON).
    #[serde(default)]
    pub out: Option<String>,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            a: 0.01,
            q: 0.0,
            alpha: 6.5,
            mode: "tilde0".into(),
            e: None,
            band: false,
            rho_grid: None,
            nu_grid: None,
            out: None,
        }
    }
}

/// Configuration of a phase-diagram sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDiagramConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub a: f64,
    pub alpha_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    #[serde(default = "default_true")]
    pub with_bbp: bool,
    #[serde(default = "default_true")]
    pub with_band: bool,
    #[serde(default = "default_true")]
    pub with_tc: bool,
    #[serde(default = "default_bisect_tol")]
    pub bisect_tol: f64,
    #[serde(default = "default_cells_csv")]
    pub out_cells: String,
    #[serde(default = "default_thresholds_csv")]
    pub out_thresholds: String,
}

fn default_true() -> bool {
    true
}
fn default_bisect_tol() -> f64 {
    1e-2
}
fn default_cells_csv() -> String {
    "cells.csv".into()
}
fn default_thresholds_csv() -> String {
    "thresholds.csv".into()
}

impl Default for PhaseDiagramConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            a: 0.01,
            alpha_grid: vec![2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5],
            q_grid: vec![0.0, 0.2, 0.4],
            with_bbp: true,
            with_band: true,
            with_tc: true,
            bisect_tol: 1e-2,
            out_cells: default_cells_csv(),
            out_thresholds: default_thresholds_csv(),
        }
    }
}

/// Configuration of a simulation batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub d: usize,
    pub a: f64,
    pub alpha_grid: Vec<f64>,
    pub q0_grid: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_t_burn")]
    pub t_burn: usize,
    /// Defaults to `12000 log2(d)` when omitted.
    #[serde(default)]
    pub t_free: Option<usize>,
    #[serde(default = "default_true")]
    pub early_stop: bool,
    #[serde(default = "default_true")]
    pub normalize_signal: bool,
    /// Compute the Hessian spectrum of trapped runs (dense eigensolve).
    #[serde(default)]
    pub hessian: bool,
    #[serde(default = "default_batch_csv")]
    pub out: String,
    /// Directory of per-run records (JSON), one file per run.
    #[serde(default)]
    pub runs_dir: Option<String>,
}

fn default_eta() -> f64 {
    2e-4
}
fn default_t_burn() -> usize {
    60_000
}
fn default_batch_csv() -> String {
    "batch.csv".into()
}

/// Comparison inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub theory: Vec<String>,
    pub experiment: Vec<String>,
    #[serde(default = "default_report_csv")]
    pub out: String,
}

fn default_report_csv() -> String {
    "compare.csv".into()
}

/// Load a strict TOML config.
pub fn load_toml<T: serde::de::DeserializeOwned>(path: &str) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
    toml::from_str(&text).map_err(|e| format!("invalid config {path}: {e}"))
}
