//! Machine-parsable JSON reports with a stable, versioned key schema.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use styledistill_core::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Summary of a training run.
#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub seed: u64,
    pub steps: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Analytic model counters for one architecture, Table-3 shaped.
/// `params_per_stage[k-1]` counts the stage-`k` encoder (up to its tap);
/// cumulative figures sum the five stage encoders.
#[derive(Debug, Serialize)]
pub struct ModelCounts {
    pub arch: Vec<Vec<usize>>,
    pub params_per_stage: Vec<u64>,
    pub params_cumulative: u64,
    pub decoder_params_per_stage: Vec<u64>,
    pub params_cumulative_with_decoders: u64,
    pub storage_mb: f64,
    pub gflops_per_stage: Vec<f64>,
    pub gflops_cumulative: f64,
    pub max_side: usize,
}

#[derive(Debug, Serialize)]
pub struct BenchRatios {
    pub params_ratio: f64,
    pub flops_ratio: f64,
    pub max_side_ratio: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub resolution: usize,
    pub bytes_per_scalar: usize,
    pub budget_bytes: u128,
    pub teacher: ModelCounts,
    pub student: ModelCounts,
    pub ratios: BenchRatios,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Style distances of one stylized/style pair, keyed `conv1..conv5`.
#[derive(Debug, Serialize)]
pub struct EvalPair {
    pub stylized: String,
    pub style: String,
    pub distances: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub seed: u64,
    pub per_stage_mean: BTreeMap<String, f64>,
    pub pairs: Vec<EvalPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CrossPairReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub seeds: [u64; 2],
    /// `matrix[i][j]`: encoder `i` with decoder `j`; diagonal = matched.
    pub matrix: [[f64; 2]; 2],
    pub diagonal_max: f64,
    pub off_diagonal_min: f64,
    pub off_over_diag_ratio: f64,
    pub exclusive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct GatysReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub iterations_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Writes a report as pretty JSON with a trailing newline.
pub fn write_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// `conv{k}` key used in Table-2-shaped reports.
pub fn stage_key(k: usize) -> String {
    format!("conv{k}")
}
