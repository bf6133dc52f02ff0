//! Per-step loss telemetry, emitted as JSON lines.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossWeights;

/// One logging step. Which components are present depends on the objective:
/// reconstruction runs fill `pixel`/`perceptual`, stylization runs fill
/// `content`/`style`, distillation additionally fills `embed` (one entry per
/// tap) and `collab`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perceptual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub content: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub style: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub embed: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub collab: Option<f64>,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

impl MetricsRecord {
    /// Checks that `total` reconstructs from the stored components under the
    /// given weights, within 1e-6.
    pub fn is_consistent(&self, w: &LossWeights) -> bool {
        let expect = if self.collab.is_some() {
            w.beta * self.embed.iter().sum::<f64>() + self.collab.unwrap()
        } else if self.pixel.is_some() || self.perceptual.is_some() {
            self.pixel.unwrap_or(0.0) + w.lambda_p * self.perceptual.unwrap_or(0.0)
        } else if self.content.is_some() || self.style.is_some() {
            self.content.unwrap_or(0.0) + w.lambda_s * self.style.unwrap_or(0.0)
        } else {
            return true;
        };
        (self.total - expect).abs() <= 1e-6 * self.total.abs().max(1.0)
    }
}

/// Writes records as JSON lines, one object per line.
pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for rec in records {
        serde_json::to_writer(&mut file, rec).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
