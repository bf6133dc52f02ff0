//! Checkpoint container: a directory holding a versioned JSON manifest plus
//! one raw little-endian binary blob with every tensor. Save -> load -> save
//! reproduces identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::HyperParams;
use crate::arch::{ArchSpec, Network, Role};
use crate::error::{Error, Result};
use crate::losses::EmbeddingMap;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const TENSORS_FILE: &str = "tensors.bin";

/// Persisted model state: named networks, embedding maps, the training step,
/// and a hyperparameter snapshot.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub hyperparams: HyperParams,
    pub networks: Vec<(String, Network)>,
    pub embeddings: Vec<EmbeddingMap>,
}

#[derive(Serialize, Deserialize)]
struct ManifestNetwork {
    name: String,
    role: Role,
    spec: ArchSpec,
}

#[derive(Serialize, Deserialize)]
struct ManifestEmbedding {
    tap_stage: usize,
    teacher_channels: usize,
    student_channels: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    step: u64,
    hyperparams: HyperParams,
    networks: Vec<ManifestNetwork>,
    embeddings: Vec<ManifestEmbedding>,
    tensors: Vec<ManifestTensor>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&Network> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| Error::Checkpoint(format!("no network named '{name}'")))
    }

    /// Writes `manifest.json` and `tensors.bin` under `dir` (created if
    /// missing).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut tensors = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, values: &[f64], blob: &mut Vec<u8>| {
            let offset = blob.len() as u64;
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(ManifestTensor {
                name,
                shape,
                offset,
                byte_len: (values.len() * 8) as u64,
            });
        };
        for (name, net) in &self.networks {
            for (tensor_name, shape, values) in net.named_tensors() {
                push(format!("{name}.{tensor_name}"), shape, values, &mut blob);
            }
        }
        for embed in &self.embeddings {
            let (c, cp) = embed.q.dim();
            push(
                format!("embed.stage{}.q", embed.tap_stage),
                vec![c, cp],
                embed.q.as_slice().expect("standard layout"),
                &mut blob,
            );
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            step: self.step,
            hyperparams: self.hyperparams.clone(),
            networks: self
                .networks
                .iter()
                .map(|(name, net)| ManifestNetwork {
                    name: name.clone(),
                    role: net.role(),
                    spec: net.spec().clone(),
                })
                .collect(),
            embeddings: self
                .embeddings
                .iter()
                .map(|e| ManifestEmbedding {
                    tap_stage: e.tap_stage,
                    teacher_channels: e.teacher_channels(),
                    student_channels: e.student_channels(),
                })
                .collect(),
            tensors,
        };
        let mut manifest_bytes =
            serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        manifest_bytes.push(b'\n');
        std::fs::write(dir.join(MANIFEST_FILE), manifest_bytes)?;
        let mut f = std::fs::File::create(dir.join(TENSORS_FILE))?;
        f.write_all(&blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_text = std::fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::Checkpoint(format!("cannot read manifest: {e}")))?;
        let manifest: Manifest = serde_json::from_str(&manifest_text)
            .map_err(|e| Error::Checkpoint(format!("malformed manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let mut blob = Vec::new();
        std::fs::File::open(dir.join(TENSORS_FILE))?.read_to_end(&mut blob)?;

        let read_tensor = |t: &ManifestTensor| -> Result<Vec<f64>> {
            let start = t.offset as usize;
            let end = start + t.byte_len as usize;
            if end > blob.len() || t.byte_len % 8 != 0 {
                return Err(Error::Checkpoint(format!(
                    "tensor {} out of bounds",
                    t.name
                )));
            }
            Ok(blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };

        let mut networks = Vec::new();
        for mn in &manifest.networks {
            let mut net = match mn.role {
                Role::Encoder => Network::encoder_zeroed(&mn.spec)?,
                Role::Decoder => Network::decoder_zeroed(&mn.spec)?,
            };
            let prefix = format!("{}.", mn.name);
            for t in manifest
                .tensors
                .iter()
                .filter(|t| t.name.starts_with(&prefix))
            {
                let values = read_tensor(t)?;
                net.fill_tensor(&t.name[prefix.len()..], &values)?;
            }
            networks.push((mn.name.clone(), net));
        }

        let mut embeddings = Vec::new();
        for me in &manifest.embeddings {
            let name = format!("embed.stage{}.q", me.tap_stage);
            let t = manifest
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            let values = read_tensor(t)?;
            let q = Array2::from_shape_vec((me.teacher_channels, me.student_channels), values)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            embeddings.push(EmbeddingMap {
                q,
                tap_stage: me.tap_stage,
            });
        }

        Ok(Self {
            step: manifest.step,
            hyperparams: manifest.hyperparams,
            networks,
            embeddings,
        })
    }
}
