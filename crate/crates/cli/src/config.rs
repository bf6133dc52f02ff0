//! Run configuration documents. Every command reads one TOML file; unknown
//! keys are rejected and the resolved document is written next to the run's
//! outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use styledistill_core::arch::{build_encoder, preset, ArchSpec, ArchSpecDoc, Network};
use styledistill_core::error::{Error, Result};
use styledistill_core::training::{
    load_corpus, Checkpoint, Collaboration, Corpus, CorpusSource, HyperParams, TextureFamily,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An architecture reference: either a named preset or an inline spec
/// document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchRef {
    Preset(String),
    Doc(ArchSpecDoc),
}

impl ArchRef {
    pub fn resolve(&self) -> Result<ArchSpec> {
        match self {
            ArchRef::Preset(name) => {
                preset(name).ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))
            }
            ArchRef::Doc(doc) => doc.resolve(),
        }
    }
}

/// Where a network comes from: a fresh seeded initialization or a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NetworkSource {
    Fresh {
        arch: ArchRef,
        #[serde(default)]
        init_seed: u64,
    },
    Checkpoint {
        path: PathBuf,
        #[serde(default = "default_network_name")]
        name: String,
    },
}

fn default_network_name() -> String {
    "encoder".into()
}

impl NetworkSource {
    /// Resolves to an encoder network.
    pub fn load_encoder(&self) -> Result<Network> {
        match self {
            NetworkSource::Fresh { arch, init_seed } => {
                let spec = arch.resolve()?;
                build_encoder(&spec, &mut ChaCha8Rng::seed_from_u64(*init_seed))
            }
            NetworkSource::Checkpoint { path, name } => {
                Ok(Checkpoint::load(path)?.network(name)?.clone())
            }
        }
    }
}

/// Corpus selection: a directory of images or a synthetic texture family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CorpusConfig {
    Synthetic {
        family: TextureFamily,
        #[serde(default = "default_corpus_count")]
        count: usize,
    },
    Directory { path: PathBuf },
}

fn default_corpus_count() -> usize {
    64
}

impl CorpusConfig {
    pub fn load(&self, resize: usize, crop: usize, seed: u64) -> Result<Corpus> {
        let source = match self {
            CorpusConfig::Synthetic { family, count } => CorpusSource::Synthetic {
                family: *family,
                count: *count,
            },
            CorpusConfig::Directory { path } => CorpusSource::Directory(path.clone()),
        };
        load_corpus(&source, resize, crop, seed)
    }
}

/// Partial hyperparameter overrides applied on top of the desk-scale
/// defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub resize: Option<usize>,
    pub crop: Option<usize>,
    pub epochs: Option<usize>,
    pub max_steps: Option<u64>,
    pub log_every: Option<u64>,
    pub lambda_p: Option<f64>,
    pub lambda_s: Option<f64>,
    pub beta: Option<f64>,
}

impl HyperOverrides {
    pub fn apply(&self, mut hp: HyperParams) -> HyperParams {
        if let Some(v) = self.learning_rate {
            hp.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            hp.batch_size = v;
        }
        if let Some(v) = self.resize {
            hp.resize = v;
        }
        if let Some(v) = self.crop {
            hp.crop = v;
        }
        if let Some(v) = self.epochs {
            hp.epochs = v;
        }
        if self.max_steps.is_some() {
            hp.max_steps = self.max_steps;
        }
        if let Some(v) = self.log_every {
            hp.log_every = v;
        }
        if let Some(v) = self.lambda_p {
            hp.weights.lambda_p = v;
        }
        if let Some(v) = self.lambda_s {
            hp.weights.lambda_s = v;
        }
        if let Some(v) = self.beta {
            hp.weights.beta = v;
        }
        hp
    }

    /// Desk-scale defaults with these overrides applied.
    pub fn desk(&self) -> HyperParams {
        self.apply(HyperParams::desk())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDecoderConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub stage: usize,
    pub collaboration: Collaboration,
    pub encoder: NetworkSource,
    pub corpus: CorpusConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_corpus: Option<CorpusConfig>,
    #[serde(default)]
    pub hyperparams: HyperOverrides,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub teacher: NetworkSource,
    /// Checkpoint holding the frozen collaborator under `name` (default
    /// "decoder").
    pub decoder: NetworkSource,
    pub student: ArchRef,
    pub collaboration: Collaboration,
    /// Weight on the collaboration term (0 = embedding-only ablation).
    #[serde(default = "default_collab_weight")]
    pub collab_weight: f64,
    pub corpus: CorpusConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_corpus: Option<CorpusConfig>,
    #[serde(default)]
    pub hyperparams: HyperOverrides,
}

fn default_collab_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleEntry {
    pub stage: usize,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StylizeMethod {
    Wct,
    Adain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizeConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: StylizeMethod,
    pub content: PathBuf,
    pub style: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub stages: Vec<usize>,
    pub bundle: Vec<BundleEntry>,
    #[serde(default = "default_stylize_output")]
    pub output: String,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_stylize_output() -> String {
    "stylized.png".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatysConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub encoder: NetworkSource,
    pub content: PathBuf,
    pub style: PathBuf,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    #[serde(default = "default_gatys_output")]
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_csv: Option<String>,
}

fn default_iterations() -> usize {
    200
}

fn default_gatys_output() -> String {
    "gatys.png".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub encoder: NetworkSource,
    pub stylized_dir: PathBuf,
    pub style_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub teacher: ArchRef,
    pub student: ArchRef,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_budget_gb")]
    pub budget_gb: f64,
    #[serde(default = "default_bytes_per_scalar")]
    pub bytes_per_scalar: usize,
}

fn default_resolution() -> usize {
    3000
}

fn default_budget_gb() -> f64 {
    12.0
}

fn default_bytes_per_scalar() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossPairConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub arch: ArchRef,
    pub stage: usize,
    pub seeds: [u64; 2],
    #[serde(default = "default_eval_count")]
    pub eval_count: usize,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub hyperparams: HyperOverrides,
}

fn default_eval_count() -> usize {
    8
}

/// Parses a TOML config file into a command config.
pub fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes the resolved config next to the run outputs.
pub fn write_resolved<T: Serialize>(cfg: &T, out_dir: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out_dir.join("config.toml"), text)?;
    Ok(())
}
