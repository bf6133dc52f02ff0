//! Command implementations. Each command reads its config, writes the
//! resolved config plus all artifacts under the output directory, and maps
//! module errors onto the exit-code taxonomy in `main`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use styledistill_core::arch::{count_flops, count_params, ArchSpec};
use styledistill_core::error::{Error, Result};
use styledistill_core::losses::LossWeights;
use styledistill_core::stylize::{
    adain_stylize, gatys_stylize, probe_max_resolution, wct_stylize, GatysOptions, ModelBundle,
    StylizationRequest,
};
use styledistill_core::training::{
    collaborative_distill, cross_pair_experiment, train_decoder, train_joint_pair, write_jsonl,
    Checkpoint, DistillOptions, MetricsRecord, TrainOutcome,
};
use styledistill_core::transforms::style_distance;
use styledistill_core::ImageTensor;

use crate::config::{
    BenchConfig, CrossPairConfig, DistillConfig, EvalConfig, GatysConfig, StylizeConfig,
    StylizeMethod, TrainDecoderConfig,
};
use crate::report::{
    stage_key, write_report, BenchRatios, BenchReport, CrossPairReport, EvalPair, EvalReport,
    GatysReport, ModelCounts, TrainReport, SCHEMA_VERSION,
};

/// Resolved run environment shared by every command.
pub struct RunContext {
    pub seed: u64,
    pub out: PathBuf,
    pub deterministic: bool,
}

impl RunContext {
    pub fn resolve(
        cli_seed: Option<u64>,
        cli_out: Option<PathBuf>,
        cfg_seed: &mut Option<u64>,
        cfg_out: &mut Option<PathBuf>,
        deterministic: bool,
    ) -> Result<Self> {
        let seed = cli_seed.or(*cfg_seed).unwrap_or(0);
        let out = cli_out
            .or_else(|| cfg_out.clone())
            .ok_or_else(|| Error::Config("an output directory is required (--out or `out`)".into()))?;
        *cfg_seed = Some(seed);
        *cfg_out = Some(out.clone());
        std::fs::create_dir_all(&out)?;
        Ok(Self {
            seed,
            out,
            deterministic,
        })
    }

    fn wall(&self, start: Instant) -> Option<f64> {
        (!self.deterministic).then(|| start.elapsed().as_secs_f64() * 1e3)
    }

    fn strip_wall(&self, metrics: &mut [MetricsRecord]) {
        if self.deterministic {
            for rec in metrics {
                rec.wall_ms = None;
            }
        }
    }
}

fn finish_training_run(
    ctx: &RunContext,
    command: &'static str,
    mut outcome: TrainOutcome,
) -> Result<()> {
    ctx.strip_wall(&mut outcome.metrics);
    outcome.checkpoint.save(&ctx.out.join("checkpoint"))?;
    write_jsonl(&ctx.out.join("metrics.jsonl"), &outcome.metrics)?;
    let report = TrainReport {
        schema_version: SCHEMA_VERSION,
        command,
        seed: ctx.seed,
        steps: outcome.checkpoint.step,
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss,
        diverged_at: outcome.diverged_at,
        wall_ms: None,
    };
    write_report(&report, &ctx.out.join("report.json"))?;
    match outcome.diverged_at {
        Some(step) => Err(Error::Divergence { step }),
        None => Ok(()),
    }
}

pub fn cmd_train_decoder(cfg: &TrainDecoderConfig, ctx: &RunContext) -> Result<()> {
    let hp = cfg.hyperparams.desk();
    let encoder = cfg.encoder.load_encoder()?;
    let corpus = cfg.corpus.load(hp.resize, hp.crop, ctx.seed)?;
    let style = cfg
        .style_corpus
        .as_ref()
        .map(|c| c.load(hp.resize, hp.crop, ctx.seed.wrapping_add(1)))
        .transpose()?;
    let outcome = train_decoder(
        &encoder,
        cfg.stage,
        &corpus,
        style.as_ref(),
        &hp,
        cfg.collaboration,
        ctx.seed,
    )?;
    finish_training_run(ctx, "train_decoder", outcome)
}

pub fn cmd_distill(cfg: &DistillConfig, ctx: &RunContext) -> Result<()> {
    let hp = cfg.hyperparams.desk();
    let teacher = cfg.teacher.load_encoder()?;
    let decoder = match &cfg.decoder {
        crate::config::NetworkSource::Checkpoint { path, name } => {
            let name = if name == "encoder" { "decoder" } else { name.as_str() };
            Checkpoint::load(path)?.network(name)?.clone()
        }
        crate::config::NetworkSource::Fresh { .. } => {
            return Err(Error::Config(
                "the collaborator decoder must come from a trained checkpoint".into(),
            ))
        }
    };
    let student_spec = cfg.student.resolve()?;
    let corpus = cfg.corpus.load(hp.resize, hp.crop, ctx.seed)?;
    let style = cfg
        .style_corpus
        .as_ref()
        .map(|c| c.load(hp.resize, hp.crop, ctx.seed.wrapping_add(1)))
        .transpose()?;
    let opts = DistillOptions {
        collaboration: cfg.collaboration,
        collab_weight: cfg.collab_weight,
        seed: ctx.seed,
    };
    let outcome = collaborative_distill(
        &teacher,
        &decoder,
        &student_spec,
        &corpus,
        style.as_ref(),
        &hp,
        &opts,
    )?;
    finish_training_run(ctx, "distill", outcome)
}

pub fn cmd_stylize(cfg: &StylizeConfig, ctx: &RunContext) -> Result<()> {
    let mut bundle = ModelBundle::new();
    for entry in &cfg.bundle {
        let ckpt = Checkpoint::load(&entry.checkpoint)?;
        bundle.insert_checkpoint(entry.stage, &ckpt)?;
    }
    let content = ImageTensor::load(&cfg.content)?;
    let style = ImageTensor::load(&cfg.style)?;
    let req = StylizationRequest {
        content: &content,
        style: &style,
        alpha: cfg.alpha,
        stages: &cfg.stages,
        bundle: &bundle,
    };
    let out = match cfg.method {
        StylizeMethod::Wct => wct_stylize(&req)?,
        StylizeMethod::Adain => adain_stylize(&req)?,
    };
    out.save(&ctx.out.join(&cfg.output))?;
    Ok(())
}

pub fn cmd_gatys(cfg: &GatysConfig, ctx: &RunContext) -> Result<()> {
    let start = Instant::now();
    let encoder = cfg.encoder.load_encoder()?;
    let content = ImageTensor::load(&cfg.content)?;
    let style = ImageTensor::load(&cfg.style)?;
    let mut weights = LossWeights::default();
    if let Some(l) = cfg.lambda_s {
        weights.lambda_s = l;
    }
    let opts = GatysOptions {
        iterations: cfg.iterations,
        weights,
    };
    let outcome = gatys_stylize(&content, &style, &encoder, &opts)?;
    outcome.image.save(&ctx.out.join(&cfg.output))?;
    if let Some(csv) = &cfg.history_csv {
        let mut text = String::from("step,loss\n");
        for (i, v) in outcome.history.iter().enumerate() {
            text.push_str(&format!("{i},{v}\n"));
        }
        std::fs::write(ctx.out.join(csv), text)?;
    }
    let report = GatysReport {
        schema_version: SCHEMA_VERSION,
        command: "gatys",
        iterations_run: outcome.history.len() - 1,
        initial_loss: outcome.history[0],
        final_loss: *outcome.history.last().expect("non-empty"),
        converged: outcome.converged,
        wall_ms: ctx.wall(start),
    };
    write_report(&report, &ctx.out.join("report.json"))
}

pub fn cmd_eval(cfg: &EvalConfig, ctx: &RunContext) -> Result<()> {
    let start = Instant::now();
    let encoder = cfg.encoder.load_encoder()?;
    let stages: Vec<usize> = match &cfg.stages {
        Some(s) => s.clone(),
        None => (1..=encoder.tap_count()).collect(),
    };
    let stylized = sorted_images(&cfg.stylized_dir)?;
    let styles = sorted_images(&cfg.style_dir)?;
    if stylized.len() != styles.len() {
        return Err(Error::Data(format!(
            "{} stylized images vs {} style images",
            stylized.len(),
            styles.len()
        )));
    }
    if stylized.is_empty() {
        return Err(Error::Data("no images to evaluate".into()));
    }

    let mut pairs = Vec::new();
    let mut sums: std::collections::BTreeMap<String, f64> = Default::default();
    for (sty_path, ref_path) in stylized.iter().zip(&styles) {
        let a = ImageTensor::load(sty_path)?;
        let b = ImageTensor::load(ref_path)?;
        let mut distances = std::collections::BTreeMap::new();
        for &k in &stages {
            let d = style_distance(&a, &b, &encoder, k)?;
            distances.insert(stage_key(k), d);
            *sums.entry(stage_key(k)).or_insert(0.0) += d;
        }
        pairs.push(EvalPair {
            stylized: file_name(sty_path),
            style: file_name(ref_path),
            distances,
        });
    }
    let n = pairs.len() as f64;
    let per_stage_mean = sums.into_iter().map(|(k, v)| (k, v / n)).collect();
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        command: "eval",
        seed: ctx.seed,
        per_stage_mean,
        pairs,
        wall_ms: ctx.wall(start),
    };
    write_report(&report, &ctx.out.join("report.json"))
}

pub fn cmd_bench(cfg: &BenchConfig, ctx: &RunContext) -> Result<()> {
    let start = Instant::now();
    if cfg.resolution == 0 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let budget_bytes = (cfg.budget_gb * (1u64 << 30) as f64) as u128;
    let teacher = cfg.teacher.resolve()?;
    let student = cfg.student.resolve()?;
    let teacher_counts = model_counts(&teacher, cfg.resolution, budget_bytes, cfg.bytes_per_scalar)?;
    let student_counts = model_counts(&student, cfg.resolution, budget_bytes, cfg.bytes_per_scalar)?;
    let ratios = BenchRatios {
        params_ratio: teacher_counts.params_cumulative as f64
            / student_counts.params_cumulative as f64,
        flops_ratio: teacher_counts.gflops_cumulative / student_counts.gflops_cumulative,
        max_side_ratio: student_counts.max_side as f64 / teacher_counts.max_side as f64,
    };
    let report = BenchReport {
        schema_version: SCHEMA_VERSION,
        command: "bench",
        resolution: cfg.resolution,
        bytes_per_scalar: cfg.bytes_per_scalar,
        budget_bytes,
        teacher: teacher_counts,
        student: student_counts,
        ratios,
        wall_ms: ctx.wall(start),
    };
    write_report(&report, &ctx.out.join("report.json"))
}

pub fn cmd_cross_pair(cfg: &CrossPairConfig, ctx: &RunContext) -> Result<()> {
    let start = Instant::now();
    let hp = cfg.hyperparams.desk();
    let pair_spec = cfg.arch.resolve()?.up_to_tap(cfg.stage)?;
    let corpus = cfg.corpus.load(hp.resize, hp.crop, ctx.seed)?;

    let pair_a = train_joint_pair(&pair_spec, &corpus, &hp, cfg.seeds[0])?;
    let pair_b = train_joint_pair(&pair_spec, &corpus, &hp, cfg.seeds[1])?;
    for (name, pair) in [("pair_a", &pair_a), ("pair_b", &pair_b)] {
        if let Some(step) = pair.diverged_at {
            let _ = name;
            return Err(Error::Divergence { step });
        }
        Checkpoint {
            step: 0,
            hyperparams: hp.clone(),
            networks: vec![
                ("encoder".into(), pair.encoder.clone()),
                ("decoder".into(), pair.decoder.clone()),
            ],
            embeddings: Vec::new(),
        }
        .save(&ctx.out.join(name))?;
    }

    let eval = corpus.eval_patches(cfg.eval_count);
    let matrix = cross_pair_experiment(
        [
            (&pair_a.encoder, &pair_a.decoder),
            (&pair_b.encoder, &pair_b.decoder),
        ],
        &eval,
    )?;
    let diagonal_max = matrix[0][0].max(matrix[1][1]);
    let off_diagonal_min = matrix[0][1].min(matrix[1][0]);
    let report = CrossPairReport {
        schema_version: SCHEMA_VERSION,
        command: "cross_pair",
        seeds: cfg.seeds,
        matrix,
        diagonal_max,
        off_diagonal_min,
        off_over_diag_ratio: off_diagonal_min / diagonal_max,
        exclusive: matrix[0][0] < off_diagonal_min && matrix[1][1] < off_diagonal_min,
        wall_ms: ctx.wall(start),
    };
    write_report(&report, &ctx.out.join("report.json"))
}

/// Per-stage and cumulative counters for one architecture. The cumulative
/// figures sum the stage-`k` encoders for k = 1..=max_stage (the convention
/// matching a ~17.1M-parameter 5-stage reference encoder set).
fn model_counts(
    spec: &ArchSpec,
    resolution: usize,
    budget_bytes: u128,
    bytes_per_scalar: usize,
) -> Result<ModelCounts> {
    let mut params_per_stage = Vec::new();
    let mut decoder_params_per_stage = Vec::new();
    let mut gflops_per_stage = Vec::new();
    for k in 1..=spec.max_stage() {
        let stage_spec = spec.up_to_tap(k)?;
        let enc = count_params(&stage_spec, false);
        let both = count_params(&stage_spec, true);
        params_per_stage.push(enc);
        decoder_params_per_stage.push(both - enc);
        // Round the benchmark resolution up to the stage divisor.
        let d = stage_spec.divisor();
        let side = resolution.div_ceil(d) * d;
        gflops_per_stage.push(count_flops(&stage_spec, side, side)? as f64 / 1e9);
    }
    let params_cumulative: u64 = params_per_stage.iter().sum();
    let decoder_cumulative: u64 = decoder_params_per_stage.iter().sum();
    let max_side = probe_max_resolution(spec, budget_bytes, bytes_per_scalar)?;
    Ok(ModelCounts {
        arch: spec.stages().to_vec(),
        params_per_stage,
        params_cumulative,
        decoder_params_per_stage,
        params_cumulative_with_decoders: params_cumulative + decoder_cumulative,
        storage_mb: params_cumulative as f64 * bytes_per_scalar as f64 / 1e6,
        gflops_cumulative: gflops_per_stage.iter().sum(),
        gflops_per_stage,
        max_side,
    })
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
