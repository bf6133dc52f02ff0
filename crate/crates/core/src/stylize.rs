//! End-user stylization pipelines: the cascaded coarse-to-fine WCT pass,
//! single-pass AdaIN, optimization-based transfer, and the analytic
//! resolution-feasibility probe.

use std::collections::BTreeMap;

use ndarray::Array3;

use crate::arch::{estimate_peak_activation_memory, ArchSpec, Network, Role};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::LossWeights;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::training::Checkpoint;
use crate::transforms::{adain_transfer, gram, wct_transfer, DEFAULT_ADAIN_EPS};

/// One stage pair of a stylization model.
#[derive(Debug, Clone)]
pub struct StageModels {
    pub encoder: Network,
    pub decoder: Network,
}

/// Per-stage encoder-decoder pairs, keyed by stage.
#[derive(Debug, Clone, Default)]
pub struct ModelBundle {
    stages: BTreeMap<usize, StageModels>,
}

impl ModelBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, stage: usize, encoder: Network, decoder: Network) -> Result<()> {
        if encoder.role() != Role::Encoder || decoder.role() != Role::Decoder {
            return Err(Error::Arg(
                "bundle entries must be an encoder and a decoder".into(),
            ));
        }
        if encoder.spec() != decoder.spec() {
            return Err(Error::Config(format!(
                "stage {stage}: encoder and decoder specs differ"
            )));
        }
        if encoder.spec().max_stage() != stage {
            return Err(Error::Config(format!(
                "stage {stage}: encoder has {} stages",
                encoder.spec().max_stage()
            )));
        }
        self.stages.insert(stage, StageModels { encoder, decoder });
        Ok(())
    }

    /// Pulls the `"encoder"`/`"decoder"` pair out of a training checkpoint.
    pub fn insert_checkpoint(&mut self, stage: usize, ckpt: &Checkpoint) -> Result<()> {
        self.insert(
            stage,
            ckpt.network("encoder")?.clone(),
            ckpt.network("decoder")?.clone(),
        )
    }

    pub fn stage(&self, k: usize) -> Result<&StageModels> {
        self.stages
            .get(&k)
            .ok_or_else(|| Error::Config(format!("bundle is missing the stage-{k} model")))
    }

    pub fn stage_keys(&self) -> Vec<usize> {
        self.stages.keys().copied().collect()
    }

    pub fn deepest(&self) -> Result<usize> {
        self.stages
            .keys()
            .next_back()
            .copied()
            .ok_or_else(|| Error::Config("bundle is empty".into()))
    }
}

/// A stylization request against a model bundle. `stages` is the WCT cascade
/// set (deepest first at execution); AdaIN uses the deepest requested stage.
#[derive(Debug, Clone, Copy)]
pub struct StylizationRequest<'a> {
    pub content: &'a ImageTensor,
    pub style: &'a ImageTensor,
    pub alpha: f64,
    pub stages: &'a [usize],
    pub bundle: &'a ModelBundle,
}

impl StylizationRequest<'_> {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Arg(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.stages.is_empty() {
            return Err(Error::Arg("at least one stage must be requested".into()));
        }
        Ok(())
    }
}

/// Cascaded coarse-to-fine WCT stylization: iterate stages from deepest to
/// shallowest, each time encoding the current image, aligning its stage-`k`
/// feature statistics to the style's, and decoding. The final image is
/// clipped to `[0, 1]`.
pub fn wct_stylize(req: &StylizationRequest) -> Result<ImageTensor> {
    req.validate()?;
    let mut stages = req.stages.to_vec();
    stages.sort_unstable_by(|a, b| b.cmp(a));
    stages.dedup();
    let mut current = req.content.clone();
    for &k in &stages {
        let models = req.bundle.stage(k)?;
        current = stage_pass(models, &current, Some(req.style), Transfer::Wct, req.alpha)?;
    }
    current.clamp01();
    Ok(current)
}

/// Single-pass AdaIN stylization at the deepest requested stage, blending
/// the transferred feature with the content feature by `alpha`.
pub fn adain_stylize(req: &StylizationRequest) -> Result<ImageTensor> {
    req.validate()?;
    let k = *req.stages.iter().max().expect("non-empty");
    let models = req.bundle.stage(k)?;
    let mut out = stage_pass(
        models,
        req.content,
        Some(req.style),
        Transfer::Adain,
        req.alpha,
    )?;
    out.clamp01();
    Ok(out)
}

/// The pure multi-stage reconstruction path: the WCT cascade with no style
/// injection. Shares the stylization code path exactly.
pub fn reconstruct(
    bundle: &ModelBundle,
    stages: &[usize],
    content: &ImageTensor,
) -> Result<ImageTensor> {
    let mut order = stages.to_vec();
    order.sort_unstable_by(|a, b| b.cmp(a));
    order.dedup();
    if order.is_empty() {
        return Err(Error::Arg("at least one stage must be requested".into()));
    }
    let mut current = content.clone();
    for &k in &order {
        let models = bundle.stage(k)?;
        current = stage_pass(models, &current, None, Transfer::Wct, 0.0)?;
    }
    current.clamp01();
    Ok(current)
}

#[derive(Clone, Copy, PartialEq)]
enum Transfer {
    Wct,
    Adain,
}

/// Encode, transform at the deepest tap, decode, crop back.
fn stage_pass(
    models: &StageModels,
    content: &ImageTensor,
    style: Option<&ImageTensor>,
    transfer: Transfer,
    alpha: f64,
) -> Result<ImageTensor> {
    let divisor = models.encoder.spec().divisor();
    let (content_p, (h, w)) = content.pad_to_multiple(divisor);
    let taps_c = models.encoder.encode(content_p.data())?;
    let f_c = taps_c.output();
    let feature = if alpha == 0.0 || style.is_none() {
        f_c.clone()
    } else {
        let (style_p, _) = style.expect("checked").pad_to_multiple(divisor);
        let taps_s = models.encoder.encode(style_p.data())?;
        let f_s = taps_s.output();
        match transfer {
            Transfer::Wct => wct_transfer(f_c, f_s, alpha)?,
            Transfer::Adain => {
                let t = adain_transfer(f_c, f_s, DEFAULT_ADAIN_EPS)?;
                if alpha == 1.0 {
                    t
                } else {
                    crate::feature::FeatureMap::new(t.data() * alpha + f_c.data() * (1.0 - alpha))?
                }
            }
        }
    };
    let d_trace = models.decoder.forward(feature.data())?;
    let out = ImageTensor::new(models.decoder.output(&d_trace).clone())?;
    out.crop(0, 0, h, w)
}

/// Options for [`gatys_stylize`].
#[derive(Debug, Clone)]
pub struct GatysOptions {
    pub iterations: usize,
    pub weights: LossWeights,
}

impl Default for GatysOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            weights: LossWeights::default(),
        }
    }
}

/// Result of an optimization-based stylization run.
#[derive(Debug, Clone)]
pub struct GatysOutcome {
    pub image: ImageTensor,
    /// Objective after every accepted quasi-Newton step, non-increasing.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Optimization-based style transfer: starting from the content image,
/// minimize the content distance (at the encoder's content-matching layer)
/// plus `lambda_s` times the Gram distances over every stage tap, using a
/// limited-memory quasi-Newton solver. A non-finite objective aborts with the
/// best image so far.
pub fn gatys_stylize(
    content: &ImageTensor,
    style: &ImageTensor,
    encoder: &Network,
    opts: &GatysOptions,
) -> Result<GatysOutcome> {
    opts.weights.validate()?;
    let divisor = encoder.spec().divisor();
    let (content_p, (h, w)) = content.pad_to_multiple(divisor);
    let (style_p, _) = style.pad_to_multiple(divisor);
    let n_stages = encoder.tap_count();
    let content_op = encoder.content_op()?;

    let style_taps = encoder.encode(style_p.data())?;
    let gram_targets: Vec<ndarray::Array2<f64>> = (1..=n_stages)
        .map(|k| Ok(gram(style_taps.stage(k)?, true)))
        .collect::<Result<_>>()?;
    let content_trace = encoder.forward(content_p.data())?;
    let content_target = content_trace.output_at(content_op).clone();

    let dims = content_p.data().dim();
    let x0 = content_p.data().iter().copied().collect::<Vec<f64>>();
    let lbfgs_opts = LbfgsOptions {
        max_iters: opts.iterations,
        ..Default::default()
    };
    let lambda_s = opts.weights.lambda_s;

    let result = lbfgs(x0, &lbfgs_opts, |x, grad_out| {
        let img = Array3::from_shape_vec(dims, x.to_vec()).expect("shape matches");
        let trace = match encoder.forward(&img) {
            Ok(t) => t,
            Err(_) => {
                grad_out.fill(0.0);
                return f64::NAN;
            }
        };
        let mut seeds: Vec<(usize, Array3<f64>)> = Vec::with_capacity(n_stages + 1);
        let mut loss = 0.0;

        // Content term at the content-matching activation.
        let act = trace.output_at(content_op);
        let n = act.len() as f64;
        let diff = act - &content_target;
        loss += diff.iter().map(|v| v * v).sum::<f64>() / n;
        seeds.push((content_op, diff * (2.0 / n)));

        // Style terms over every stage tap.
        for k in 1..=n_stages {
            let op = encoder.tap_op(k).expect("stage in range");
            let f = trace.output_at(op);
            let (c, fh, fw) = f.dim();
            let flat = f.to_shape((c, fh * fw)).expect("contiguous");
            let mut g = flat.dot(&flat.t());
            let norm = (c * fh * fw) as f64;
            g.mapv_inplace(|v| v / norm);
            let diff = &g - &gram_targets[k - 1];
            let c2 = (c * c) as f64;
            loss += lambda_s * diff.iter().map(|v| v * v).sum::<f64>() / c2;
            let scale = 4.0 * lambda_s / (c2 * norm);
            let grad_flat = diff.dot(&flat) * scale;
            seeds.push((
                op,
                grad_flat
                    .into_shape_with_order((c, fh, fw))
                    .expect("shape matches"),
            ));
        }

        let grad = encoder.backward(&img, &trace, &seeds, None);
        grad_out.copy_from_slice(grad.as_slice().expect("standard layout"));
        loss
    });

    let img = Array3::from_shape_vec(dims, result.x).expect("shape matches");
    let mut image = ImageTensor::new(img)?.crop(0, 0, h, w)?;
    image.clamp01();
    Ok(GatysOutcome {
        image,
        history: result.history,
        converged: result.converged,
    })
}

/// Largest square side (a multiple of `2^(max_stage-1)`) whose estimated
/// peak activation memory fits the budget. Errors when even the minimum
/// side does not fit.
pub fn probe_max_resolution(
    spec: &ArchSpec,
    memory_budget_bytes: u128,
    bytes_per_scalar: usize,
) -> Result<usize> {
    spec.validate_for_build()?;
    let d = spec.divisor();
    let fits = |side: usize| -> Result<bool> {
        Ok(
            estimate_peak_activation_memory(spec, side, side, bytes_per_scalar)?
                <= memory_budget_bytes,
        )
    };
    if !fits(d)? {
        return Err(Error::Infeasible(format!(
            "budget below the minimum {d}x{d} footprint"
        )));
    }
    // Exponential growth then binary search over multiples of d.
    let mut lo = 1usize; // in units of d
    while fits(lo * 2 * d)? {
        lo *= 2;
    }
    let mut hi = lo * 2; // first known not-to-fit
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if fits(mid * d)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo * d)
}
