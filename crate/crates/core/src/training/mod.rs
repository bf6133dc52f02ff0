//! The two-step training procedure: (1) train a collaborator decoder against
//! a frozen encoder, (2) distill a narrow student encoder against the frozen
//! collaborator with linear-embedding taps. Also hosts the joint-pair
//! training and cross-pairing harness used to demonstrate that independently
//! trained encoder-decoder pairs do not interoperate.

mod checkpoint;
mod data;
mod metrics;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use data::{generate_texture, load_corpus, Corpus, CorpusSource, TextureFamily};
pub use metrics::{write_jsonl, MetricsRecord};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{
    build_encoder, build_mirror_decoder, init_student_from_teacher, ArchSpec, Network, NetworkGrads,
};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{
    embedding_loss, reconstruction_loss_wrt_image_given, stylization_loss_wrt_image,
    total_distill_loss, EmbeddingMap, LossWeights,
};
use crate::optim::Adam;
use crate::transforms::{adain_backward, adain_transfer, DEFAULT_ADAIN_EPS};

/// Training configuration. Defaults follow the reference protocol
/// (learning rate 1e-4, batch 16, 256-crops from 300-resized images,
/// 20 epochs); [`HyperParams::desk`] switches to fast CPU-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Images are resized square to this side before cropping.
    pub resize: usize,
    /// Random crop side used for training patches.
    pub crop: usize,
    pub epochs: usize,
    /// Optional hard cap on optimizer steps across all epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Metrics are recorded every this many steps (plus first and last).
    pub log_every: u64,
    pub weights: LossWeights,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            resize: 300,
            crop: 256,
            epochs: 20,
            max_steps: None,
            log_every: 50,
            weights: LossWeights::default(),
        }
    }
}

impl HyperParams {
    /// Desk-scale defaults: 48-resize / 32-crop patches, small batches, and a
    /// learning rate sized for a few hundred steps of CPU training.
    pub fn desk() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 4,
            resize: 48,
            crop: 32,
            epochs: 4,
            max_steps: None,
            log_every: 10,
            weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Arg("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Arg("batch size and epochs must be positive".into()));
        }
        if self.crop == 0 || self.crop > self.resize {
            return Err(Error::Arg(
                "crop must be positive and at most resize".into(),
            ));
        }
        self.weights.validate()
    }
}

/// Which collaboration the decoder realizes: image reconstruction or
/// feature-statistics style transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collaboration {
    Reconstruction,
    Stylization,
}

/// Options for [`collaborative_distill`].
#[derive(Debug, Clone, Copy)]
pub struct DistillOptions {
    pub collaboration: Collaboration,
    /// Weight on the collaboration term. 1 realizes the full combined
    /// objective; 0 drops the decoder path entirely (the embedding-only
    /// ablation). The embedding side is ablated by setting `beta` to 0 in
    /// the loss weights.
    pub collab_weight: f64,
    pub seed: u64,
}

impl DistillOptions {
    pub fn new(collaboration: Collaboration, seed: u64) -> Self {
        Self {
            collaboration,
            collab_weight: 1.0,
            seed,
        }
    }
}

/// Result of a training run. `diverged_at` is set when a non-finite loss
/// aborted the run; the checkpoint then holds the last finite parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub diverged_at: Option<u64>,
}

// Seed streams carved out of one run seed.
const STREAM_INIT: u64 = 1;
const STREAM_CONTENT: u64 = 2;
const STREAM_STYLE: u64 = 3;
const STREAM_EMBED: u64 = 4;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Default, Clone, Copy)]
struct Components {
    pixel: f64,
    perceptual: f64,
    content: f64,
    style: f64,
    collab: f64,
    total: f64,
}

impl Components {
    fn scale(&mut self, s: f64) {
        self.pixel *= s;
        self.perceptual *= s;
        self.content *= s;
        self.style *= s;
        self.collab *= s;
        self.total *= s;
    }
}

struct MetricsLog {
    records: Vec<MetricsRecord>,
    log_every: u64,
    pending: Option<MetricsRecord>,
}

impl MetricsLog {
    fn new(log_every: u64) -> Self {
        Self {
            records: Vec::new(),
            log_every: log_every.max(1),
            pending: None,
        }
    }

    /// Keeps every step as pending; flushes first and periodic steps into the
    /// log. [`MetricsLog::finish`] flushes the last step unconditionally.
    fn record(&mut self, rec: MetricsRecord) {
        let keep = rec.step == 1 || rec.step % self.log_every == 0;
        self.pending = Some(rec);
        if keep {
            self.flush_pending();
        }
    }

    fn flush_pending(&mut self) {
        if let Some(rec) = self.pending.take() {
            if self.records.last().map(|r| r.step) != Some(rec.step) {
                self.records.push(rec);
            }
        }
    }

    fn finish(mut self) -> Vec<MetricsRecord> {
        self.flush_pending();
        self.records
    }
}

/// Step 1: trains a mirrored decoder for the stage-`stage` pair of `encoder`,
/// which stays frozen throughout. Reconstruction collaboration needs only the
/// content corpus; stylization also draws style patches from `style`.
///
/// The returned checkpoint holds the (truncated) frozen encoder under
/// `"encoder"` and the trained decoder under `"decoder"`.
pub fn train_decoder(
    encoder: &Network,
    stage: usize,
    content: &Corpus,
    style: Option<&Corpus>,
    hp: &HyperParams,
    collab: Collaboration,
    seed: u64,
) -> Result<TrainOutcome> {
    hp.validate()?;
    let enc = encoder.truncated_to_tap(stage)?;
    let k = enc.spec().max_stage();
    let mut decoder = build_mirror_decoder(enc.spec(), &mut stream_rng(seed, STREAM_INIT))?;
    let style = match (collab, style) {
        (Collaboration::Stylization, None) => {
            return Err(Error::Arg(
                "stylization collaboration needs a style corpus".into(),
            ))
        }
        (_, s) => s,
    };

    let mut content_rng = stream_rng(seed, STREAM_CONTENT);
    let mut style_rng = stream_rng(seed, STREAM_STYLE);
    let mut adam = Adam::new(hp.learning_rate);
    let mut grads = NetworkGrads::zeros_like(&decoder);
    let mut log = MetricsLog::new(hp.log_every);
    let mut step = 0u64;
    let mut diverged_at = None;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let dec_last_op = decoder.last_op();

    'outer: for epoch in 0..hp.epochs {
        for batch in content.epoch_batches(hp.batch_size, &mut content_rng) {
            if let Some(max) = hp.max_steps {
                if step >= max {
                    break 'outer;
                }
            }
            step += 1;
            let start = std::time::Instant::now();
            grads.zero();
            let mut acc = Components::default();
            for img in &batch {
                match collab {
                    Collaboration::Reconstruction => {
                        let t_o = enc.forward(img.data())?;
                        let taps_o = enc.taps(&t_o)?;
                        let feature = enc.output(&t_o);
                        let d_trace = decoder.forward(feature)?;
                        let i_r = ImageTensor::new(decoder.output(&d_trace).clone())?;
                        let (loss, g_img) = reconstruction_loss_wrt_image_given(
                            &i_r,
                            img,
                            &taps_o,
                            &enc,
                            k,
                            &hp.weights,
                        )?;
                        decoder.backward(
                            feature,
                            &d_trace,
                            &[(dec_last_op, g_img)],
                            Some(&mut grads),
                        );
                        acc.pixel += loss.pixel;
                        acc.perceptual += loss.perceptual;
                        acc.total += loss.value;
                    }
                    Collaboration::Stylization => {
                        let style_corpus = style.expect("checked above");
                        let idx = style_rng.random_range(0..style_corpus.len());
                        let style_img = style_corpus.patch(idx, &mut style_rng);
                        let taps_c = enc.encode(img.data())?;
                        let taps_s = enc.encode(style_img.data())?;
                        let f_st =
                            adain_transfer(taps_c.output(), taps_s.output(), DEFAULT_ADAIN_EPS)?;
                        let d_trace = decoder.forward(f_st.data())?;
                        let i_st = ImageTensor::new(decoder.output(&d_trace).clone())?;
                        let (loss, g_img) =
                            stylization_loss_wrt_image(&i_st, &taps_c, &taps_s, &enc, &hp.weights)?;
                        decoder.backward(
                            f_st.data(),
                            &d_trace,
                            &[(dec_last_op, g_img)],
                            Some(&mut grads),
                        );
                        acc.content += loss.content;
                        acc.style += loss.style;
                        acc.total += loss.value;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grads.scale(inv);
            acc.scale(inv);

            if !acc.total.is_finite() {
                diverged_at = Some(step);
                break 'outer;
            }
            if step == 1 {
                initial_loss = acc.total;
            }
            final_loss = acc.total;
            let mut params = decoder.param_slices_mut();
            adam.step(&mut params, &grads.slices());

            log.record(make_record(
                step,
                epoch,
                collab,
                &acc,
                None,
                start.elapsed(),
            ));
        }
    }
    let metrics = log.finish();

    let checkpoint = Checkpoint {
        step,
        hyperparams: hp.clone(),
        networks: vec![("encoder".into(), enc), ("decoder".into(), decoder)],
        embeddings: Vec::new(),
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        initial_loss,
        final_loss,
        diverged_at,
    })
}

/// Step 2: collaborative distillation of a narrow student encoder against a
/// frozen teacher and its frozen collaborator decoder.
///
/// The decoder determines the stage-`k` pair; the student is initialized from
/// the teacher's largest filters; one embedding map is learned per tap
/// (stages `1..k` plus the stage output, whose map also adapts the student
/// output to the decoder's expected channels).
///
/// The returned checkpoint holds the student under `"student"` plus all
/// embedding maps.
pub fn collaborative_distill(
    teacher: &Network,
    decoder: &Network,
    student_spec: &ArchSpec,
    content: &Corpus,
    style: Option<&Corpus>,
    hp: &HyperParams,
    opts: &DistillOptions,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if !(opts.collab_weight.is_finite() && opts.collab_weight >= 0.0) {
        return Err(Error::Arg("collab_weight must be non-negative".into()));
    }
    let collab = opts.collaboration;
    let seed = opts.seed;
    let collab_weight = opts.collab_weight;
    let k = decoder.spec().max_stage();
    let teacher_k = if teacher.spec() == decoder.spec() {
        teacher.clone()
    } else {
        let t = teacher.truncated_to_tap(k)?;
        if t.spec() != decoder.spec() {
            return Err(Error::Config(format!(
                "decoder spec {:?} is not the stage-{k} pair of the teacher",
                decoder.spec().stages()
            )));
        }
        t
    };
    let s_spec = if student_spec.max_stage() == k && student_spec.fits_within(teacher_k.spec()) {
        student_spec.clone()
    } else {
        let s = student_spec.up_to_tap(k)?;
        if !s.fits_within(teacher_k.spec()) {
            return Err(Error::Spec(
                "student spec does not fit within the teacher stage pair".into(),
            ));
        }
        s
    };
    if collab == Collaboration::Stylization && collab_weight > 0.0 && style.is_none() {
        return Err(Error::Arg(
            "stylization collaboration needs a style corpus".into(),
        ));
    }

    let mut student = init_student_from_teacher(&teacher_k, &s_spec)?;
    let mut embed_rng = stream_rng(seed, STREAM_EMBED);
    let teacher_taps = teacher_k.spec().tap_channels();
    let student_taps = s_spec.tap_channels();
    let mut qs: Vec<EmbeddingMap> = (1..=k)
        .map(|stage| {
            EmbeddingMap::init(
                teacher_taps[stage - 1],
                student_taps[stage - 1],
                stage,
                &mut embed_rng,
            )
        })
        .collect();
    if qs[k - 1].teacher_channels() != decoder.input_channels() {
        return Err(Error::Config(format!(
            "output embedding produces {} channels, decoder expects {}",
            qs[k - 1].teacher_channels(),
            decoder.input_channels()
        )));
    }

    let mut content_rng = stream_rng(seed, STREAM_CONTENT);
    let mut style_rng = stream_rng(seed, STREAM_STYLE);
    let mut adam = Adam::new(hp.learning_rate);
    let mut s_grads = NetworkGrads::zeros_like(&student);
    let mut q_grads: Vec<Array2<f64>> = qs.iter().map(|q| Array2::zeros(q.q.dim())).collect();
    let mut log = MetricsLog::new(hp.log_every);
    let mut step = 0u64;
    let mut diverged_at = None;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let dec_last_op = decoder.last_op();
    let beta = hp.weights.beta;

    'outer: for epoch in 0..hp.epochs {
        for batch in content.epoch_batches(hp.batch_size, &mut content_rng) {
            if let Some(max) = hp.max_steps {
                if step >= max {
                    break 'outer;
                }
            }
            step += 1;
            let start = std::time::Instant::now();
            s_grads.zero();
            q_grads.iter_mut().for_each(|g| g.fill(0.0));
            let mut acc = Components::default();
            let mut embed_acc = vec![0.0; k];

            for img in &batch {
                let taps_t = teacher_k.encode(img.data())?;
                let s_trace = student.forward(img.data())?;
                let taps_s = student.taps(&s_trace)?;

                // Embedding terms on every tap, scaled by beta.
                let mut embed_vals = Vec::with_capacity(k);
                let mut seeds: Vec<(usize, Array3<f64>)> = Vec::with_capacity(k + 1);
                for stage in 1..=k {
                    let e =
                        embedding_loss(taps_t.stage(stage)?, taps_s.stage(stage)?, &qs[stage - 1])?;
                    embed_acc[stage - 1] += e.value;
                    embed_vals.push(e.value);
                    q_grads[stage - 1].scaled_add(beta, &e.grad_q);
                    seeds.push((student.tap_op(stage)?, e.grad_student * beta));
                }

                // Collaboration term through the frozen decoder. A zero
                // weight skips the decoder path entirely.
                let collab_value = if collab_weight == 0.0 {
                    0.0
                } else {
                    match collab {
                        Collaboration::Reconstruction => {
                            let mapped = qs[k - 1].apply(taps_s.output())?;
                            let d_trace = decoder.forward(mapped.data())?;
                            let i_r = ImageTensor::new(decoder.output(&d_trace).clone())?;
                            let (loss, g_img) = reconstruction_loss_wrt_image_given(
                                &i_r,
                                img,
                                &taps_t,
                                &teacher_k,
                                k,
                                &hp.weights,
                            )?;
                            let g_img = g_img * collab_weight;
                            let g_mapped = decoder.backward(
                                mapped.data(),
                                &d_trace,
                                &[(dec_last_op, g_img)],
                                None,
                            );
                            let g_flat = flat_view(&g_mapped);
                            let (gq, g_s_out) = qs[k - 1].backward(taps_s.output(), &g_flat);
                            q_grads[k - 1] += &gq;
                            seeds.push((student.tap_op(k)?, g_s_out));
                            acc.pixel += loss.pixel;
                            acc.perceptual += loss.perceptual;
                            loss.value
                        }
                        Collaboration::Stylization => {
                            let style_corpus = style.expect("checked above");
                            let idx = style_rng.random_range(0..style_corpus.len());
                            let style_img = style_corpus.patch(idx, &mut style_rng);
                            let taps_ts = teacher_k.encode(style_img.data())?;
                            let ss_trace = student.forward(style_img.data())?;
                            let taps_ss = student.taps(&ss_trace)?;

                            let f_c = qs[k - 1].apply(taps_s.output())?;
                            let f_s = qs[k - 1].apply(taps_ss.output())?;
                            let f_st = adain_transfer(&f_c, &f_s, DEFAULT_ADAIN_EPS)?;
                            let d_trace = decoder.forward(f_st.data())?;
                            let i_st = ImageTensor::new(decoder.output(&d_trace).clone())?;
                            let (loss, g_img) = stylization_loss_wrt_image(
                                &i_st,
                                &taps_t,
                                &taps_ts,
                                &teacher_k,
                                &hp.weights,
                            )?;
                            let g_img = g_img * collab_weight;
                            let g_fst = decoder.backward(
                                f_st.data(),
                                &d_trace,
                                &[(dec_last_op, g_img)],
                                None,
                            );
                            let (g_fc, g_fs) =
                                adain_backward(&f_c, &f_s, DEFAULT_ADAIN_EPS, &g_fst)?;
                            let (gq_c, g_sc_out) =
                                qs[k - 1].backward(taps_s.output(), &flat_view(&g_fc));
                            let (gq_s, g_ss_out) =
                                qs[k - 1].backward(taps_ss.output(), &flat_view(&g_fs));
                            q_grads[k - 1] += &gq_c;
                            q_grads[k - 1] += &gq_s;
                            seeds.push((student.tap_op(k)?, g_sc_out));
                            // Style image pass contributes only through the output tap.
                            student.backward(
                                style_img.data(),
                                &ss_trace,
                                &[(student.tap_op(k)?, g_ss_out)],
                                Some(&mut s_grads),
                            );
                            acc.content += loss.content;
                            acc.style += loss.style;
                            loss.value
                        }
                    }
                };
                student.backward(img.data(), &s_trace, &seeds, Some(&mut s_grads));
                acc.collab += collab_weight * collab_value;
                acc.total += total_distill_loss(&embed_vals, collab_weight * collab_value, beta);
            }

            let inv = 1.0 / batch.len() as f64;
            s_grads.scale(inv);
            q_grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * inv));
            acc.scale(inv);
            embed_acc.iter_mut().for_each(|v| *v *= inv);

            if !acc.total.is_finite() {
                diverged_at = Some(step);
                break 'outer;
            }
            if step == 1 {
                initial_loss = acc.total;
            }
            final_loss = acc.total;

            {
                let mut params = student.param_slices_mut();
                let mut grad_slices = s_grads.slices();
                for (q, g) in qs.iter_mut().zip(&q_grads) {
                    params.push(q.q.as_slice_mut().expect("standard layout"));
                    grad_slices.push(g.as_slice().expect("standard layout"));
                }
                adam.step(&mut params, &grad_slices);
            }

            log.record(make_record(
                step,
                epoch,
                collab,
                &acc,
                Some(&embed_acc),
                start.elapsed(),
            ));
        }
    }
    let metrics = log.finish();

    let checkpoint = Checkpoint {
        step,
        hyperparams: hp.clone(),
        networks: vec![("student".into(), student)],
        embeddings: qs,
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        initial_loss,
        final_loss,
        diverged_at,
    })
}

/// An encoder-decoder pair trained jointly (both sides trainable) on pixel
/// reconstruction. This is the harness behind the exclusive-collaboration
/// experiment: pairs trained from different seeds share no feature basis.
pub struct JointPair {
    pub encoder: Network,
    pub decoder: Network,
    pub metrics: Vec<MetricsRecord>,
    pub final_loss: f64,
    pub diverged_at: Option<u64>,
}

/// Trains `encoder` and `decoder` jointly from scratch on pixel
/// reconstruction over `corpus`.
pub fn train_joint_pair(
    spec: &ArchSpec,
    corpus: &Corpus,
    hp: &HyperParams,
    seed: u64,
) -> Result<JointPair> {
    hp.validate()?;
    let mut init_rng = stream_rng(seed, STREAM_INIT);
    let mut encoder = build_encoder(spec, &mut init_rng)?;
    let mut decoder = build_mirror_decoder(spec, &mut init_rng)?;
    let mut content_rng = stream_rng(seed, STREAM_CONTENT);
    let mut adam = Adam::new(hp.learning_rate);
    let mut e_grads = NetworkGrads::zeros_like(&encoder);
    let mut d_grads = NetworkGrads::zeros_like(&decoder);
    let mut log = MetricsLog::new(hp.log_every);
    let mut step = 0u64;
    let mut diverged_at = None;
    let mut final_loss = f64::NAN;
    let enc_last_op = encoder.last_op();
    let dec_last_op = decoder.last_op();

    'outer: for epoch in 0..hp.epochs {
        for batch in corpus.epoch_batches(hp.batch_size, &mut content_rng) {
            if let Some(max) = hp.max_steps {
                if step >= max {
                    break 'outer;
                }
            }
            step += 1;
            let start = std::time::Instant::now();
            e_grads.zero();
            d_grads.zero();
            let mut total = 0.0;
            for img in &batch {
                let e_trace = encoder.forward(img.data())?;
                let feature = encoder.output(&e_trace);
                let d_trace = decoder.forward(feature)?;
                let out = decoder.output(&d_trace);
                let n = out.len() as f64;
                let diff = out - img.data();
                total += diff.iter().map(|v| v * v).sum::<f64>() / n;
                let g_out = diff * (2.0 / n);
                let g_feature = decoder.backward(
                    feature,
                    &d_trace,
                    &[(dec_last_op, g_out)],
                    Some(&mut d_grads),
                );
                encoder.backward(
                    img.data(),
                    &e_trace,
                    &[(enc_last_op, g_feature)],
                    Some(&mut e_grads),
                );
            }
            let inv = 1.0 / batch.len() as f64;
            e_grads.scale(inv);
            d_grads.scale(inv);
            total *= inv;
            if !total.is_finite() {
                diverged_at = Some(step);
                break 'outer;
            }
            final_loss = total;
            {
                let mut params = encoder.param_slices_mut();
                params.extend(decoder.param_slices_mut());
                let mut grads = e_grads.slices();
                grads.extend(d_grads.slices());
                adam.step(&mut params, &grads);
            }
            let mut acc = Components::default();
            acc.pixel = total;
            acc.total = total;
            log.record(make_record(
                step,
                epoch,
                Collaboration::Reconstruction,
                &acc,
                None,
                start.elapsed(),
            ));
        }
    }
    let metrics = log.finish();
    Ok(JointPair {
        encoder,
        decoder,
        metrics,
        final_loss,
        diverged_at,
    })
}

/// Mean pixel reconstruction error of `decoder(encoder(x))` over images,
/// optionally routing the encoder output through an embedding map.
pub fn eval_reconstruction_error(
    encoder: &Network,
    decoder: &Network,
    images: &[ImageTensor],
    map: Option<&EmbeddingMap>,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Arg("need at least one evaluation image".into()));
    }
    let out_ch = match map {
        Some(q) => q.teacher_channels(),
        None => encoder.spec().output_channels().unwrap_or(0),
    };
    if out_ch != decoder.input_channels() {
        return Err(Error::Arg(format!(
            "encoder produces {out_ch} channels, decoder expects {}",
            decoder.input_channels()
        )));
    }
    let mut total = 0.0;
    for img in images {
        let taps = encoder.encode(img.data())?;
        let feature = match map {
            Some(q) => q.apply(taps.output())?,
            None => taps.output().clone(),
        };
        let d_trace = decoder.forward(feature.data())?;
        let out = ImageTensor::new(decoder.output(&d_trace).clone())?;
        total += out.mse(img)?;
    }
    Ok(total / images.len() as f64)
}

/// Evaluates all four encoder x decoder combinations of two trained pairs.
/// `result[i][j]` is the mean reconstruction error of encoder `i` with
/// decoder `j`; the diagonal holds the matched pairs.
pub fn cross_pair_experiment(
    pairs: [(&Network, &Network); 2],
    eval_images: &[ImageTensor],
) -> Result<[[f64; 2]; 2]> {
    for (enc, dec) in pairs {
        if enc.num_params() == 0 || dec.num_params() == 0 {
            return Err(Error::Arg("networks must be built before pairing".into()));
        }
        if all_zero(enc) || all_zero(dec) {
            return Err(Error::Arg("cross-pairing expects trained networks".into()));
        }
    }
    let mut result = [[0.0; 2]; 2];
    for (i, (enc, _)) in pairs.iter().enumerate() {
        for (j, (_, dec)) in pairs.iter().enumerate() {
            result[i][j] = eval_reconstruction_error(enc, dec, eval_images, None)?;
        }
    }
    Ok(result)
}

fn all_zero(net: &Network) -> bool {
    net.convs()
        .iter()
        .all(|c| c.weight.iter().all(|&v| v == 0.0) && c.bias.iter().all(|&v| v == 0.0))
}

fn flat_view(a: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = a.dim();
    a.to_shape((c, h * w)).expect("contiguous").to_owned()
}

fn make_record(
    step: u64,
    epoch: usize,
    collab: Collaboration,
    acc: &Components,
    embed: Option<&[f64]>,
    wall: std::time::Duration,
) -> MetricsRecord {
    let is_distill = embed.is_some();
    MetricsRecord {
        step,
        epoch,
        pixel: (collab == Collaboration::Reconstruction).then_some(acc.pixel),
        perceptual: (collab == Collaboration::Reconstruction).then_some(acc.perceptual),
        content: (collab == Collaboration::Stylization).then_some(acc.content),
        style: (collab == Collaboration::Stylization).then_some(acc.style),
        embed: embed.map(|e| e.to_vec()).unwrap_or_default(),
        collab: is_distill.then_some(acc.collab),
        total: acc.total,
        wall_ms: Some(wall.as_secs_f64() * 1e3),
    }
}
