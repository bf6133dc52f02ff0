//! Concrete networks built from an [`ArchSpec`]: parameter storage, forward
//! traces, and reverse-mode gradients for 3x3 convolutions, 2x2 max-pooling,
//! and nearest-neighbor upsampling.

use ndarray::{Array1, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{select_filters_l1, ArchSpec, KERNEL};
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, FeatureTaps};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Encoder,
    Decoder,
}

/// One convolution's parameters. All convolutions are 3x3, stride 1,
/// zero-padded to preserve resolution.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub name: String,
    /// Shape `(out_channels, in_channels, 3, 3)`.
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    /// Whether a ReLU is fused onto the output.
    pub relu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpKind {
    Conv(usize),
    Pool,
    Upsample,
}

/// A network instantiated from a spec: an op sequence over shared parameter
/// storage. Immutable after construction except through training.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ArchSpec,
    role: Role,
    convs: Vec<ConvParams>,
    ops: Vec<OpKind>,
    /// Op index of the stage-`k` tap output (encoders only), `taps[k-1]`.
    taps: Vec<usize>,
    /// Op index of the content-matching activation (second convolution of
    /// stage `min(4, max_stage)` when present, else that stage's tap).
    content_tap: Option<usize>,
}

/// Per-op activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    outputs: Vec<Array3<f64>>,
}

impl Trace {
    pub fn output_at(&self, op: usize) -> &Array3<f64> {
        &self.outputs[op]
    }
}

/// Parameter gradients aligned with a network's convolutions.
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    convs: Vec<(Array4<f64>, Array1<f64>)>,
}

impl NetworkGrads {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            convs: net
                .convs
                .iter()
                .map(|c| (Array4::zeros(c.weight.dim()), Array1::zeros(c.bias.dim())))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for (w, b) in &mut self.convs {
            w.fill(0.0);
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.convs {
            w.mapv_inplace(|v| v * s);
            b.mapv_inplace(|v| v * s);
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.convs
            .iter()
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl Network {
    fn from_layout(
        spec: ArchSpec,
        role: Role,
        convs: Vec<ConvParams>,
        ops: Vec<OpKind>,
        taps: Vec<usize>,
        content_tap: Option<usize>,
    ) -> Self {
        Self {
            spec,
            role,
            convs,
            ops,
            taps,
            content_tap,
        }
    }

    /// Builds an encoder with zeroed parameters (used by checkpoint loading).
    pub fn encoder_zeroed(spec: &ArchSpec) -> Result<Self> {
        spec.validate_for_build()?;
        let mut convs = Vec::new();
        let mut ops = Vec::new();
        let mut taps = Vec::new();
        let mut content_tap = None;
        let content_stage = spec.max_stage().min(4);
        let mut prev = 3usize;
        for (s, stage) in spec.stages().iter().enumerate() {
            if s > 0 {
                ops.push(OpKind::Pool);
            }
            for (j, &width) in stage.iter().enumerate() {
                convs.push(ConvParams {
                    name: format!("conv{}_{}", s + 1, j + 1),
                    weight: Array4::zeros((width, prev, KERNEL, KERNEL)),
                    bias: Array1::zeros(width),
                    relu: true,
                });
                ops.push(OpKind::Conv(convs.len() - 1));
                let op_idx = ops.len() - 1;
                if j == 0 {
                    taps.push(op_idx);
                    if s + 1 == content_stage && stage.len() < 2 {
                        content_tap = Some(op_idx);
                    }
                }
                if j == 1 && s + 1 == content_stage {
                    content_tap = Some(op_idx);
                }
                prev = width;
            }
        }
        Ok(Self::from_layout(
            spec.clone(),
            Role::Encoder,
            convs,
            ops,
            taps,
            content_tap,
        ))
    }

    /// Builds the mirrored decoder with zeroed parameters: reversed encoder
    /// convolutions (inputs and outputs swapped), pools replaced by
    /// nearest-neighbor upsampling, ReLU everywhere except the final
    /// 3-channel output convolution.
    pub fn decoder_zeroed(spec: &ArchSpec) -> Result<Self> {
        spec.validate_for_build()?;
        let encoder = Self::encoder_zeroed(spec)?;
        let mut convs = Vec::new();
        let mut ops = Vec::new();
        let n_convs = encoder.convs.len();
        for op in encoder.ops.iter().rev() {
            match op {
                OpKind::Pool => ops.push(OpKind::Upsample),
                OpKind::Conv(ci) => {
                    let mirror = &encoder.convs[*ci];
                    let (co, cin, _, _) = mirror.weight.dim();
                    convs.push(ConvParams {
                        name: format!("d{}", mirror.name),
                        weight: Array4::zeros((cin, co, KERNEL, KERNEL)),
                        bias: Array1::zeros(cin),
                        relu: convs.len() + 1 < n_convs,
                    });
                    ops.push(OpKind::Conv(convs.len() - 1));
                }
                OpKind::Upsample => unreachable!("encoders have no upsampling"),
            }
        }
        Ok(Self::from_layout(
            spec.clone(),
            Role::Decoder,
            convs,
            ops,
            Vec::new(),
            None,
        ))
    }

    /// Randomly initializes every convolution with fan-in-scaled uniform
    /// weights, `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`, and zero biases.
    pub fn init_params<R: Rng>(&mut self, rng: &mut R) {
        for conv in &mut self.convs {
            let fan_in = conv.weight.dim().1 * KERNEL * KERNEL;
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in conv.weight.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
            conv.bias.fill(0.0);
        }
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn convs(&self) -> &[ConvParams] {
        &self.convs
    }

    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    /// Op index whose output is the stage-`k` tap.
    pub fn tap_op(&self, k: usize) -> Result<usize> {
        self.taps
            .get(k.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Arg(format!("stage {k} out of range 1..={}", self.taps.len())))
    }

    /// Op index of the content-matching activation (encoders only).
    pub fn content_op(&self) -> Result<usize> {
        self.content_tap
            .ok_or_else(|| Error::Arg("network has no content tap".into()))
    }

    /// Index of the final op (its output is the network output).
    pub fn last_op(&self) -> usize {
        self.ops.len() - 1
    }

    pub fn input_channels(&self) -> usize {
        match self.role {
            Role::Encoder => 3,
            Role::Decoder => self.spec.output_channels().expect("buildable spec"),
        }
    }

    pub fn num_params(&self) -> u64 {
        self.convs
            .iter()
            .map(|c| (c.weight.len() + c.bias.len()) as u64)
            .sum()
    }

    /// SHA-256 over all parameters in order (little-endian f64 bytes).
    pub fn param_digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for conv in &self.convs {
            for v in conv.weight.iter().chain(conv.bias.iter()) {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Runs the network, recording every op output.
    pub fn forward(&self, input: &Array3<f64>) -> Result<Trace> {
        let (c, h, w) = input.dim();
        if c != self.input_channels() {
            return Err(Error::Arg(format!(
                "expected {} input channels, got {c}",
                self.input_channels()
            )));
        }
        if self.role == Role::Encoder {
            let d = self.spec.divisor();
            if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
                return Err(Error::Arg(format!(
                    "input {h}x{w} must be a positive multiple of {d}"
                )));
            }
        }
        let mut outputs = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let x = outputs.last().unwrap_or(input);
            let out = match op {
                OpKind::Conv(ci) => {
                    let conv = &self.convs[*ci];
                    conv_forward(&conv.weight, &conv.bias, conv.relu, x)
                }
                OpKind::Pool => pool_forward(x),
                OpKind::Upsample => upsample_forward(x),
            };
            outputs.push(out);
        }
        Ok(Trace { outputs })
    }

    /// Final op output of a trace.
    pub fn output<'t>(&self, trace: &'t Trace) -> &'t Array3<f64> {
        trace.outputs.last().expect("networks have at least one op")
    }

    /// Copies the stage taps of an encoder trace into a [`FeatureTaps`].
    pub fn taps(&self, trace: &Trace) -> Result<FeatureTaps> {
        if self.role != Role::Encoder {
            return Err(Error::Arg("only encoders expose taps".into()));
        }
        let maps = self
            .taps
            .iter()
            .map(|&op| FeatureMap::new(trace.outputs[op].clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureTaps::new(maps))
    }

    /// Convenience: forward then extract taps.
    pub fn encode(&self, input: &Array3<f64>) -> Result<FeatureTaps> {
        let trace = self.forward(input)?;
        self.taps(&trace)
    }

    /// Reverse-mode sweep. `seed_grads` pairs op indices with dLoss/d(output
    /// of that op); contributions on the same op accumulate. Returns
    /// dLoss/d(input). When `grads` is given, parameter gradients are
    /// accumulated into it (frozen networks simply pass `None`).
    pub fn backward(
        &self,
        input: &Array3<f64>,
        trace: &Trace,
        seed_grads: &[(usize, Array3<f64>)],
        mut grads: Option<&mut NetworkGrads>,
    ) -> Array3<f64> {
        let n = self.ops.len();
        let mut cur = Array3::zeros(self.output(trace).dim());
        for op_idx in (0..n).rev() {
            for (at, g) in seed_grads {
                if *at == op_idx {
                    debug_assert_eq!(g.dim(), cur.dim(), "seed gradient shape mismatch");
                    cur += g;
                }
            }
            let op_input = if op_idx == 0 {
                input
            } else {
                &trace.outputs[op_idx - 1]
            };
            cur = match self.ops[op_idx] {
                OpKind::Conv(ci) => {
                    let conv = &self.convs[ci];
                    let conv_grads = grads.as_deref_mut().map(|g| &mut g.convs[ci]);
                    conv_backward(conv, op_input, &trace.outputs[op_idx], &cur, conv_grads)
                }
                OpKind::Pool => pool_backward(op_input, &cur),
                OpKind::Upsample => upsample_backward(&cur),
            };
        }
        cur
    }

    /// Copies this encoder truncated at the stage-`k` tap (the stage-`k`
    /// encoder of a coarse-to-fine pair), parameters included.
    pub fn truncated_to_tap(&self, k: usize) -> Result<Network> {
        if self.role != Role::Encoder {
            return Err(Error::Arg("only encoders can be truncated at a tap".into()));
        }
        let spec = self.spec.up_to_tap(k)?;
        let mut out = Network::encoder_zeroed(&spec)?;
        for (dst, src) in out.convs.iter_mut().zip(&self.convs) {
            dst.weight.assign(&src.weight);
            dst.bias.assign(&src.bias);
        }
        Ok(out)
    }

    /// Parameter tensors in checkpoint order: `(name, shape, values)`.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for conv in &self.convs {
            let (co, ci, kh, kw) = conv.weight.dim();
            out.push((
                format!("{}.weight", conv.name),
                vec![co, ci, kh, kw],
                conv.weight.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("{}.bias", conv.name),
                vec![co],
                conv.bias.as_slice().expect("standard layout"),
            ));
        }
        out
    }

    /// Fills a parameter tensor by name (checkpoint loading).
    pub fn fill_tensor(&mut self, name: &str, values: &[f64]) -> Result<()> {
        for conv in &mut self.convs {
            let slot: &mut [f64] = if name == format!("{}.weight", conv.name) {
                conv.weight.as_slice_mut().expect("standard layout")
            } else if name == format!("{}.bias", conv.name) {
                conv.bias.as_slice_mut().expect("standard layout")
            } else {
                continue;
            };
            if slot.len() != values.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has {} values, expected {}",
                    values.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(values);
            return Ok(());
        }
        Err(Error::Checkpoint(format!("unknown tensor {name}")))
    }

    /// Mutable views over all parameters, matching [`NetworkGrads::slices`] order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.convs
            .iter_mut()
            .flat_map(|c| {
                [
                    c.weight.as_slice_mut().expect("standard layout"),
                    c.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Builds an encoder with freshly initialized parameters.
pub fn build_encoder<R: Rng>(spec: &ArchSpec, rng: &mut R) -> Result<Network> {
    let mut net = Network::encoder_zeroed(spec)?;
    net.init_params(rng);
    Ok(net)
}

/// Builds the mirrored decoder with freshly initialized parameters.
pub fn build_mirror_decoder<R: Rng>(spec: &ArchSpec, rng: &mut R) -> Result<Network> {
    let mut net = Network::decoder_zeroed(spec)?;
    net.init_params(rng);
    Ok(net)
}

/// Initializes a student encoder from a teacher by keeping, per layer, the
/// output filters with the largest L1 norms and slicing input channels to the
/// filters kept in the previous layer. The first layer keeps all 3 image
/// channels. With `student_spec` equal to the teacher's spec this reproduces
/// the teacher exactly.
pub fn init_student_from_teacher(teacher: &Network, student_spec: &ArchSpec) -> Result<Network> {
    if teacher.role != Role::Encoder {
        return Err(Error::Arg(
            "student initialization expects an encoder teacher".into(),
        ));
    }
    if !student_spec.fits_within(teacher.spec()) {
        return Err(Error::Spec(
            "student spec must match the teacher layer-for-layer with widths no larger".into(),
        ));
    }
    let mut student = Network::encoder_zeroed(student_spec)?;
    let mut kept_in: Vec<usize> = (0..3).collect();
    for (s_conv, t_conv) in student.convs.iter_mut().zip(&teacher.convs) {
        let keep = s_conv.weight.dim().0;
        let kept_out = select_filters_l1(&t_conv.weight, keep)?;
        for (fi, &tf) in kept_out.iter().enumerate() {
            for (ii, &ti) in kept_in.iter().enumerate() {
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        s_conv.weight[[fi, ii, ky, kx]] = t_conv.weight[[tf, ti, ky, kx]];
                    }
                }
            }
            s_conv.bias[fi] = t_conv.bias[tf];
        }
        kept_in = kept_out;
    }
    Ok(student)
}

fn conv_forward(
    weight: &Array4<f64>,
    bias: &Array1<f64>,
    relu: bool,
    x: &Array3<f64>,
) -> Array3<f64> {
    let (co, ci, _, _) = weight.dim();
    let (cx, h, w) = x.dim();
    debug_assert_eq!(ci, cx);
    let (hp, wp) = (h + 2, w + 2);
    let xp = pad_zero(x, hp, wp);
    let ws = weight.as_slice().expect("standard layout");
    let mut out = vec![0.0f64; co * h * w];
    for o in 0..co {
        let out_ch = &mut out[o * h * w..][..h * w];
        out_ch.fill(bias[o]);
        for i in 0..ci {
            let xp_ch = &xp[i * hp * wp..][..hp * wp];
            let wbase = (o * ci + i) * KERNEL * KERNEL;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = ws[wbase + ky * KERNEL + kx];
                    for y in 0..h {
                        let src = &xp_ch[(y + ky) * wp + kx..][..w];
                        let dst = &mut out_ch[y * w..][..w];
                        for t in 0..w {
                            dst[t] += wv * src[t];
                        }
                    }
                }
            }
        }
    }
    if relu {
        for v in &mut out {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    Array3::from_shape_vec((co, h, w), out).expect("shape matches")
}

fn conv_backward(
    conv: &ConvParams,
    x: &Array3<f64>,
    out: &Array3<f64>,
    grad_out: &Array3<f64>,
    grads: Option<&mut (Array4<f64>, Array1<f64>)>,
) -> Array3<f64> {
    let (co, ci, _, _) = conv.weight.dim();
    let (_, h, w) = x.dim();
    let (hp, wp) = (h + 2, w + 2);

    // ReLU mask: gradients pass only where the fused activation fired.
    let mut g = grad_out.as_slice().expect("standard layout").to_vec();
    if conv.relu {
        let os = out.as_slice().expect("standard layout");
        for (gv, &ov) in g.iter_mut().zip(os) {
            if ov <= 0.0 {
                *gv = 0.0;
            }
        }
    }

    let xp = pad_zero(x, hp, wp);
    let ws = conv.weight.as_slice().expect("standard layout");
    let mut gxp = vec![0.0f64; ci * hp * wp];

    if let Some((gw, gb)) = grads {
        let gws = gw.as_slice_mut().expect("standard layout");
        for o in 0..co {
            let g_ch = &g[o * h * w..][..h * w];
            gb[o] += g_ch.iter().sum::<f64>();
            for i in 0..ci {
                let xp_ch = &xp[i * hp * wp..][..hp * wp];
                let gxp_ch = &mut gxp[i * hp * wp..][..hp * wp];
                let wbase = (o * ci + i) * KERNEL * KERNEL;
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = ws[wbase + ky * KERNEL + kx];
                        let mut acc = 0.0;
                        for y in 0..h {
                            let grow = &g_ch[y * w..][..w];
                            let xrow = &xp_ch[(y + ky) * wp + kx..][..w];
                            let gxrow = &mut gxp_ch[(y + ky) * wp + kx..][..w];
                            for t in 0..w {
                                acc += grow[t] * xrow[t];
                                gxrow[t] += wv * grow[t];
                            }
                        }
                        gws[wbase + ky * KERNEL + kx] += acc;
                    }
                }
            }
        }
    } else {
        for o in 0..co {
            let g_ch = &g[o * h * w..][..h * w];
            for i in 0..ci {
                let gxp_ch = &mut gxp[i * hp * wp..][..hp * wp];
                let wbase = (o * ci + i) * KERNEL * KERNEL;
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = ws[wbase + ky * KERNEL + kx];
                        for y in 0..h {
                            let grow = &g_ch[y * w..][..w];
                            let gxrow = &mut gxp_ch[(y + ky) * wp + kx..][..w];
                            for t in 0..w {
                                gxrow[t] += wv * grow[t];
                            }
                        }
                    }
                }
            }
        }
    }

    // Crop the padded input gradient back to H x W.
    let mut gin = vec![0.0f64; ci * h * w];
    for i in 0..ci {
        for y in 0..h {
            let src = &gxp[i * hp * wp + (y + 1) * wp + 1..][..w];
            gin[i * h * w + y * w..][..w].copy_from_slice(src);
        }
    }
    Array3::from_shape_vec((ci, h, w), gin).expect("shape matches")
}

fn pad_zero(x: &Array3<f64>, hp: usize, wp: usize) -> Vec<f64> {
    let (c, h, w) = x.dim();
    let xs = x.as_slice().expect("standard layout");
    let mut xp = vec![0.0f64; c * hp * wp];
    for i in 0..c {
        for y in 0..h {
            let src = &xs[i * h * w + y * w..][..w];
            xp[i * hp * wp + (y + 1) * wp + 1..][..w].copy_from_slice(src);
        }
    }
    xp
}

fn pool_forward(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0, "pooled dims must be even");
    let (ho, wo) = (h / 2, w / 2);
    Array3::from_shape_fn((c, ho, wo), |(i, y, x_)| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x[[i, 2 * y + dy, 2 * x_ + dx]]);
            }
        }
        m
    })
}

fn pool_backward(x: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut gin = Array3::zeros((c, h, w));
    let (_, ho, wo) = grad_out.dim();
    for i in 0..c {
        for y in 0..ho {
            for x_ in 0..wo {
                // First maximum in scan order receives the gradient.
                let (mut by, mut bx, mut best) = (0usize, 0usize, f64::NEG_INFINITY);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = x[[i, 2 * y + dy, 2 * x_ + dx]];
                        if v > best {
                            best = v;
                            by = dy;
                            bx = dx;
                        }
                    }
                }
                gin[[i, 2 * y + by, 2 * x_ + bx]] += grad_out[[i, y, x_]];
            }
        }
    }
    gin
}

fn upsample_forward(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(i, y, x_)| x[[i, y / 2, x_ / 2]])
}

fn upsample_backward(grad_out: &Array3<f64>) -> Array3<f64> {
    let (c, ho, wo) = grad_out.dim();
    let (h, w) = (ho / 2, wo / 2);
    let mut gin = Array3::zeros((c, h, w));
    for i in 0..c {
        for y in 0..ho {
            for x_ in 0..wo {
                gin[[i, y / 2, x_ / 2]] += grad_out[[i, y, x_]];
            }
        }
    }
    gin
}
