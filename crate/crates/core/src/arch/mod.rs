//! Network architecture descriptions, analytic counters, and filter selection.
//!
//! An [`ArchSpec`] declares a VGG-style encoder: up to five stages of 3x3
//! stride-1 convolutions (each followed by ReLU) with 2x2 max-pooling between
//! stages. The mirrored decoder reverses the convolutions, replaces each pool
//! with nearest-neighbor upsampling, and ends in a 3-channel output
//! convolution. Every parameter shape, FLOP count, and activation footprint is
//! a closed-form function of the spec.

mod network;

pub use network::{
    build_encoder, build_mirror_decoder, init_student_from_teacher, ConvParams, Network,
    NetworkGrads, Role, Trace,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution kernel side used throughout (3x3, stride 1, padding 1).
pub const KERNEL: usize = 3;

/// Reference layout up to the stage-5 tap: the VGG-19 convolution widths
/// `64,64 | 128,128 | 256,256,256,256 | 512,512,512,512 | 512`.
pub const REFERENCE_LAYOUT: [&[usize]; 5] = [
    &[64, 64],
    &[128, 128],
    &[256, 256, 256, 256],
    &[512, 512, 512, 512],
    &[512],
];

/// Declarative description of an encoder: per-stage convolution output widths.
///
/// `stages[k-1]` lists the output channels of stage `k`'s convolutions. An
/// empty spec (zero stages) is valid for the analytic counters but cannot be
/// built into a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    stages: Vec<Vec<usize>>,
}

impl ArchSpec {
    /// Builds a spec from explicit per-stage widths.
    pub fn from_stages(stages: Vec<Vec<usize>>) -> Result<Self> {
        if stages.len() > 5 {
            return Err(Error::Spec(format!(
                "at most 5 stages supported, got {}",
                stages.len()
            )));
        }
        for (s, widths) in stages.iter().enumerate() {
            if widths.is_empty() {
                return Err(Error::Spec(format!("stage {} has no convolutions", s + 1)));
            }
            if widths.iter().any(|&w| w == 0) {
                return Err(Error::Spec(format!("stage {} has a zero width", s + 1)));
            }
        }
        Ok(Self { stages })
    }

    /// Spec with no layers at all. Counts as zero everywhere.
    pub fn empty() -> Self {
        Self { stages: Vec::new() }
    }

    /// The VGG-19 reference layout truncated to `max_stage` full stages.
    pub fn reference(max_stage: usize) -> Result<Self> {
        if !(1..=5).contains(&max_stage) {
            return Err(Error::Spec(format!(
                "max_stage must be in 1..=5, got {max_stage}"
            )));
        }
        Ok(Self {
            stages: REFERENCE_LAYOUT[..max_stage]
                .iter()
                .map(|s| s.to_vec())
                .collect(),
        })
    }

    /// Applies a width multiplier to every convolution, rounding to the
    /// nearest integer with a minimum of 1.
    pub fn scaled(&self, width_factor: f64) -> Result<Self> {
        if !(width_factor.is_finite() && width_factor > 0.0) {
            return Err(Error::Spec(format!(
                "width_factor must be positive, got {width_factor}"
            )));
        }
        Self::from_stages(
            self.stages
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|&w| ((w as f64 * width_factor).round() as usize).max(1))
                        .collect()
                })
                .collect(),
        )
    }

    /// Truncates to the stage-`k` tap: stages `1..k` in full plus the first
    /// convolution of stage `k`. This is the encoder of the stage-`k`
    /// encoder-decoder pair.
    pub fn up_to_tap(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.stages.len() {
            return Err(Error::Arg(format!(
                "stage {k} out of range 1..={}",
                self.stages.len()
            )));
        }
        let mut stages: Vec<Vec<usize>> = self.stages[..k - 1].to_vec();
        stages.push(vec![self.stages[k - 1][0]]);
        Self::from_stages(stages)
    }

    pub fn max_stage(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[Vec<usize>] {
        &self.stages
    }

    /// Output channels of the stage-`k` tap (first convolution of stage `k`).
    pub fn tap_channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s[0]).collect()
    }

    /// Channel count of the encoder output (deepest convolution).
    pub fn output_channels(&self) -> Option<usize> {
        self.stages.last().map(|s| *s.last().expect("non-empty"))
    }

    /// Spatial divisor required of inputs: `2^(max_stage - 1)`.
    pub fn divisor(&self) -> usize {
        1 << self.stages.len().saturating_sub(1)
    }

    /// Checks the invariants required to construct a network.
    pub fn validate_for_build(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Spec(
                "cannot build a network from an empty spec".into(),
            ));
        }
        Ok(())
    }

    /// Encoder convolutions in order as `(in_channels, out_channels)`.
    pub fn encoder_convs(&self) -> Vec<(usize, usize)> {
        let mut convs = Vec::new();
        let mut prev = 3;
        for stage in &self.stages {
            for &w in stage {
                convs.push((prev, w));
                prev = w;
            }
        }
        convs
    }

    /// Mirrored decoder convolutions in order as `(in_channels, out_channels)`:
    /// the reversed encoder convolutions with inputs and outputs swapped, so
    /// the final convolution emits 3 channels.
    pub fn decoder_convs(&self) -> Vec<(usize, usize)> {
        self.encoder_convs()
            .into_iter()
            .rev()
            .map(|(i, o)| (o, i))
            .collect()
    }

    /// True if `self` can be a student of `teacher`: identical stage/layer
    /// structure with every width at most the teacher's.
    pub fn fits_within(&self, teacher: &ArchSpec) -> bool {
        self.stages.len() == teacher.stages.len()
            && self
                .stages
                .iter()
                .zip(&teacher.stages)
                .all(|(s, t)| s.len() == t.len() && s.iter().zip(t).all(|(a, b)| a <= b))
    }
}

/// Named built-in presets.
///
/// `vgg19` is the reference layout; `vgg19-quarter` applies the 0.25 width
/// factor used for compact students. The `toy*` presets are desk-scale
/// three-stage networks for fast CPU experiments.
pub fn preset(name: &str) -> Option<ArchSpec> {
    let spec = match name {
        "vgg19" => ArchSpec::reference(5).expect("valid"),
        "vgg19-quarter" => ArchSpec::reference(5)
            .expect("valid")
            .scaled(0.25)
            .expect("valid"),
        "toy" => ArchSpec::from_stages(vec![vec![16], vec![32], vec![64, 64]]).expect("valid"),
        "toy-quarter" => {
            ArchSpec::from_stages(vec![vec![4], vec![8], vec![16, 16]]).expect("valid")
        }
        _ => return None,
    };
    Some(spec)
}

/// Serialized form of an [`ArchSpec`]: a structured text document with keys
/// `preset`, `max_stage`, `width_factor`, and `layout`. An explicit `layout`
/// overrides the preset and width factor.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpecDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_stage: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<Vec<Vec<usize>>>,
}

impl ArchSpecDoc {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("doc serializes")
    }

    pub fn resolve(&self) -> Result<ArchSpec> {
        if let Some(layout) = &self.layout {
            let spec = ArchSpec::from_stages(layout.clone())?;
            return match self.max_stage {
                Some(k) if k != spec.max_stage() => Err(Error::Config(format!(
                    "layout has {} stages but max_stage = {k}",
                    spec.max_stage()
                ))),
                _ => Ok(spec),
            };
        }
        let base = match &self.preset {
            Some(name) => {
                preset(name).ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?
            }
            None => ArchSpec::reference(self.max_stage.unwrap_or(5))?,
        };
        let base = match self.max_stage {
            Some(k) if k < base.max_stage() => ArchSpec::from_stages(base.stages[..k].to_vec())?,
            Some(k) if k > base.max_stage() => {
                return Err(Error::Config(format!(
                    "preset has {} stages, cannot extend to {k}",
                    base.max_stage()
                )))
            }
            _ => base,
        };
        match self.width_factor {
            Some(f) => base.scaled(f),
            None => Ok(base),
        }
    }
}

/// Exact number of weights and biases of all convolutions described by `spec`
/// (encoder, plus the mirrored decoder when `include_decoder` is set).
/// Embedding maps are never included.
pub fn count_params(spec: &ArchSpec, include_decoder: bool) -> u64 {
    let mut convs = spec.encoder_convs();
    if include_decoder {
        convs.extend(spec.decoder_convs());
    }
    convs
        .iter()
        .map(|&(ci, co)| (ci * co * KERNEL * KERNEL + co) as u64)
        .sum()
}

/// Forward-pass FLOPs of the encoder on an `input_h x input_w` image under
/// the 2-FLOPs-per-MAC convention. ReLU, pooling, upsampling, and bias adds
/// are excluded. The input must be divisible by `2^(max_stage-1)`.
pub fn count_flops(spec: &ArchSpec, input_h: usize, input_w: usize) -> Result<u128> {
    check_divisible(spec, input_h, input_w)?;
    let mut flops: u128 = 0;
    let (mut h, mut w) = (input_h, input_w);
    for (s, stage) in spec.stages().iter().enumerate() {
        if s > 0 {
            h /= 2;
            w /= 2;
        }
        let mut prev = if s == 0 {
            3
        } else {
            spec.stages()[s - 1].last().copied().unwrap()
        };
        for &width in stage {
            flops += 2 * (KERNEL * KERNEL * prev * width * h * w) as u128;
            prev = width;
        }
    }
    Ok(flops)
}

/// Upper bound on live activation bytes for an encoder forward pass.
///
/// Liveness model: the largest single-layer (input + output) footprint, plus
/// every retained tap above the deepest stage. The final tap is the value
/// being consumed, not retained alongside.
pub fn estimate_peak_activation_memory(
    spec: &ArchSpec,
    input_h: usize,
    input_w: usize,
    bytes_per_scalar: usize,
) -> Result<u128> {
    check_divisible(spec, input_h, input_w)?;
    let mut peak_pair: u128 = 0;
    let (mut h, mut w) = (input_h, input_w);
    let mut prev = 3usize;
    let mut taps: u128 = 0;
    for (s, stage) in spec.stages().iter().enumerate() {
        if s > 0 {
            h /= 2;
            w /= 2;
        }
        for (j, &width) in stage.iter().enumerate() {
            let pair = ((prev + width) * h * w) as u128;
            peak_pair = peak_pair.max(pair);
            if j == 0 && s + 1 < spec.max_stage() {
                taps += (width * h * w) as u128;
            }
            prev = width;
        }
    }
    Ok((peak_pair + taps) * bytes_per_scalar as u128)
}

fn check_divisible(spec: &ArchSpec, h: usize, w: usize) -> Result<()> {
    let d = spec.divisor();
    if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
        return Err(Error::Arg(format!(
            "input {h}x{w} must be a positive multiple of {d}"
        )));
    }
    Ok(())
}

/// Indices of the `keep` filters with the largest L1 norms, in ascending
/// index order. Ties keep the lower index.
pub fn select_filters_l1(weights: &ndarray::Array4<f64>, keep: usize) -> Result<Vec<usize>> {
    let filters = weights.dim().0;
    if keep == 0 || keep > filters {
        return Err(Error::Arg(format!(
            "keep must be in 1..={filters}, got {keep}"
        )));
    }
    let norms: Vec<f64> = (0..filters)
        .map(|f| {
            weights
                .index_axis(ndarray::Axis(0), f)
                .iter()
                .map(|v| v.abs())
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..filters).collect();
    // Stable sort by descending norm preserves the lower-index-wins tie-break.
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn params_of_single_conv() {
        // One 3->4 convolution: 3*4*9 weights + 4 biases.
        let spec = ArchSpec::from_stages(vec![vec![4]]).unwrap();
        assert_eq!(count_params(&spec, false), 112);
    }

    #[test]
    fn params_of_empty_spec() {
        assert_eq!(count_params(&ArchSpec::empty(), false), 0);
        assert_eq!(count_params(&ArchSpec::empty(), true), 0);
    }

    #[test]
    fn reference_stage_encoder_params() {
        // Cumulative sum of the five stage encoders of the reference layout.
        let full = ArchSpec::reference(5).unwrap();
        let per_stage: Vec<u64> = (1..=5)
            .map(|k| count_params(&full.up_to_tap(k).unwrap(), false))
            .collect();
        assert_eq!(per_stage, vec![1792, 112576, 555328, 3505728, 12944960]);
        assert_eq!(per_stage.iter().sum::<u64>(), 17_120_384);

        let quarter = full.scaled(0.25).unwrap();
        let quarter_total: u64 = (1..=5)
            .map(|k| count_params(&quarter.up_to_tap(k).unwrap(), false))
            .sum();
        let ratio = 17_120_384.0 / quarter_total as f64;
        assert!((14.0..=17.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn flops_of_single_conv_formula() {
        // 1->1 conv, 3x3, same padding, 4x4 input: 9 MACs at each of 16
        // positions, 2 FLOPs per MAC.
        assert_eq!(2 * 9 * 16, 288);
        // The counter applies the same convention (first conv consumes RGB).
        let spec = ArchSpec::from_stages(vec![vec![1]]).unwrap();
        assert_eq!(count_flops(&spec, 4, 4).unwrap(), 2 * 9 * 3 * 16);
    }

    #[test]
    fn flops_of_empty_spec() {
        assert_eq!(count_flops(&ArchSpec::empty(), 4, 4).unwrap(), 0);
    }

    #[test]
    fn flops_ratio_reference_vs_quarter() {
        let full = ArchSpec::reference(5).unwrap();
        let quarter = full.scaled(0.25).unwrap();
        let sum = |spec: &ArchSpec| -> u128 {
            (1..=5)
                .map(|k| count_flops(&spec.up_to_tap(k).unwrap(), 3008, 3008).unwrap())
                .sum()
        };
        let ratio = sum(&full) as f64 / sum(&quarter) as f64;
        assert!((14.0..=17.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn flops_reject_indivisible_input() {
        let spec = ArchSpec::reference(2).unwrap();
        assert!(count_flops(&spec, 5, 4).is_err());
    }

    #[test]
    fn memory_of_single_conv() {
        // 3->4 conv on 2x2 input, 4 bytes per scalar: (3*4 + 4*4) * 4 = 112.
        let spec = ArchSpec::from_stages(vec![vec![4]]).unwrap();
        assert_eq!(estimate_peak_activation_memory(&spec, 2, 2, 4).unwrap(), 112);
    }

    #[test]
    fn memory_quadruples_when_sides_double() {
        let spec = ArchSpec::reference(3).unwrap();
        let base = estimate_peak_activation_memory(&spec, 64, 64, 4).unwrap();
        let big = estimate_peak_activation_memory(&spec, 128, 128, 4).unwrap();
        assert_eq!(big, 4 * base);
    }

    #[test]
    fn l1_selection_examples() {
        // Norms (3, 1, 2) via constant filters.
        let mut w = Array4::zeros((3, 1, 3, 3));
        for (f, norm) in [(0, 3.0), (1, 1.0), (2, 2.0)] {
            w.index_axis_mut(ndarray::Axis(0), f).fill(norm / 9.0);
        }
        assert_eq!(select_filters_l1(&w, 2).unwrap(), vec![0, 2]);
        assert_eq!(select_filters_l1(&w, 3).unwrap(), vec![0, 1, 2]);

        // Tie: equal norms keep the lower index.
        let mut w = Array4::zeros((2, 1, 3, 3));
        w.fill(1.0 / 9.0);
        assert_eq!(select_filters_l1(&w, 1).unwrap(), vec![0]);

        assert!(select_filters_l1(&w, 0).is_err());
        assert!(select_filters_l1(&w, 3).is_err());
    }

    #[test]
    fn width_scaling_rounds_with_minimum_one() {
        let spec = ArchSpec::from_stages(vec![vec![3, 2]]).unwrap();
        let tiny = spec.scaled(0.1).unwrap();
        assert_eq!(tiny.stages(), &[vec![1, 1]]);
        let spec = ArchSpec::reference(5).unwrap();
        assert_eq!(
            spec.scaled(0.25).unwrap().tap_channels(),
            vec![16, 32, 64, 128, 128]
        );
    }

    #[test]
    fn spec_doc_layout_overrides_factor() {
        let doc = ArchSpecDoc::parse("layout = [[8], [16]]\nwidth_factor = 0.5\n").unwrap();
        let spec = doc.resolve().unwrap();
        assert_eq!(spec.stages(), &[vec![8], vec![16]]);

        let doc = ArchSpecDoc::parse("preset = \"vgg19\"\nwidth_factor = 0.25\n").unwrap();
        assert_eq!(
            doc.resolve().unwrap().tap_channels(),
            vec![16, 32, 64, 128, 128]
        );

        let doc = ArchSpecDoc::parse("preset = \"vgg19\"\nmax_stage = 3\n").unwrap();
        assert_eq!(doc.resolve().unwrap().max_stage(), 3);

        assert!(ArchSpecDoc::parse("unknown_key = 1\n").is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ArchSpec::from_stages(vec![vec![0]]).is_err());
        assert!(ArchSpec::from_stages(vec![vec![]]).is_err());
        assert!(ArchSpec::from_stages(vec![vec![1]; 6]).is_err());
        assert!(ArchSpec::reference(0).is_err());
        assert!(ArchSpec::reference(6).is_err());
        assert!(ArchSpec::empty().validate_for_build().is_err());
    }
}
