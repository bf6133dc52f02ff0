//! Training objectives: pixel+perceptual reconstruction, content+Gram
//! stylization, linear-embedding residuals, and the combined distillation
//! loss. Every squared-error term is normalized by its element count so the
//! default weights transfer across resolutions.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::Network;
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, FeatureTaps};
use crate::image::ImageTensor;
use crate::transforms::gram;

/// Loss-term weights. Defaults follow the training protocol:
/// perceptual weight 1, style weight 10, embedding weight 10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_s: 10.0,
            beta: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_p < 0.0 || self.lambda_s < 0.0 || self.beta < 0.0 {
            return Err(Error::Arg("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// The learned linear map `Q` (`C x C'`) attached to one tap stage, so that
/// teacher features are approximated as `Q * F'`. Purely linear, no bias.
#[derive(Debug, Clone)]
pub struct EmbeddingMap {
    pub q: Array2<f64>,
    pub tap_stage: usize,
}

impl EmbeddingMap {
    /// Fan-in-scaled uniform initialization, `U(-sqrt(6/C'), sqrt(6/C'))`.
    pub fn init<R: Rng>(
        teacher_channels: usize,
        student_channels: usize,
        tap_stage: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / student_channels as f64).sqrt();
        let q = Array2::from_shape_fn((teacher_channels, student_channels), |_| {
            rng.random_range(-bound..bound)
        });
        Self { q, tap_stage }
    }

    pub fn identity(channels: usize, tap_stage: usize) -> Self {
        Self {
            q: Array2::eye(channels),
            tap_stage,
        }
    }

    pub fn teacher_channels(&self) -> usize {
        self.q.dim().0
    }

    pub fn student_channels(&self) -> usize {
        self.q.dim().1
    }

    /// Maps a student feature into teacher channel space: `Q * F'`.
    pub fn apply(&self, f_student: &FeatureMap) -> Result<FeatureMap> {
        if f_student.channels() != self.student_channels() {
            return Err(Error::Arg(format!(
                "embedding expects {} channels, got {}",
                self.student_channels(),
                f_student.channels()
            )));
        }
        let mapped = self.q.dot(&f_student.flat());
        FeatureMap::from_flat(mapped, f_student.height(), f_student.width())
    }

    /// Backward through `apply`: given dLoss/d(Q*F'), returns the gradient
    /// w.r.t. `Q` and w.r.t. the student feature.
    pub fn backward(
        &self,
        f_student: &FeatureMap,
        grad_mapped: &Array2<f64>,
    ) -> (Array2<f64>, Array3<f64>) {
        let grad_q = grad_mapped.dot(&f_student.flat().t());
        let grad_student_flat = self.q.t().dot(grad_mapped);
        let grad_student = grad_student_flat
            .into_shape_with_order((f_student.channels(), f_student.height(), f_student.width()))
            .expect("shape matches");
        (grad_q, grad_student)
    }
}

/// Mean squared difference over all elements.
fn mean_sq_diff<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in a.into_iter().zip(b) {
        let d = x - y;
        sum += d * d;
        n += 1;
    }
    (sum / n as f64, n)
}

/// Value and gradients of the pixel+perceptual reconstruction objective:
/// `mean((I_r - I_o)^2) + lambda_p * sum_{i<=k} mean((F_r_i - F_o_i)^2)`.
#[derive(Debug, Clone)]
pub struct ReconstructionLoss {
    pub value: f64,
    pub pixel: f64,
    /// Unweighted sum of the per-stage perceptual terms.
    pub perceptual: f64,
    /// dLoss/dI_r of the pixel term alone (the perceptual contribution flows
    /// through the encoder via `grad_taps`).
    pub grad_image: Array3<f64>,
    /// dLoss/d(taps_r stage i+1), weight already applied.
    pub grad_taps: Vec<Array3<f64>>,
}

pub fn reconstruction_loss(
    i_r: &ImageTensor,
    i_o: &ImageTensor,
    taps_r: &FeatureTaps,
    taps_o: &FeatureTaps,
    k: usize,
    w: &LossWeights,
) -> Result<ReconstructionLoss> {
    if i_r.data().dim() != i_o.data().dim() {
        return Err(Error::Arg("image shape mismatch".into()));
    }
    if k > taps_r.stage_count() || k > taps_o.stage_count() {
        return Err(Error::Arg(format!("stage {k} exceeds available taps")));
    }
    let (pixel, n_px) = mean_sq_diff(i_r.data(), i_o.data());
    let grad_image = (i_r.data() - i_o.data()) * (2.0 / n_px as f64);

    let mut perceptual = 0.0;
    let mut grad_taps = Vec::with_capacity(k);
    for stage in 1..=k {
        let fr = taps_r.stage(stage)?;
        let fo = taps_o.stage(stage)?;
        if fr.data().dim() != fo.data().dim() {
            return Err(Error::Arg(format!("tap shape mismatch at stage {stage}")));
        }
        let (term, n) = mean_sq_diff(fr.data(), fo.data());
        perceptual += term;
        grad_taps.push((fr.data() - fo.data()) * (2.0 * w.lambda_p / n as f64));
    }
    Ok(ReconstructionLoss {
        value: pixel + w.lambda_p * perceptual,
        pixel,
        perceptual,
        grad_image,
        grad_taps,
    })
}

/// Reconstruction loss with the full gradient w.r.t. the reconstructed image,
/// with the perceptual terms back-propagated through the fixed encoder.
pub fn reconstruction_loss_wrt_image(
    i_r: &ImageTensor,
    i_o: &ImageTensor,
    encoder: &Network,
    k: usize,
    w: &LossWeights,
) -> Result<(ReconstructionLoss, Array3<f64>)> {
    let taps_o = encoder.encode(i_o.data())?;
    reconstruction_loss_wrt_image_given(i_r, i_o, &taps_o, encoder, k, w)
}

/// Same as [`reconstruction_loss_wrt_image`] with the target taps already
/// computed (they are reused across loss terms during distillation).
pub fn reconstruction_loss_wrt_image_given(
    i_r: &ImageTensor,
    i_o: &ImageTensor,
    taps_o: &FeatureTaps,
    encoder: &Network,
    k: usize,
    w: &LossWeights,
) -> Result<(ReconstructionLoss, Array3<f64>)> {
    let trace_r = encoder.forward(i_r.data())?;
    let taps_r = encoder.taps(&trace_r)?;
    let loss = reconstruction_loss(i_r, i_o, &taps_r, taps_o, k, w)?;
    let seeds: Vec<(usize, Array3<f64>)> = loss
        .grad_taps
        .iter()
        .enumerate()
        .map(|(i, g)| Ok((encoder.tap_op(i + 1)?, g.clone())))
        .collect::<Result<_>>()?;
    let mut grad = encoder.backward(i_r.data(), &trace_r, &seeds, None);
    grad += &loss.grad_image;
    Ok((loss, grad))
}

/// Value and gradients of the stylization objective:
/// content distance at the deepest stage up to 4, plus `lambda_s` times the
/// normalized Gram distances over stages 1..=min(4, taps).
#[derive(Debug, Clone)]
pub struct StylizationLoss {
    pub value: f64,
    pub content: f64,
    /// Unweighted sum of per-stage Gram terms.
    pub style: f64,
    /// dLoss/d(taps_st stage i+1), weights applied.
    pub grad_taps: Vec<Array3<f64>>,
}

pub fn stylization_loss(
    taps_st: &FeatureTaps,
    taps_c: &FeatureTaps,
    taps_s: &FeatureTaps,
    w: &LossWeights,
) -> Result<StylizationLoss> {
    let n = taps_st.stage_count();
    if taps_c.stage_count() != n || taps_s.stage_count() != n {
        return Err(Error::Arg("tap stage counts differ".into()));
    }
    let content_stage = n.min(4);
    let style_stages = n.min(4);

    let mut grad_taps: Vec<Array3<f64>> = (1..=n)
        .map(|stage| Ok(Array3::zeros(taps_st.stage(stage)?.data().dim())))
        .collect::<Result<_>>()?;

    let f_st = taps_st.stage(content_stage)?;
    let f_c = taps_c.stage(content_stage)?;
    if f_st.data().dim() != f_c.data().dim() {
        return Err(Error::Arg("content tap shape mismatch".into()));
    }
    let (content, n_c) = mean_sq_diff(f_st.data(), f_c.data());
    grad_taps[content_stage - 1] += &((f_st.data() - f_c.data()) * (2.0 / n_c as f64));

    let mut style = 0.0;
    for stage in 1..=style_stages {
        let f = taps_st.stage(stage)?;
        let s = taps_s.stage(stage)?;
        if f.channels() != s.channels() {
            return Err(Error::Arg(format!(
                "style tap channel mismatch at stage {stage}"
            )));
        }
        let g_st = gram(f, true);
        let g_s = gram(s, true);
        let diff = &g_st - &g_s;
        let c = f.channels() as f64;
        style += diff.iter().map(|v| v * v).sum::<f64>() / (c * c);
        // d/dF of mean((G - T)^2) with G = F F^T / (CHW):
        // (4 / (C^2 * CHW)) * (G - T) * F.
        let scale = 4.0 * w.lambda_s / (c * c * (f.channels() * f.positions()) as f64);
        let grad_flat = diff.dot(&f.flat()) * scale;
        let grad = grad_flat
            .into_shape_with_order(f.data().dim())
            .expect("shape matches");
        grad_taps[stage - 1] += &grad;
    }

    Ok(StylizationLoss {
        value: content + w.lambda_s * style,
        content,
        style,
        grad_taps,
    })
}

/// Stylization loss with the full gradient w.r.t. the stylized image,
/// back-propagated through the fixed encoder.
pub fn stylization_loss_wrt_image(
    stylized: &ImageTensor,
    taps_c: &FeatureTaps,
    taps_s: &FeatureTaps,
    encoder: &Network,
    w: &LossWeights,
) -> Result<(StylizationLoss, Array3<f64>)> {
    let trace = encoder.forward(stylized.data())?;
    let taps_st = encoder.taps(&trace)?;
    let loss = stylization_loss(&taps_st, taps_c, taps_s, w)?;
    let seeds: Vec<(usize, Array3<f64>)> = loss
        .grad_taps
        .iter()
        .enumerate()
        .map(|(i, g)| Ok((encoder.tap_op(i + 1)?, g.clone())))
        .collect::<Result<_>>()?;
    let grad = encoder.backward(stylized.data(), &trace, &seeds, None);
    Ok((loss, grad))
}

/// Value and gradients of the linear-embedding residual
/// `mean((F - Q F')^2)`, differentiable w.r.t. `Q` and the student feature.
#[derive(Debug, Clone)]
pub struct EmbeddingLoss {
    pub value: f64,
    pub grad_q: Array2<f64>,
    pub grad_student: Array3<f64>,
}

pub fn embedding_loss(
    f_teacher: &FeatureMap,
    f_student: &FeatureMap,
    q: &EmbeddingMap,
) -> Result<EmbeddingLoss> {
    if q.teacher_channels() != f_teacher.channels() {
        return Err(Error::Arg(format!(
            "Q has {} teacher channels, feature has {}",
            q.teacher_channels(),
            f_teacher.channels()
        )));
    }
    if (f_student.height(), f_student.width()) != (f_teacher.height(), f_teacher.width()) {
        return Err(Error::Arg(
            "spatial dims of teacher and student taps differ".into(),
        ));
    }
    let mapped = q.apply(f_student)?;
    let residual = &f_teacher.flat() - &mapped.flat();
    let n = residual.len() as f64;
    let value = residual.iter().map(|v| v * v).sum::<f64>() / n;
    let grad_mapped = &residual * (-2.0 / n);
    let (grad_q, grad_student) = q.backward(f_student, &grad_mapped);
    Ok(EmbeddingLoss {
        value,
        grad_q,
        grad_student,
    })
}

/// Combined distillation objective: `beta * sum(embed_terms) + collab_term`.
pub fn total_distill_loss(embed_terms: &[f64], collab_term: f64, beta: f64) -> f64 {
    beta * embed_terms.iter().sum::<f64>() + collab_term
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_encoder, ArchSpec};
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut r = rng(seed);
        ImageTensor::from_fn(h, w, |_, _, _| r.random_range(0.0..1.0))
    }

    fn random_feature(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut r = rng(seed);
        FeatureMap::new(Array3::from_shape_fn((c, h, w), |_| {
            r.random_range(-1.0..1.0)
        }))
        .unwrap()
    }

    #[test]
    fn reconstruction_zero_on_identical_inputs() {
        let spec = ArchSpec::from_stages(vec![vec![4], vec![6]]).unwrap();
        let enc = build_encoder(&spec, &mut rng(1)).unwrap();
        let img = random_image(8, 8, 2);
        let taps = enc.encode(img.data()).unwrap();
        let loss =
            reconstruction_loss(&img, &img, &taps, &taps, 2, &LossWeights::default()).unwrap();
        assert_eq!(loss.value, 0.0);
    }

    #[test]
    fn reconstruction_pixel_term_only() {
        // All pixels differ by sqrt(0.5): normalized sum of squares is 0.5.
        let a = ImageTensor::from_fn(4, 4, |_, _, _| 0.0);
        let b = ImageTensor::from_fn(4, 4, |_, _, _| 0.5_f64.sqrt());
        let spec = ArchSpec::from_stages(vec![vec![2]]).unwrap();
        let enc = build_encoder(&spec, &mut rng(3)).unwrap();
        let ta = enc.encode(a.data()).unwrap();
        let tb = enc.encode(b.data()).unwrap();
        let w = LossWeights {
            lambda_p: 0.0,
            ..Default::default()
        };
        let loss = reconstruction_loss(&a, &b, &ta, &tb, 1, &w).unwrap();
        assert!((loss.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_matches_term_by_term_recount() {
        let spec = ArchSpec::from_stages(vec![vec![3], vec![5]]).unwrap();
        let enc = build_encoder(&spec, &mut rng(5)).unwrap();
        let a = random_image(8, 8, 6);
        let b = random_image(8, 8, 7);
        let ta = enc.encode(a.data()).unwrap();
        let tb = enc.encode(b.data()).unwrap();
        let w = LossWeights::default();
        let loss = reconstruction_loss(&a, &b, &ta, &tb, 2, &w).unwrap();

        // Independent recomputation, naive loops.
        let mut pixel = 0.0;
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            pixel += (x - y) * (x - y);
        }
        pixel /= a.data().len() as f64;
        let mut perceptual = 0.0;
        for stage in 1..=2 {
            let fa = ta.stage(stage).unwrap();
            let fb = tb.stage(stage).unwrap();
            let mut s = 0.0;
            for (x, y) in fa.data().iter().zip(fb.data().iter()) {
                s += (x - y) * (x - y);
            }
            perceptual += s / fa.data().len() as f64;
        }
        assert!((loss.value - (pixel + w.lambda_p * perceptual)).abs() < 1e-10);
    }

    #[test]
    fn stylization_zero_on_identical_inputs() {
        let spec = ArchSpec::from_stages(vec![vec![4], vec![6]]).unwrap();
        let enc = build_encoder(&spec, &mut rng(8)).unwrap();
        let img = random_image(8, 8, 9);
        let taps = enc.encode(img.data()).unwrap();
        let loss = stylization_loss(&taps, &taps, &taps, &LossWeights::default()).unwrap();
        assert_eq!(loss.value, 0.0);
    }

    #[test]
    fn stylization_matches_gram_recount() {
        let spec = ArchSpec::from_stages(vec![vec![4], vec![6]]).unwrap();
        let enc = build_encoder(&spec, &mut rng(10)).unwrap();
        let st = enc.encode(random_image(8, 8, 11).data()).unwrap();
        let c = enc.encode(random_image(8, 8, 12).data()).unwrap();
        let s = enc.encode(random_image(8, 8, 13).data()).unwrap();
        let w = LossWeights::default();
        let loss = stylization_loss(&st, &c, &s, &w).unwrap();

        let f_st = st.stage(2).unwrap();
        let f_c = c.stage(2).unwrap();
        let mut content = 0.0;
        for (x, y) in f_st.data().iter().zip(f_c.data().iter()) {
            content += (x - y) * (x - y);
        }
        content /= f_st.data().len() as f64;
        let mut style = 0.0;
        for stage in 1..=2 {
            let g1 = gram(st.stage(stage).unwrap(), true);
            let g2 = gram(s.stage(stage).unwrap(), true);
            let c_ch = st.stage(stage).unwrap().channels() as f64;
            style += g1
                .iter()
                .zip(g2.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / (c_ch * c_ch);
        }
        assert!((loss.value - (content + w.lambda_s * style)).abs() < 1e-10);
        assert!((loss.content - content).abs() < 1e-12);
        assert!((loss.style - style).abs() < 1e-12);
    }

    #[test]
    fn embedding_exact_fit_is_zero() {
        let f_student = random_feature(2, 4, 4, 14);
        let q = EmbeddingMap::init(3, 2, 1, &mut rng(15));
        let f_teacher = q.apply(&f_student).unwrap();
        let loss = embedding_loss(&f_teacher, &f_student, &q).unwrap();
        assert!(loss.value < 1e-24);
    }

    #[test]
    fn embedding_zero_q_gives_teacher_energy() {
        let f_teacher = random_feature(3, 4, 4, 16);
        let f_student = random_feature(2, 4, 4, 17);
        let q = EmbeddingMap {
            q: Array2::zeros((3, 2)),
            tap_stage: 1,
        };
        let loss = embedding_loss(&f_teacher, &f_student, &q).unwrap();
        let want =
            f_teacher.data().iter().map(|v| v * v).sum::<f64>() / f_teacher.data().len() as f64;
        assert!((loss.value - want).abs() < 1e-12);
    }

    #[test]
    fn embedding_invariant_under_basis_change() {
        // Q -> Q R, F' -> R^-1 F' leaves the product (and the loss) unchanged.
        let f_student = random_feature(3, 5, 5, 18);
        let f_teacher = random_feature(4, 5, 5, 19);
        let q = EmbeddingMap::init(4, 3, 1, &mut rng(20));

        let raw =
            nalgebra::DMatrix::<f64>::from_fn(3, 3, |r, c| ((r * 3 + c + 1) as f64 * 0.37).sin());
        let qr = raw.qr();
        let r_mat = qr.q(); // orthogonal, inverse = transpose

        let q2 = EmbeddingMap {
            q: Array2::from_shape_fn((4, 3), |(i, j)| {
                (0..3).map(|k| q.q[[i, k]] * r_mat[(k, j)]).sum()
            }),
            tap_stage: 1,
        };
        let f2_flat = Array2::from_shape_fn((3, 25), |(i, j)| {
            (0..3)
                .map(|k| r_mat[(k, i)] * f_student.flat()[[k, j]])
                .sum()
        });
        let f_student2 = FeatureMap::from_flat(f2_flat, 5, 5).unwrap();

        let a = embedding_loss(&f_teacher, &f_student, &q).unwrap();
        let b = embedding_loss(&f_teacher, &f_student2, &q2).unwrap();
        assert!((a.value - b.value).abs() < 1e-10);
    }

    #[test]
    fn total_distill_arithmetic() {
        assert!((total_distill_loss(&[0.1, 0.2], 1.0, 10.0) - 4.0).abs() < 1e-12);
        assert_eq!(total_distill_loss(&[0.5, 0.5], 2.5, 0.0), 2.5);
        assert_eq!(total_distill_loss(&[0.0, 0.0], 0.0, 10.0), 0.0);
    }
}
