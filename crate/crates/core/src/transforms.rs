//! Feature-space statistics and style transforms: Gram matrices, whitening,
//! coloring, WCT and AdaIN transfer, and the style-distance metric.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

use crate::arch::Network;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::image::ImageTensor;

/// Default relative eigenvalue floor: dimensions with eigenvalues below
/// `DEFAULT_EIG_FLOOR * lambda_max` are dropped from whitening/coloring.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-8;

/// Default AdaIN variance guard.
pub const DEFAULT_ADAIN_EPS: f64 = 1e-5;

/// Second-order statistics of a feature map: per-channel spatial mean,
/// centered covariance (denominator `HW - 1`), and its spectral decomposition.
#[derive(Debug, Clone)]
pub struct StyleStats {
    mean: Array1<f64>,
    covariance: Array2<f64>,
    eigvals: Vec<f64>,
    eigvecs: Array2<f64>,
}

impl StyleStats {
    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    /// Eigenvalues in descending order, clamped to be non-negative.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    /// Builds stats directly from moments (used for synthetic targets).
    pub fn from_moments(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let (r, c) = covariance.dim();
        if r != c || mean.len() != r {
            return Err(Error::Arg(
                "covariance must be square and match the mean".into(),
            ));
        }
        let (eigvals, eigvecs) = symmetric_eigen(&covariance);
        Ok(Self {
            mean,
            covariance,
            eigvals,
            eigvecs,
        })
    }
}

/// `F * F^T` over the flattened `C x (HW)` view; divided by `C*H*W` when
/// `normalize` is set.
pub fn gram(f: &FeatureMap, normalize: bool) -> Array2<f64> {
    let flat = f.flat();
    let mut g = flat.dot(&flat.t());
    if normalize {
        let n = (f.channels() * f.positions()) as f64;
        g.mapv_inplace(|v| v / n);
    }
    g
}

/// Per-channel mean and centered covariance with spectral cache.
/// A single spatial position is rejected as degenerate.
pub fn compute_stats(f: &FeatureMap) -> Result<StyleStats> {
    let hw = f.positions();
    if hw < 2 {
        return Err(Error::Degenerate(
            "covariance needs at least two spatial positions".into(),
        ));
    }
    let flat = f.flat();
    let mean = flat.mean_axis(ndarray::Axis(1)).expect("HW >= 2");
    let centered = &flat - &mean.view().insert_axis(ndarray::Axis(1));
    let mut cov = centered.dot(&centered.t());
    cov.mapv_inplace(|v| v / (hw - 1) as f64);
    // Symmetrize to guard the eigendecomposition against rounding.
    let cov = (&cov + &cov.t()) * 0.5;
    let (eigvals, eigvecs) = symmetric_eigen(&cov);
    Ok(StyleStats {
        mean,
        covariance: cov,
        eigvals,
        eigvecs,
    })
}

/// Whitens a feature map with its own stats: `E d^(-1/2) E^T (F - mu)` over
/// the eigenpairs with `lambda > eig_floor * lambda_max`. The output
/// covariance equals the identity on the retained subspace.
pub fn whiten(f: &FeatureMap, stats: &StyleStats, eig_floor: f64) -> Result<FeatureMap> {
    let transform = spectral_power(stats, -0.5, eig_floor)?;
    let mean = stats.mean.view().insert_axis(ndarray::Axis(1));
    let centered = &f.flat() - &mean;
    let out = transform.dot(&centered);
    FeatureMap::from_flat(out, f.height(), f.width())
}

/// Colors a whitened feature map with style stats:
/// `E_s d_s^(1/2) E_s^T F + mu_s`. A zero style covariance yields the
/// constant output `mu_s`.
pub fn color(
    f_whitened: &FeatureMap,
    style_stats: &StyleStats,
    eig_floor: f64,
) -> Result<FeatureMap> {
    let transform = match spectral_power(style_stats, 0.5, eig_floor) {
        Ok(t) => t,
        // Fully degenerate style covariance: the transform is zero.
        Err(Error::Degenerate(_)) => Array2::zeros(style_stats.covariance.dim()),
        Err(e) => return Err(e),
    };
    let mut out = transform.dot(&f_whitened.flat());
    out += &style_stats.mean.view().insert_axis(ndarray::Axis(1));
    FeatureMap::from_flat(out, f_whitened.height(), f_whitened.width())
}

/// Whitening-coloring transfer: `alpha * color(whiten(F_c)) + (1-alpha) * F_c`
/// with statistics computed internally. `alpha = 0` returns the content
/// feature exactly.
pub fn wct_transfer(
    f_content: &FeatureMap,
    f_style: &FeatureMap,
    alpha: f64,
) -> Result<FeatureMap> {
    if f_content.channels() != f_style.channels() {
        return Err(Error::Arg(format!(
            "channel mismatch: content {} vs style {}",
            f_content.channels(),
            f_style.channels()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Arg(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(f_content.clone());
    }
    let content_stats = compute_stats(f_content)?;
    let style_stats = compute_stats(f_style)?;
    let whitened = whiten(f_content, &content_stats, DEFAULT_EIG_FLOOR)?;
    let colored = color(&whitened, &style_stats, DEFAULT_EIG_FLOOR)?;
    if alpha == 1.0 {
        return Ok(colored);
    }
    let blended = colored.data() * alpha + f_content.data() * (1.0 - alpha);
    FeatureMap::new(blended)
}

/// Adaptive instance normalization: per channel,
/// `sigma_s * (F_c - mu_c) / (sigma_c + eps) + mu_s` with population
/// standard deviations.
pub fn adain_transfer(
    f_content: &FeatureMap,
    f_style: &FeatureMap,
    eps: f64,
) -> Result<FeatureMap> {
    if f_content.channels() != f_style.channels() {
        return Err(Error::Arg(format!(
            "channel mismatch: content {} vs style {}",
            f_content.channels(),
            f_style.channels()
        )));
    }
    let c = f_content.channels();
    let mut out = f_content.data().clone();
    for ch in 0..c {
        let (mu_c, sd_c) = channel_moments(f_content, ch);
        let (mu_s, sd_s) = channel_moments(f_style, ch);
        let scale = sd_s / (sd_c + eps);
        out.index_axis_mut(ndarray::Axis(0), ch)
            .mapv_inplace(|v| scale * (v - mu_c) + mu_s);
    }
    FeatureMap::new(out)
}

/// Reverse-mode gradients of [`adain_transfer`] w.r.t. both inputs.
///
/// Returns `(grad_content, grad_style)`. Zero-variance channels contribute a
/// zero subgradient through their standard-deviation path.
pub fn adain_backward(
    f_content: &FeatureMap,
    f_style: &FeatureMap,
    eps: f64,
    grad_out: &ndarray::Array3<f64>,
) -> Result<(ndarray::Array3<f64>, ndarray::Array3<f64>)> {
    if f_content.channels() != f_style.channels() {
        return Err(Error::Arg("channel mismatch".into()));
    }
    if grad_out.dim() != f_content.data().dim() {
        return Err(Error::Arg("gradient shape mismatch".into()));
    }
    let c = f_content.channels();
    let mut grad_c = ndarray::Array3::zeros(f_content.data().dim());
    let mut grad_s = ndarray::Array3::zeros(f_style.data().dim());
    for ch in 0..c {
        let (mu_c, sd_c) = channel_moments(f_content, ch);
        let (mu_s, sd_s) = channel_moments(f_style, ch);
        let xc = f_content.data().index_axis(ndarray::Axis(0), ch);
        let xs = f_style.data().index_axis(ndarray::Axis(0), ch);
        let g = grad_out.index_axis(ndarray::Axis(0), ch);
        let n_c = xc.len() as f64;
        let n_s = xs.len() as f64;
        let denom = sd_c + eps;
        let scale = sd_s / denom;

        let g_sum: f64 = g.sum();
        let g_mean = g_sum / n_c;
        // sum_j g_j * (x_j - mu_c)
        let g_dot_d: f64 = g
            .iter()
            .zip(xc.iter())
            .map(|(gv, xv)| gv * (xv - mu_c))
            .sum();

        // Content path: scale * (g - mean(g)) minus the sigma_c derivative.
        let sigma_term = if sd_c > 1e-300 {
            sd_s / (denom * denom) * g_dot_d / (n_c * sd_c)
        } else {
            0.0
        };
        let mut gc = grad_c.index_axis_mut(ndarray::Axis(0), ch);
        for (o, (gv, xv)) in gc.iter_mut().zip(g.iter().zip(xc.iter())) {
            *o = scale * (gv - g_mean) - sigma_term * (xv - mu_c);
        }

        // Style path through mu_s and sigma_s.
        let dl_dsigma_s = g_dot_d / denom;
        let mut gs = grad_s.index_axis_mut(ndarray::Axis(0), ch);
        for (o, xv) in gs.iter_mut().zip(xs.iter()) {
            let sigma_part = if sd_s > 1e-300 {
                dl_dsigma_s * (xv - mu_s) / (n_s * sd_s)
            } else {
                0.0
            };
            *o = g_sum / n_s + sigma_part;
        }
    }
    Ok((grad_c, grad_s))
}

/// Population mean and standard deviation of one channel.
pub fn channel_moments(f: &FeatureMap, channel: usize) -> (f64, f64) {
    let ch = f.data().index_axis(ndarray::Axis(0), channel);
    let n = ch.len() as f64;
    let mean = ch.sum() / n;
    let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Style distance at stage `k`: Frobenius norm of the difference of
/// normalized Gram matrices of the stage-`k` tap features under a fixed
/// evaluation encoder. Inputs are reflect-padded to the encoder's divisor.
pub fn style_distance(
    stylized: &ImageTensor,
    style: &ImageTensor,
    eval_encoder: &Network,
    stage: usize,
) -> Result<f64> {
    if stage == 0 || stage > eval_encoder.tap_count() {
        return Err(Error::Arg(format!(
            "stage {stage} out of range 1..={}",
            eval_encoder.tap_count()
        )));
    }
    let d = eval_encoder.spec().divisor();
    let (pad_a, _) = stylized.pad_to_multiple(d);
    let (pad_b, _) = style.pad_to_multiple(d);
    let taps_a = eval_encoder.encode(pad_a.data())?;
    let taps_b = eval_encoder.encode(pad_b.data())?;
    let ga = gram(taps_a.stage(stage)?, true);
    let gb = gram(taps_b.stage(stage)?, true);
    let diff = &ga - &gb;
    Ok(diff.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Number of eigenvalues of a symmetric matrix above
/// `rel_threshold * lambda_max` (the rank proxy used for Gram matrices).
pub fn eigenvalue_count_above(m: &Array2<f64>, rel_threshold: f64) -> usize {
    let (vals, _) = symmetric_eigen(m);
    let max = vals.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > rel_threshold * max).count()
}

/// Symmetric eigendecomposition; eigenvalues descending, negatives clamped
/// to zero. Returns `(values, column-eigenvector matrix)`.
fn symmetric_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.dim().0;
    let dm = DMatrix::from_fn(n, n, |r, c| m[[r, c]]);
    let eig = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// `E diag(d^power) E^T` over eigenpairs above the relative floor.
/// Errors when no eigenvalue clears the floor.
fn spectral_power(stats: &StyleStats, power: f64, eig_floor: f64) -> Result<Array2<f64>> {
    let max = stats.eigvals.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return Err(Error::Degenerate(
            "all eigenvalues at or below the floor".into(),
        ));
    }
    let floor = eig_floor * max;
    let retained: Vec<usize> = (0..stats.eigvals.len())
        .filter(|&i| stats.eigvals[i] > floor)
        .collect();
    if retained.is_empty() {
        return Err(Error::Degenerate(
            "all eigenvalues at or below the floor".into(),
        ));
    }
    let n = stats.eigvals.len();
    let er = Array2::from_shape_fn((n, retained.len()), |(r, c)| {
        stats.eigvecs[[r, retained[c]]]
    });
    let scaled = Array2::from_shape_fn((retained.len(), n), |(r, c)| {
        stats.eigvals[retained[r]].powf(power) * er[[c, r]]
    });
    Ok(er.dot(&scaled))
}
