//! Finite-difference oracles for every analytic gradient: the loss gradients
//! are checked coordinate-wise against central differences in double
//! precision (step 1e-5, relative error < 1e-4).

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use styledistill_core::arch::{build_encoder, ArchSpec};
use styledistill_core::losses::{
    embedding_loss, reconstruction_loss_wrt_image, stylization_loss_wrt_image, EmbeddingMap,
    LossWeights,
};
use styledistill_core::transforms::{adain_backward, adain_transfer};
use styledistill_core::{FeatureMap, ImageTensor};

const FD_STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(h: usize, w: usize, r: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::from_fn(h, w, |_, _, _| r.random_range(0.05..0.95))
}

fn random_feature(c: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> FeatureMap {
    FeatureMap::new(Array3::from_shape_fn((c, h, w), |_| {
        r.random_range(-1.0..1.0)
    }))
    .unwrap()
}

/// Sample a deterministic spread of coordinates from a 3-d array.
fn sample_coords(dims: (usize, usize, usize), n: usize, r: &mut ChaCha8Rng) -> Vec<[usize; 3]> {
    (0..n)
        .map(|_| {
            [
                r.random_range(0..dims.0),
                r.random_range(0..dims.1),
                r.random_range(0..dims.2),
            ]
        })
        .collect()
}

#[test]
fn reconstruction_gradient_matches_central_differences() {
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let spec = ArchSpec::from_stages(vec![vec![4], vec![6]]).unwrap();
        let enc = build_encoder(&spec, &mut r).unwrap();
        let i_o = random_image(8, 8, &mut r);
        let i_r = random_image(8, 8, &mut r);
        let w = LossWeights::default();

        let (_, grad) = reconstruction_loss_wrt_image(&i_r, &i_o, &enc, 2, &w).unwrap();
        let value_of = |img: &ImageTensor| {
            reconstruction_loss_wrt_image(img, &i_o, &enc, 2, &w)
                .unwrap()
                .0
                .value
        };
        for c in sample_coords(i_r.data().dim(), 6, &mut r) {
            let mut plus = i_r.clone();
            plus.data_mut()[c] += FD_STEP;
            let mut minus = i_r.clone();
            minus.data_mut()[c] -= FD_STEP;
            let fd = (value_of(&plus) - value_of(&minus)) / (2.0 * FD_STEP);
            assert!(
                rel_err(grad[c], fd) < TOL,
                "seed {seed} coord {c:?}: analytic {} vs fd {fd}",
                grad[c]
            );
        }
    }
}

#[test]
fn stylization_gradient_matches_central_differences() {
    for seed in 0..20u64 {
        let mut r = rng(2000 + seed);
        let spec = ArchSpec::from_stages(vec![vec![4], vec![6]]).unwrap();
        let enc = build_encoder(&spec, &mut r).unwrap();
        let content = random_image(8, 8, &mut r);
        let style = random_image(8, 8, &mut r);
        let stylized = random_image(8, 8, &mut r);
        let taps_c = enc.encode(content.data()).unwrap();
        let taps_s = enc.encode(style.data()).unwrap();
        let w = LossWeights::default();

        let (_, grad) = stylization_loss_wrt_image(&stylized, &taps_c, &taps_s, &enc, &w).unwrap();
        let value_of = |img: &ImageTensor| {
            stylization_loss_wrt_image(img, &taps_c, &taps_s, &enc, &w)
                .unwrap()
                .0
                .value
        };
        for c in sample_coords(stylized.data().dim(), 6, &mut r) {
            let mut plus = stylized.clone();
            plus.data_mut()[c] += FD_STEP;
            let mut minus = stylized.clone();
            minus.data_mut()[c] -= FD_STEP;
            let fd = (value_of(&plus) - value_of(&minus)) / (2.0 * FD_STEP);
            assert!(
                rel_err(grad[c], fd) < TOL,
                "seed {seed} coord {c:?}: analytic {} vs fd {fd}",
                grad[c]
            );
        }
    }
}

#[test]
fn embedding_gradients_match_central_differences() {
    for seed in 0..20u64 {
        let mut r = rng(3000 + seed);
        let (c, c_prime) = (3, 2);
        let f_teacher = random_feature(c, 4, 4, &mut r);
        let f_student = random_feature(c_prime, 4, 4, &mut r);
        let q = EmbeddingMap::init(c, c_prime, 1, &mut r);

        let loss = embedding_loss(&f_teacher, &f_student, &q).unwrap();

        // dLoss/dQ against central differences.
        for _ in 0..4 {
            let (i, j) = (r.random_range(0..c), r.random_range(0..c_prime));
            let mut bump = |delta: f64| {
                let mut q2 = q.clone();
                q2.q[[i, j]] += delta;
                embedding_loss(&f_teacher, &f_student, &q2).unwrap().value
            };
            let fd = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
            assert!(
                rel_err(loss.grad_q[[i, j]], fd) < TOL,
                "seed {seed} dQ[{i},{j}]: analytic {} vs fd {fd}",
                loss.grad_q[[i, j]]
            );
        }

        // dLoss/dF' against central differences.
        for coord in sample_coords(f_student.data().dim(), 4, &mut r) {
            let mut bump = |delta: f64| {
                let mut data = f_student.data().clone();
                data[coord] += delta;
                let f2 = FeatureMap::new(data).unwrap();
                embedding_loss(&f_teacher, &f2, &q).unwrap().value
            };
            let fd = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
            assert!(
                rel_err(loss.grad_student[coord], fd) < TOL,
                "seed {seed} dF'{coord:?}: analytic {} vs fd {fd}",
                loss.grad_student[coord]
            );
        }
    }
}

#[test]
fn adain_backward_matches_central_differences() {
    for seed in 0..10u64 {
        let mut r = rng(4000 + seed);
        let f_c = random_feature(3, 4, 4, &mut r);
        let f_s = random_feature(3, 4, 4, &mut r);
        let eps = 1e-5;
        // Linear functional of the output: loss = sum(out * weights).
        let weights = Array3::from_shape_fn(f_c.data().dim(), |_| r.random_range(-1.0..1.0));
        let value = |fc: &FeatureMap, fs: &FeatureMap| {
            let out = adain_transfer(fc, fs, eps).unwrap();
            out.data()
                .iter()
                .zip(weights.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (g_c, g_s) = adain_backward(&f_c, &f_s, eps, &weights).unwrap();

        for coord in sample_coords(f_c.data().dim(), 4, &mut r) {
            let mut bump = |delta: f64| {
                let mut d = f_c.data().clone();
                d[coord] += delta;
                value(&FeatureMap::new(d).unwrap(), &f_s)
            };
            let fd = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
            assert!(
                rel_err(g_c[coord], fd) < TOL,
                "seed {seed} content {coord:?}: analytic {} vs fd {fd}",
                g_c[coord]
            );
        }
        for coord in sample_coords(f_s.data().dim(), 4, &mut r) {
            let mut bump = |delta: f64| {
                let mut d = f_s.data().clone();
                d[coord] += delta;
                value(&f_c, &FeatureMap::new(d).unwrap())
            };
            let fd = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
            assert!(
                rel_err(g_s[coord], fd) < TOL,
                "seed {seed} style {coord:?}: analytic {} vs fd {fd}",
                g_s[coord]
            );
        }
    }
}

#[test]
fn embedding_gradient_of_q_in_mapped_pipeline() {
    // The output embedding also feeds the decoder; verify Q gradients through
    // an arbitrary downstream linear functional.
    let mut r = rng(5000);
    let f_student = random_feature(2, 3, 3, &mut r);
    let q = EmbeddingMap::init(4, 2, 1, &mut r);
    let downstream = Array2::from_shape_fn((4, 9), |_| r.random_range(-1.0..1.0));

    let value = |qm: &EmbeddingMap| {
        let mapped = qm.apply(&f_student).unwrap();
        mapped
            .flat()
            .iter()
            .zip(downstream.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let (grad_q, _) = q.backward(&f_student, &downstream);
    for (i, j) in [(0, 0), (2, 1), (3, 0)] {
        let mut bump = |delta: f64| {
            let mut q2 = q.clone();
            q2.q[[i, j]] += delta;
            value(&q2)
        };
        let fd = (bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP);
        assert!(rel_err(grad_q[[i, j]], fd) < TOL);
    }
}
