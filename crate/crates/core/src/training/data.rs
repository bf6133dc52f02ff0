//! Corpus loading: image directories or deterministic synthetic textures,
//! resized then randomly cropped into training patches.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Synthetic texture families. The two families are visually disjoint so
/// they can serve as content/style distributions for stylization training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureFamily {
    /// Random-cell checkerboards with additive noise.
    Checker,
    /// Smooth sinusoidal stripe blends with additive noise.
    Stripes,
}

/// Where training images come from.
#[derive(Debug, Clone)]
pub enum CorpusSource {
    Directory(PathBuf),
    Synthetic { family: TextureFamily, count: usize },
}

/// A loaded corpus: images at `resize x resize` plus the crop size used when
/// drawing batches.
#[derive(Debug, Clone)]
pub struct Corpus {
    images: Vec<ImageTensor>,
    crop: usize,
}

/// Loads or generates a corpus. Directory images are resized to
/// `resize x resize`; unreadable files are skipped with a warning; an empty
/// result is a data error. Synthetic images are generated deterministically
/// from `seed`.
pub fn load_corpus(source: &CorpusSource, resize: usize, crop: usize, seed: u64) -> Result<Corpus> {
    if crop == 0 || crop > resize {
        return Err(Error::Arg(format!(
            "crop {crop} must be in 1..={resize} (resize)"
        )));
    }
    let images = match source {
        CorpusSource::Directory(dir) => {
            let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            names.sort();
            let mut images = Vec::new();
            for path in names {
                match ImageTensor::load(&path) {
                    Ok(img) => images.push(img.resize(resize, resize)),
                    Err(e) => log::warn!("skipping {}: {e}", path.display()),
                }
            }
            images
        }
        CorpusSource::Synthetic { family, count } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..*count)
                .map(|_| generate_texture(*family, resize, &mut rng))
                .collect()
        }
    };
    if images.is_empty() {
        return Err(Error::Data("corpus has no decodable images".into()));
    }
    Ok(Corpus { images, crop })
}

impl Corpus {
    /// Wraps in-memory images directly (no resize applied).
    pub fn from_images(images: Vec<ImageTensor>, crop: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data("corpus has no images".into()));
        }
        if images
            .iter()
            .any(|img| img.height() < crop || img.width() < crop)
        {
            return Err(Error::Arg(format!(
                "every image must be at least {crop}x{crop}"
            )));
        }
        Ok(Self { images, crop })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn crop_size(&self) -> usize {
        self.crop
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    /// One randomly cropped patch from image `idx`.
    pub fn patch(&self, idx: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
        let img = &self.images[idx % self.images.len()];
        let max_top = img.height() - self.crop;
        let max_left = img.width() - self.crop;
        let top = if max_top == 0 {
            0
        } else {
            rng.random_range(0..=max_top)
        };
        let left = if max_left == 0 {
            0
        } else {
            rng.random_range(0..=max_left)
        };
        img.crop(top, left, self.crop, self.crop)
            .expect("crop fits")
    }

    /// A full epoch of shuffled batches of cropped patches. Deterministic
    /// given the RNG state; the final partial batch is kept.
    pub fn epoch_batches(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<ImageTensor>> {
        assert!(batch_size > 0, "batch size must be positive");
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(rng);
        order
            .chunks(batch_size)
            .map(|chunk| chunk.iter().map(|&i| self.patch(i, rng)).collect())
            .collect()
    }

    /// The first `n` center crops, for held-out evaluation.
    pub fn eval_patches(&self, n: usize) -> Vec<ImageTensor> {
        (0..n.min(self.images.len()))
            .map(|i| {
                let img = &self.images[i];
                let top = (img.height() - self.crop) / 2;
                let left = (img.width() - self.crop) / 2;
                img.crop(top, left, self.crop, self.crop)
                    .expect("crop fits")
            })
            .collect()
    }
}

/// Generates one texture image with values in `[0, 1]`.
pub fn generate_texture(family: TextureFamily, size: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    match family {
        TextureFamily::Checker => {
            let cell = rng.random_range(3..=8usize);
            let (py, px) = (rng.random_range(0..cell), rng.random_range(0..cell));
            let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let b: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
            let mut img = ImageTensor::from_fn(size, size, |c, y, x| {
                let parity = ((y + py) / cell + (x + px) / cell) % 2;
                if parity == 0 {
                    a[c]
                } else {
                    b[c]
                }
            });
            img.data_mut()
                .mapv_inplace(|v| v + noise.random_range(-0.03..0.03));
            img.clamp01();
            img
        }
        TextureFamily::Stripes => {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (dy, dx) = (angle.sin(), angle.cos());
            let wavelength = rng.random_range(4.0..12.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let b: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
            let mut img = ImageTensor::from_fn(size, size, |c, y, x| {
                let t = (std::f64::consts::TAU * (dy * y as f64 + dx * x as f64) / wavelength
                    + phase)
                    .sin()
                    * 0.5
                    + 0.5;
                a[c] * t + b[c] * (1.0 - t)
            });
            img.data_mut()
                .mapv_inplace(|v| v + noise.random_range(-0.02..0.02));
            img.clamp01();
            img
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_values_in_unit_range() {
        let corpus = load_corpus(
            &CorpusSource::Synthetic {
                family: TextureFamily::Checker,
                count: 100,
            },
            48,
            32,
            7,
        )
        .unwrap();
        assert_eq!(corpus.len(), 100);
        for img in corpus.images() {
            for &v in img.data().iter() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn crops_stay_in_bounds_and_sized() {
        let corpus = load_corpus(
            &CorpusSource::Synthetic {
                family: TextureFamily::Stripes,
                count: 5,
            },
            48,
            32,
            1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = corpus.patch(0, &mut rng);
            assert_eq!((p.height(), p.width()), (32, 32));
        }
    }

    #[test]
    fn full_size_crop_is_whole_image() {
        let corpus = load_corpus(
            &CorpusSource::Synthetic {
                family: TextureFamily::Checker,
                count: 1,
            },
            32,
            32,
            3,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(corpus.patch(0, &mut rng), corpus.images()[0]);
    }

    #[test]
    fn same_seed_same_batches() {
        let corpus = load_corpus(
            &CorpusSource::Synthetic {
                family: TextureFamily::Checker,
                count: 12,
            },
            48,
            32,
            9,
        )
        .unwrap();
        let a = corpus.epoch_batches(4, &mut ChaCha8Rng::seed_from_u64(5));
        let b = corpus.epoch_batches(4, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.len(), b.len());
        for (ba, bb) in a.iter().zip(&b) {
            for (x, y) in ba.iter().zip(bb) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn empty_directory_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_corpus(&CorpusSource::Directory(dir.path().into()), 48, 32, 0);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn unreadable_file_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("junk.png"), b"not an image").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        generate_texture(TextureFamily::Checker, 48, &mut rng)
            .save(&dir.path().join("good.png"))
            .unwrap();
        let corpus = load_corpus(&CorpusSource::Directory(dir.path().into()), 48, 32, 0).unwrap();
        assert_eq!(corpus.len(), 1);
    }
}
