//! RGB image tensors: the unit of ingestion and emission.
//!
//! Pixel values are `f64` in `[0, 1]`, stored channel-first as `(3, H, W)`.

use std::path::Path;

use image::{DynamicImage, ImageReader, RgbImage};
use ndarray::Array3;

use crate::error::{Error, Result};

/// An RGB raster in normalized real values, shape `(3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps a `(3, H, W)` array. Errors if the channel count is not 3 or a dimension is zero.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::Arg(format!("image must have 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::Arg("image dimensions must be positive".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((3, height, width)),
        }
    }

    /// Builds an image from a per-pixel function `(channel, y, x) -> value`.
    pub fn from_fn<F: FnMut(usize, usize, usize) -> f64>(
        height: usize,
        width: usize,
        mut f: F,
    ) -> Self {
        Self {
            data: Array3::from_shape_fn((3, height, width), |(c, y, x)| f(c, y, x)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Decodes a PNG or JPEG file into normalized values.
    pub fn load(path: &Path) -> Result<Self> {
        let img = ImageReader::open(path)?.decode()?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Encodes to PNG or JPEG depending on the file extension, clamping to `[0, 1]`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut out = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [0, 1, 2].map(|c| {
                    let v = self.data[[c, y, x]].clamp(0.0, 1.0);
                    (v * 255.0).round() as u8
                });
                out.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        DynamicImage::ImageRgb8(out).save(path)?;
        Ok(())
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(h as usize, w as usize, |c, y, x| {
            f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        })
    }

    /// Bilinear resample to `(height, width)` using half-pixel centers.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        let (sh, sw) = (self.height(), self.width());
        let sy = sh as f64 / height as f64;
        let sx = sw as f64 / width as f64;
        Self::from_fn(height, width, |c, y, x| {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
            let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
            let top = self.data[[c, y0, x0]] * (1.0 - dx) + self.data[[c, y0, x1]] * dx;
            let bot = self.data[[c, y1, x0]] * (1.0 - dx) + self.data[[c, y1, x1]] * dx;
            top * (1.0 - dy) + bot * dy
        })
    }

    /// Extracts the `(height, width)` window with top-left corner `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height() || left + width > self.width() {
            return Err(Error::Arg(format!(
                "crop {height}x{width}@({top},{left}) exceeds image {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(Self::from_fn(height, width, |c, y, x| {
            self.data[[c, top + y, left + x]]
        }))
    }

    /// Reflect-pads on the bottom/right so both sides become multiples of `multiple`.
    /// Returns the padded image and the original `(height, width)` for cropping back.
    pub fn pad_to_multiple(&self, multiple: usize) -> (Self, (usize, usize)) {
        let (h, w) = (self.height(), self.width());
        let ph = h.div_ceil(multiple) * multiple;
        let pw = w.div_ceil(multiple) * multiple;
        if ph == h && pw == w {
            return (self.clone(), (h, w));
        }
        let padded = Self::from_fn(ph, pw, |c, y, x| {
            self.data[[c, mirror_index(y, h), mirror_index(x, w)]]
        });
        (padded, (h, w))
    }

    pub fn clamp01(&mut self) {
        self.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }

    /// Mean squared pixel difference.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::Arg("image shape mismatch".into()));
        }
        let n = self.data.len() as f64;
        let sum: f64 = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / n)
    }
}

/// Mirror-reflects an out-of-range index into `[0, n)` (period `2n - 2`).
fn mirror_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_index_bounces() {
        // n = 4: 0 1 2 3 2 1 0 1 2 3 ...
        let seq: Vec<usize> = (0..9).map(|i| mirror_index(i, 4)).collect();
        assert_eq!(seq, vec![0, 1, 2, 3, 2, 1, 0, 1, 2]);
    }

    #[test]
    fn pad_round_trip() {
        let img = ImageTensor::from_fn(5, 7, |c, y, x| (c + y * 7 + x) as f64 / 100.0);
        let (padded, (h, w)) = img.pad_to_multiple(4);
        assert_eq!((padded.height(), padded.width()), (8, 8));
        let back = padded.crop(0, 0, h, w).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn save_load_round_trip_u8() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = ImageTensor::from_fn(6, 6, |c, y, x| {
            ((c * 83 + y * 17 + x * 5) % 256) as f64 / 255.0
        });
        img.save(&path).unwrap();
        let back = ImageTensor::load(&path).unwrap();
        // Values were exact multiples of 1/255, so the u8 round trip is lossless.
        assert!(img.mse(&back).unwrap() < 1e-12);
    }

    #[test]
    fn resize_constant_is_constant() {
        let img = ImageTensor::from_fn(10, 10, |_, _, _| 0.37);
        let small = img.resize(4, 6);
        for v in small.data().iter() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }
}
