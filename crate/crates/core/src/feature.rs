//! Feature maps and per-stage tap collections produced by encoders.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// A `C x H x W` activation block. The flattened view is `C x (H*W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Arg("feature dimensions must be positive".into()));
        }
        Ok(Self { data })
    }

    /// Builds a `C x H x W` map from its flattened `C x (H*W)` view.
    pub fn from_flat(flat: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        let (c, n) = flat.dim();
        if n != height * width {
            return Err(Error::Arg(format!(
                "flat view has {n} columns, expected {height}*{width}"
            )));
        }
        let data = flat
            .into_shape_with_order((c, height, width))
            .map_err(|e| Error::Arg(e.to_string()))?;
        Self::new(data)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// Number of spatial positions `H*W`.
    pub fn positions(&self) -> usize {
        self.height() * self.width()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// The `C x (H*W)` view over the same storage.
    pub fn flat(&self) -> ArrayView2<'_, f64> {
        let (c, h, w) = self.data.dim();
        self.data
            .view()
            .into_shape_with_order((c, h * w))
            .expect("CHW storage is contiguous")
    }
}

/// The ordered per-stage collection of first-conv activations of an encoder:
/// `taps()[k-1]` is the stage-`k` tap; the deepest tap is the encoder output.
#[derive(Debug, Clone)]
pub struct FeatureTaps {
    maps: Vec<FeatureMap>,
}

impl FeatureTaps {
    pub fn new(maps: Vec<FeatureMap>) -> Self {
        Self { maps }
    }

    pub fn stage_count(&self) -> usize {
        self.maps.len()
    }

    /// Tap for stage `k` (1-based).
    pub fn stage(&self, k: usize) -> Result<&FeatureMap> {
        self.maps
            .get(k.wrapping_sub(1))
            .ok_or_else(|| Error::Arg(format!("stage {k} out of range 1..={}", self.maps.len())))
    }

    /// The deepest tap, which doubles as the encoder output feature.
    pub fn output(&self) -> &FeatureMap {
        self.maps.last().expect("taps are never empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureMap> {
        self.maps.iter()
    }
}
