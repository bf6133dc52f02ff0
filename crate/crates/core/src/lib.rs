//! Core library for compact encoder-decoder style transfer.
//!
//! The crate trains collaborator decoders against frozen encoders, distills
//! narrow student encoders through a frozen collaborator plus linear-embedding
//! taps, and runs WCT-, AdaIN-, and optimization-based stylization with the
//! resulting models. Analytic counters report parameters, FLOPs, and peak
//! activation memory for any architecture spec.

pub mod arch;
pub mod error;
pub mod feature;
pub mod image;
pub mod losses;
pub mod optim;
pub mod stylize;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
pub use feature::{FeatureMap, FeatureTaps};
pub use image::ImageTensor;
