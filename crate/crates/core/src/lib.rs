//! EEG decoding pipeline built around attention-based feature learning.
//!
//! The crate covers the full path from segmented multi-channel recordings to
//! per-class metrics: band-pass filtering and z-score standardization,
//! one-versus-rest CSP spatial filtering, an attention network over sliced
//! time courses, training with Adam on a reverse-mode tape, ten-fold
//! cross-validation, and binary file formats for every intermediate artifact.

pub mod csp;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod numcore;
pub mod preprocess;
pub mod synth;
pub mod train;

pub use csp::SpatialFilter;
pub use error::{Error, Result};
pub use linalg::Mat;
pub use model::{Ablation, ModelConfig, ModelParams};
pub use preprocess::{StandardizationStats, Trial};
pub use train::{EvalReport, TrainConfig};
