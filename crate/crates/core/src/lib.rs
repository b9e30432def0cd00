//! Cross-spectral (visible / thermal-infrared) patch-based sparse stereo
//! disparity estimation.
//!
//! The toolkit covers the full experiment pipeline:
//!
//! - [`data`]: dataset layout, loading, fold splitting, Manhattan-1 +
//!   mirror augmentation, patch extraction with train-split
//!   standardization.
//! - [`synth`]: synthetic rectified pair generator with known per-shape
//!   disparities for end-to-end verification.
//! - [`model`]: the dual-stream high-resolution feature extractor (no
//!   weight sharing between spectra), correlation/concatenation fusion
//!   and the two-class heads.
//! - [`train`]: positive/negative pair sampling and the Adam training
//!   loop with per-epoch validation and best-checkpoint retention.
//! - [`eval`]: the d_max candidate sweep, two-head disparity estimation
//!   and recall@n fold reports.
//! - [`cli` support]: [`config`] run files and [`viz`] report rendering.
//!
//! Everything is CPU-only and deterministic for a fixed seed.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
