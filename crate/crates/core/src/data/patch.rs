//! Patch extraction with edge replication and per-channel standardization.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::image::ImageBuf;

/// Per-channel mean / standard deviation used to standardize patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// Train-split statistics for both spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub rgb: ChannelStats,
    pub lwir: ChannelStats,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            rgb: ChannelStats::identity(3),
            lwir: ChannelStats::identity(1),
        }
    }
}

/// Raw (unstandardized) window of `height` rows by `width` columns centered
/// at (center_x, center_y); the window start is `center - size/2`.
/// Out-of-bounds pixels replicate the nearest edge pixel.
pub fn raw_patch(
    image: &ImageBuf,
    center_x: i64,
    center_y: i64,
    height: usize,
    width: usize,
) -> Array3<f32> {
    let x0 = center_x - (width / 2) as i64;
    let y0 = center_y - (height / 2) as i64;
    let mut out = Array3::<f32>::zeros((image.channels, height, width));
    for c in 0..image.channels {
        for (dy, mut row) in out
            .index_axis_mut(ndarray::Axis(0), c)
            .rows_mut()
            .into_iter()
            .enumerate()
        {
            for (dx, v) in row.iter_mut().enumerate() {
                *v = image.get_clamped(c, y0 + dy as i64, x0 + dx as i64);
            }
        }
    }
    out
}

/// Standardized patch: (value - mean) / std per channel.
pub fn extract_patch(
    image: &ImageBuf,
    center_x: i64,
    center_y: i64,
    height: usize,
    width: usize,
    stats: &ChannelStats,
) -> Array3<f32> {
    let mut patch = raw_patch(image, center_x, center_y, height, width);
    for c in 0..image.channels {
        let mean = stats.mean[c] as f32;
        let inv = 1.0 / stats.std[c] as f32;
        patch
            .index_axis_mut(ndarray::Axis(0), c)
            .map_inplace(|v| *v = (*v - mean) * inv);
    }
    patch
}

/// Per-channel mean/std over a population of raw patches.
pub fn stats_of_patches(patches: &[Array3<f32>], channels: usize) -> ChannelStats {
    let mut mean = vec![0.0f64; channels];
    let mut std = vec![1.0f64; channels];
    let mut count = 0usize;
    for p in patches {
        count += p.len() / channels;
        for (c, m) in mean.iter_mut().enumerate() {
            *m += p
                .index_axis(ndarray::Axis(0), c)
                .iter()
                .map(|v| *v as f64)
                .sum::<f64>();
        }
    }
    if count == 0 {
        return ChannelStats::identity(channels);
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    for (c, s) in std.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for p in patches {
            for v in p.index_axis(ndarray::Axis(0), c) {
                let d = *v as f64 - mean[c];
                acc += d * d;
            }
        }
        // guard against degenerate (constant) populations
        *s = (acc / count as f64).sqrt().max(1e-6);
    }
    ChannelStats { mean, std }
}
