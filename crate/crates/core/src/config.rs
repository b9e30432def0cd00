//! Flat key-value run configuration.
//!
//! One TOML file carries every tunable default; command-line flags
//! override individual fields, and each run writes the fully-resolved
//! config next to its outputs so any result can be reproduced from the
//! emitted file alone. Unknown keys are fatal.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SweepMode;
use crate::model::{ExtractorConfig, FusionMode, HeadConfig, Variant};
use crate::synth::SynthConfig;
use crate::train::Hyperparams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // paths
    pub dataset_root: String,
    pub fold_file: String,
    pub out_dir: String,
    pub fold_id: String,

    // feature extractor
    pub patch_size: usize,
    pub base_channels: usize,
    pub stage1_channels: Vec<usize>,
    pub stage2_channels: Vec<usize>,
    pub stage3_channels: Vec<usize>,
    pub blocks_per_branch: usize,
    pub out_channels: usize,
    pub variant: String,

    // classification heads
    pub head_hidden: Vec<usize>,

    // training
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub d_max: usize,
    pub seed: u64,
    pub fusion_mode: String,
    pub neg_margin: i32,
    pub neg_per_pos: usize,
    pub augment: bool,

    // synthetic generator
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_frames: usize,
    pub synth_shapes_per_frame: usize,
    pub synth_max_disparity: i32,
    pub synth_texture_density: f64,
    pub synth_blur_radius: usize,
    pub synth_noise_std: f64,
    pub synth_points_per_shape: usize,

    // evaluation
    pub sweep_mode: String,
    pub eval_overlays: bool,

    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: "dataset".into(),
            fold_file: "folds.toml".into(),
            out_dir: "runs".into(),
            fold_id: "fold1".into(),
            patch_size: 36,
            base_channels: 32,
            stage1_channels: vec![32],
            stage2_channels: vec![32, 64],
            stage3_channels: vec![32, 64, 128],
            blocks_per_branch: 2,
            out_channels: 64,
            variant: "scales".into(),
            head_hidden: vec![512, 128],
            learning_rate: 0.001,
            epochs: 200,
            batch_size: 24,
            d_max: 64,
            seed: 0,
            fusion_mode: "both".into(),
            neg_margin: 3,
            neg_per_pos: 1,
            augment: true,
            synth_height: 96,
            synth_width: 128,
            synth_frames: 80,
            synth_shapes_per_frame: 2,
            synth_max_disparity: 8,
            synth_texture_density: 0.25,
            synth_blur_radius: 1,
            synth_noise_std: 0.02,
            synth_points_per_shape: 1,
            sweep_mode: "windowed".into(),
            eval_overlays: false,
            workers: 1,
        }
    }
}

/// Command-line overrides; flags win over file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub fold_id: Option<String>,
    pub fusion_mode: Option<String>,
    pub variant: Option<String>,
    pub sweep_mode: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Usage(msg) => Error::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = &o.fold_id {
            self.fold_id = v.clone();
        }
        if let Some(v) = &o.fusion_mode {
            self.fusion_mode = v.clone();
        }
        if let Some(v) = &o.variant {
            self.variant = v.clone();
        }
        if let Some(v) = &o.sweep_mode {
            self.sweep_mode = v.clone();
        }
    }

    pub fn variant(&self) -> Result<Variant> {
        self.variant.parse()
    }

    pub fn fusion_mode(&self) -> Result<FusionMode> {
        self.fusion_mode.parse()
    }

    pub fn sweep_mode(&self) -> Result<SweepMode> {
        self.sweep_mode.parse()
    }

    pub fn extractor_config(&self) -> Result<ExtractorConfig> {
        let cfg = ExtractorConfig {
            input_channels: 3,
            patch_size: self.patch_size,
            base_channels: self.base_channels,
            stage_channels: vec![
                self.stage1_channels.clone(),
                self.stage2_channels.clone(),
                self.stage3_channels.clone(),
            ],
            blocks_per_branch: self.blocks_per_branch,
            out_channels: self.out_channels,
            variant: self.variant()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_config(&self) -> Result<HeadConfig> {
        let cfg = HeadConfig {
            hidden: self.head_hidden.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let h = Hyperparams {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            d_max: self.d_max,
            seed: self.seed,
            fusion_mode: self.fusion_mode()?,
            neg_margin: self.neg_margin,
            neg_per_pos: self.neg_per_pos,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            height: self.synth_height,
            width: self.synth_width,
            shapes_per_frame: self.synth_shapes_per_frame,
            max_disparity: self.synth_max_disparity,
            texture_density: self.synth_texture_density,
            blur_radius: self.synth_blur_radius,
            noise_std: self.synth_noise_std,
            points_per_shape: self.synth_points_per_shape,
            seed: self.seed,
        };
        cfg.validate_against(self.d_max)?;
        Ok(cfg)
    }
}
