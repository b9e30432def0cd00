//! Disparity estimation by candidate sweep and recall evaluation.
//!
//! For a query point the thermal search strip (height P, width P + d_max)
//! is swept with P-wide windows; window i corresponds to disparity
//! i - d_max/2. Each window is classified against the visible patch by
//! both heads; the per-head argmax disparities are averaged into the
//! final estimate.

use ndarray::{Array3, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{extract_patch, DatasetManifest, DisparityPoint, NormStats};
use crate::error::{Error, Result};
use crate::model::{softmax2, FusionMode, Model, Stream};

pub const RECALL_THRESHOLDS: [f64; 3] = [1.0, 3.0, 5.0];

/// Whether sweep windows are featurized independently or sliced from the
/// feature map of the whole strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Windowed,
    Wide,
}

impl std::str::FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "windowed" => Ok(SweepMode::Windowed),
            "wide" => Ok(SweepMode::Wide),
            other => Err(Error::Usage(format!(
                "unknown sweep mode '{other}' (expected windowed|wide)"
            ))),
        }
    }
}

/// Per-candidate head scores for one query point. Candidate i maps to
/// disparity i - d_max/2; probabilities are the heads' same-class outputs.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub d_max: usize,
    pub logits_corr: Option<Vec<[f64; 2]>>,
    pub logits_concat: Option<Vec<[f64; 2]>>,
    pub y_corr: Option<Vec<f64>>,
    pub y_concat: Option<Vec<f64>>,
}

impl SweepResult {
    pub fn from_logits(
        d_max: usize,
        logits_corr: Option<Vec<[f64; 2]>>,
        logits_concat: Option<Vec<[f64; 2]>>,
    ) -> SweepResult {
        let probs = |l: &Option<Vec<[f64; 2]>>| {
            l.as_ref().map(|v| {
                v.iter()
                    .map(|&pair| softmax2(pair).same_probability())
                    .collect()
            })
        };
        SweepResult {
            d_max,
            y_corr: probs(&logits_corr),
            y_concat: probs(&logits_concat),
            logits_corr,
            logits_concat,
        }
    }

    pub fn candidates(&self) -> usize {
        self.d_max + 1
    }

    pub fn disparity_of(&self, index: usize) -> i32 {
        index as i32 - (self.d_max / 2) as i32
    }
}

/// Final estimate for one point: per-head integer disparities and their
/// average (fractional values kept).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparityEstimate {
    pub d_corr: Option<i32>,
    pub d_concat: Option<i32>,
    pub d_hat: f64,
}

fn argmax_smallest(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax per head, ties to the smallest index; the final disparity is
/// the mean of the per-head picks (or the single active head's pick).
///
/// The argmax of the same-probability is taken on the logit margin
/// z_same - z_different when logits are available: softmax is strictly
/// monotone in the margin, and the margin does not saturate to 1.0 the
/// way extreme probabilities do, so positive rescaling of the scores can
/// never move the pick.
pub fn estimate(sweep: &SweepResult) -> DisparityEstimate {
    let margin_scores = |logits: &Option<Vec<[f64; 2]>>, probs: &Option<Vec<f64>>| {
        logits
            .as_ref()
            .map(|l| l.iter().map(|pair| pair[1] - pair[0]).collect::<Vec<f64>>())
            .or_else(|| probs.clone())
    };
    let pick = |scores: Option<Vec<f64>>| scores.map(|s| sweep.disparity_of(argmax_smallest(&s)));
    let d_corr = pick(margin_scores(&sweep.logits_corr, &sweep.y_corr));
    let d_concat = pick(margin_scores(&sweep.logits_concat, &sweep.y_concat));
    let d_hat = match (d_corr, d_concat) {
        (Some(a), Some(b)) => (a as f64 + b as f64) / 2.0,
        (Some(a), None) => a as f64,
        (None, Some(b)) => b as f64,
        (None, None) => f64::NAN,
    };
    DisparityEstimate {
        d_corr,
        d_concat,
        d_hat,
    }
}

/// Run the candidate sweep for one query point.
///
/// `rgb_patch` is the standardized P x P visible patch, `wide_lwir` the
/// standardized P x (P + d_max) thermal strip, both centered on the query
/// column.
pub fn sweep(
    model: &Model<f32>,
    rgb_patch: &Array3<f32>,
    wide_lwir: &Array3<f32>,
    d_max: usize,
    fusion_mode: FusionMode,
    sweep_mode: SweepMode,
) -> Result<SweepResult> {
    let p = model.extractor_cfg.patch_size;
    if rgb_patch.dim() != (3, p, p) {
        return Err(Error::shape(
            "sweep",
            format!("rgb patch {:?}, expected (3, {p}, {p})", rgb_patch.dim()),
        ));
    }
    if wide_lwir.dim() != (1, p, p + d_max) {
        return Err(Error::shape(
            "sweep",
            format!(
                "wide lwir patch {:?}, expected (1, {p}, {})",
                wide_lwir.dim(),
                p + d_max
            ),
        ));
    }
    let k = d_max + 1;
    let c_out = model.extractor_cfg.out_channels;

    let f_rgb = model.extract(Stream::Rgb, rgb_patch)?.0;

    // thermal features per window: [K, C_out, P, P]
    let mut windows = Array4::<f32>::zeros((k, c_out, p, p));
    match sweep_mode {
        SweepMode::Wide => {
            let f_wide = model.extract(Stream::Lwir, wide_lwir)?.0;
            for i in 0..k {
                windows
                    .index_axis_mut(ndarray::Axis(0), i)
                    .assign(&f_wide.slice(ndarray::s![.., .., i..i + p]));
            }
        }
        SweepMode::Windowed => {
            for i in 0..k {
                let window = wide_lwir.slice(ndarray::s![.., .., i..i + p]).to_owned();
                let f = model.extract(Stream::Lwir, &window)?.0;
                windows.index_axis_mut(ndarray::Axis(0), i).assign(&f);
            }
        }
    }

    // visible features repeated across candidates
    let mut rgb_batch = Array4::<f32>::zeros((k, c_out, p, p));
    for i in 0..k {
        rgb_batch.index_axis_mut(ndarray::Axis(0), i).assign(&f_rgb);
    }

    let (corr, concat) = model.head_logits(&rgb_batch, &windows, fusion_mode)?;
    let to_rows = |m: Option<ndarray::Array2<f32>>| {
        m.map(|logits| {
            (0..logits.nrows())
                .map(|i| [logits[[i, 0]] as f64, logits[[i, 1]] as f64])
                .collect::<Vec<[f64; 2]>>()
        })
    };
    let result = SweepResult::from_logits(d_max, to_rows(corr), to_rows(concat));
    for probs in [&result.y_corr, &result.y_concat].into_iter().flatten() {
        if probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite sweep probability".into()));
        }
    }
    Ok(result)
}

/// Fraction of points whose estimate lies within `n` pixels of ground
/// truth (real-valued comparison).
pub fn recall(estimates: &[f64], ground_truth: &[f64], n: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Dataset("recall: empty point list".into()));
    }
    if estimates.len() != ground_truth.len() {
        return Err(Error::shape(
            "recall",
            format!(
                "{} estimates vs {} ground truth",
                estimates.len(),
                ground_truth.len()
            ),
        ));
    }
    let hits = estimates
        .iter()
        .zip(ground_truth)
        .filter(|(e, g)| (**e - **g).abs() <= n)
        .count();
    Ok(hits as f64 / estimates.len() as f64)
}

/// One evaluated point, as written to the predictions CSV.
#[derive(Debug, Clone)]
pub struct PredictionRow {
    pub frame_id: String,
    pub x: usize,
    pub y: usize,
    pub gt_d: i32,
    pub estimate: DisparityEstimate,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut s = String::from("frame_id,x,y,gt_d,d_corr,d_concat,d_hat\n");
    let opt = |v: Option<i32>| v.map(|d| d.to_string()).unwrap_or_default();
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.frame_id,
            r.x,
            r.y,
            r.gt_d,
            opt(r.estimate.d_corr),
            opt(r.estimate.d_concat),
            r.estimate.d_hat,
        ));
    }
    s
}

/// Recall at the standard thresholds for one fold's test points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: String,
    pub thresholds: Vec<f64>,
    pub recalls: Vec<f64>,
    pub n_points: usize,
}

/// Cross-fold aggregation: mean and sample standard deviation per
/// threshold. `single_fold` flags a degenerate (one-fold) aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub thresholds: Vec<f64>,
    pub folds: Vec<FoldReport>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub single_fold: bool,
}

pub fn cross_validate(reports: &[FoldReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Dataset("cross_validate: no fold reports".into()));
    }
    let thresholds = reports[0].thresholds.clone();
    for r in reports {
        if r.thresholds != thresholds {
            return Err(Error::Dataset(format!(
                "fold '{}' uses different thresholds",
                r.fold_id
            )));
        }
    }
    let n = reports.len();
    let mut mean = vec![0.0; thresholds.len()];
    let mut std = vec![0.0; thresholds.len()];
    for (t, m) in mean.iter_mut().enumerate() {
        *m = reports.iter().map(|r| r.recalls[t]).sum::<f64>() / n as f64;
    }
    if n > 1 {
        for (t, s) in std.iter_mut().enumerate() {
            let var = reports
                .iter()
                .map(|r| (r.recalls[t] - mean[t]).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            *s = var.sqrt();
        }
    }
    Ok(AggregateReport {
        thresholds,
        folds: reports.to_vec(),
        mean,
        std,
        single_fold: n == 1,
    })
}

/// Settings for evaluating a trained model on a manifest.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub d_max: usize,
    pub fusion_mode: FusionMode,
    pub sweep_mode: SweepMode,
    pub workers: usize,
}

/// Sweep every point of `manifest` and report recalls at the standard
/// thresholds. Points are processed independently (in parallel when
/// `workers > 1`) and results are assembled in point order.
pub fn evaluate_manifest(
    model: &Model<f32>,
    stats: &NormStats,
    manifest: &DatasetManifest,
    fold_id: &str,
    settings: EvalSettings,
) -> Result<(FoldReport, Vec<PredictionRow>)> {
    if manifest.points.is_empty() {
        return Err(Error::Dataset(
            "evaluation requires at least one test point".into(),
        ));
    }
    let p = model.extractor_cfg.patch_size;
    let eval_point = |point: &DisparityPoint| -> Result<PredictionRow> {
        let (rgb, lwir) = manifest.images_for(point)?;
        let rgb_patch = extract_patch(rgb, point.x as i64, point.y as i64, p, p, &stats.rgb);
        let wide = extract_patch(
            lwir,
            point.x as i64,
            point.y as i64,
            p,
            p + settings.d_max,
            &stats.lwir,
        );
        let sw = sweep(
            model,
            &rgb_patch,
            &wide,
            settings.d_max,
            settings.fusion_mode,
            settings.sweep_mode,
        )?;
        Ok(PredictionRow {
            frame_id: point.frame_id.clone(),
            x: point.x,
            y: point.y,
            gt_d: point.d,
            estimate: estimate(&sw),
        })
    };

    let rows: Vec<PredictionRow> = if settings.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            manifest
                .points
                .par_iter()
                .map(eval_point)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        manifest
            .points
            .iter()
            .map(eval_point)
            .collect::<Result<Vec<_>>>()?
    };

    let estimates: Vec<f64> = rows.iter().map(|r| r.estimate.d_hat).collect();
    let gts: Vec<f64> = rows.iter().map(|r| r.gt_d as f64).collect();
    let recalls = RECALL_THRESHOLDS
        .iter()
        .map(|&n| recall(&estimates, &gts, n))
        .collect::<Result<Vec<f64>>>()?;
    Ok((
        FoldReport {
            fold_id: fold_id.to_string(),
            thresholds: RECALL_THRESHOLDS.to_vec(),
            recalls,
            n_points: rows.len(),
        },
        rows,
    ))
}
