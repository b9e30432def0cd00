//! Pair sampling and the optimization loop.
//!
//! Every augmented ground-truth point yields one positive pair (thermal
//! patch centered on the true match column) and, per the pos:neg ratio,
//! negatives whose disparity offset is drawn uniformly from the sweep
//! range at least `neg_margin` pixels away from the truth. Training
//! minimizes the summed head losses with Adam; after each epoch the model
//! is scored on the validation split and the checkpoint with the best
//! recall@3 is retained.

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{extract_patch, DatasetManifest, DisparityPoint};
use crate::error::{Error, Result};
use crate::eval::{evaluate_manifest, EvalSettings, SweepMode, RECALL_THRESHOLDS};
use crate::model::{ce_loss_and_grad, Checkpoint, ExtractorConfig, FusionMode, HeadConfig, Model};
use crate::nn::{Adam, BnState, Scalar, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub d_max: usize,
    pub seed: u64,
    pub fusion_mode: FusionMode,
    /// Negatives keep at least this many pixels from the true disparity.
    pub neg_margin: i32,
    pub neg_per_pos: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.001,
            epochs: 200,
            batch_size: 24,
            d_max: 64,
            seed: 0,
            fusion_mode: FusionMode::Both,
            neg_margin: 3,
            neg_per_pos: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.neg_per_pos == 0 {
            return Err(Error::Config(
                "epochs, batch_size and neg_per_pos must be positive".into(),
            ));
        }
        if self.d_max == 0 || !self.d_max.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_max {} must be even and positive",
                self.d_max
            )));
        }
        if self.neg_margin <= 0 {
            return Err(Error::Config("neg_margin must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: the visible patch sits at the point, the thermal
/// patch at column x + offset. Positive pairs use offset = d.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub point: DisparityPoint,
    pub offset: i32,
    pub label: u8,
}

/// Deterministic positive/negative pair stream for one epoch, shuffled by
/// (seed, epoch).
pub fn sample_pairs(
    points: &[DisparityPoint],
    hyper: &Hyperparams,
    epoch: usize,
) -> Result<Vec<TrainPair>> {
    let half = (hyper.d_max / 2) as i32;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(0x5A00_0000_0000_0000 | epoch as u64);
    let mut pairs = Vec::with_capacity(points.len() * (1 + hyper.neg_per_pos));
    for point in points {
        pairs.push(TrainPair {
            point: point.clone(),
            offset: point.d,
            label: 1,
        });
        let admissible: Vec<i32> = (-half..=half)
            .filter(|v| (v - point.d).abs() >= hyper.neg_margin)
            .collect();
        if admissible.is_empty() {
            return Err(Error::Config(format!(
                "no admissible negative for d={} with d_max={} and margin {}",
                point.d, hyper.d_max, hyper.neg_margin
            )));
        }
        for _ in 0..hyper.neg_per_pos {
            let offset = admissible[rng.gen_range(0..admissible.len())];
            pairs.push(TrainPair {
                point: point.clone(),
                offset,
                label: 0,
            });
        }
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// Assemble standardized patch tensors for a slice of pairs.
pub fn build_batch<T: Scalar>(
    manifest: &DatasetManifest,
    pairs: &[TrainPair],
    patch_size: usize,
) -> Result<(Array4<T>, Array4<T>, Vec<u8>)> {
    let n = pairs.len();
    let p = patch_size;
    let mut rgb = Array4::<T>::zeros((n, 3, p, p));
    let mut lwir = Array4::<T>::zeros((n, 1, p, p));
    let mut labels = Vec::with_capacity(n);
    for (i, pair) in pairs.iter().enumerate() {
        let (rgb_img, lwir_img) = manifest.images_for(&pair.point)?;
        let rp = extract_patch(
            rgb_img,
            pair.point.x as i64,
            pair.point.y as i64,
            p,
            p,
            &manifest.stats.rgb,
        );
        let lp = extract_patch(
            lwir_img,
            pair.point.x as i64 + pair.offset as i64,
            pair.point.y as i64,
            p,
            p,
            &manifest.stats.lwir,
        );
        copy_patch(&mut rgb, i, &rp);
        copy_patch(&mut lwir, i, &lp);
        labels.push(pair.label);
    }
    Ok((rgb, lwir, labels))
}

fn copy_patch<T: Scalar>(batch: &mut Array4<T>, index: usize, patch: &Array3<f32>) {
    let plane = patch.len();
    let dst = &mut batch.as_slice_mut().unwrap()[index * plane..(index + 1) * plane];
    for (d, v) in dst.iter_mut().zip(patch.as_slice().unwrap()) {
        *d = T::from_f64(*v as f64);
    }
}

/// Per-head losses of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub corr: Option<f64>,
    pub concat: Option<f64>,
}

impl BatchLosses {
    pub fn total(&self) -> f64 {
        self.corr.unwrap_or(0.0) + self.concat.unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.corr.map(|v| v.is_finite()).unwrap_or(true)
            && self.concat.map(|v| v.is_finite()).unwrap_or(true)
    }
}

/// Training-mode forward (and optionally backward) pass over one batch.
/// Gradients accumulate into the model's parameter store; normalization
/// running statistics are updated. Heads outside the fusion mode are not
/// touched: they are absent from the computed graph, so their parameters
/// receive no gradient.
pub fn batch_loss_and_grads<T: Scalar>(
    model: &mut Model<T>,
    rgb: &Array4<T>,
    lwir: &Array4<T>,
    labels: &[u8],
    mode: FusionMode,
    compute_grads: bool,
) -> Result<BatchLosses> {
    let Model {
        rgb_stream,
        lwir_stream,
        fusion,
        params,
        state,
        ..
    } = model;

    let rgb_tape = rgb_stream.graph.forward(
        params,
        BnState::Train(state),
        vec![Value::A4(rgb.clone())],
        &[rgb_stream.output],
    );
    let lwir_tape = lwir_stream.graph.forward(
        params,
        BnState::Train(state),
        vec![Value::A4(lwir.clone())],
        &[lwir_stream.output],
    );
    let f_rgb = rgb_tape.value(rgb_stream.output).a4().clone();
    let f_lwir = lwir_tape.value(lwir_stream.output).a4().clone();

    let mut wanted = Vec::new();
    if mode.uses_correlation() {
        wanted.push(fusion.logits_corr);
    }
    if mode.uses_concatenation() {
        wanted.push(fusion.logits_concat);
    }
    let fusion_tape = fusion.graph.forward(
        params,
        BnState::Eval(state),
        vec![Value::A4(f_rgb), Value::A4(f_lwir)],
        &wanted,
    );

    let mut seeds = Vec::new();
    let mut losses = BatchLosses {
        corr: None,
        concat: None,
    };
    if mode.uses_correlation() {
        let logits = fusion_tape.value(fusion.logits_corr).a2();
        let (loss, grad) = ce_loss_and_grad(logits, labels);
        losses.corr = Some(loss);
        seeds.push((fusion.logits_corr, Value::A2(grad)));
    }
    if mode.uses_concatenation() {
        let logits = fusion_tape.value(fusion.logits_concat).a2();
        let (loss, grad) = ce_loss_and_grad(logits, labels);
        losses.concat = Some(loss);
        seeds.push((fusion.logits_concat, Value::A2(grad)));
    }

    if compute_grads {
        let mut input_grads = fusion.graph.backward(params, &fusion_tape, seeds);
        let d_rgb = input_grads[0]
            .take()
            .expect("rgb features receive gradient");
        let d_lwir = input_grads[1]
            .take()
            .expect("lwir features receive gradient");
        rgb_stream
            .graph
            .backward(params, &rgb_tape, vec![(rgb_stream.output, d_rgb)]);
        lwir_stream
            .graph
            .backward(params, &lwir_tape, vec![(lwir_stream.output, d_lwir)]);
    }
    Ok(losses)
}

/// Batch loss on a throwaway copy of the model (state updates and
/// gradients discarded); the objective used for finite differencing.
pub fn probe_loss<T: Scalar>(
    model: &Model<T>,
    rgb: &Array4<T>,
    lwir: &Array4<T>,
    labels: &[u8],
    mode: FusionMode,
) -> Result<f64> {
    let mut scratch = model.clone();
    Ok(batch_loss_and_grads(&mut scratch, rgb, lwir, labels, mode, false)?.total())
}

/// Analytic gradient of the batch loss w.r.t. every parameter, computed on
/// a throwaway copy of the model.
pub fn probe_gradients<T: Scalar>(
    model: &Model<T>,
    rgb: &Array4<T>,
    lwir: &Array4<T>,
    labels: &[u8],
    mode: FusionMode,
) -> Result<(BatchLosses, Vec<T>)> {
    let mut scratch = model.clone();
    scratch.params.zero_grads();
    let losses = batch_loss_and_grads(&mut scratch, rgb, lwir, labels, mode, true)?;
    Ok((losses, scratch.params.grads().to_vec()))
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_corr: Option<f64>,
    pub loss_concat: Option<f64>,
    pub loss_total: f64,
    pub val_recall: [f64; 3],
    pub seconds: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
        format!(
            "epoch={} loss_corr={} loss_concat={} loss_total={:.6} val_r1={:.4} val_r3={:.4} val_r5={:.4} seconds={:.2}",
            self.epoch,
            opt(self.loss_corr),
            opt(self.loss_concat),
            self.loss_total,
            self.val_recall[0],
            self.val_recall[1],
            self.val_recall[2],
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_recall3: f64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("epoch,loss_corr,loss_concat,loss_total,val_r1,val_r3,val_r5,seconds\n");
        for r in &self.epochs {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3}\n",
                r.epoch,
                opt(r.loss_corr),
                opt(r.loss_concat),
                r.loss_total,
                r.val_recall[0],
                r.val_recall[1],
                r.val_recall[2],
                r.seconds
            ));
        }
        s
    }
}

/// Options controlling the training loop that are not hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub fold_id: String,
    pub workers: usize,
    /// Print one log line per epoch.
    pub verbose: bool,
    /// Sweep mode used for the per-epoch validation recall.
    pub val_sweep_mode: SweepMode,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            fold_id: "fold1".into(),
            workers: 1,
            verbose: false,
            val_sweep_mode: SweepMode::Wide,
        }
    }
}

/// Train a fresh model on the train split, validating on the val split
/// after every epoch. Returns the checkpoint with the best validation
/// recall@3 (ties keep the earlier epoch) and the full history.
pub fn train(
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    extractor_cfg: &ExtractorConfig,
    head_cfg: &HeadConfig,
    hyper: &Hyperparams,
    options: &TrainOptions,
) -> Result<(Checkpoint, TrainHistory)> {
    hyper.validate()?;
    if train_manifest.points.is_empty() {
        return Err(Error::Dataset("training split has no points".into()));
    }
    if val_manifest.points.is_empty() {
        return Err(Error::Dataset("validation split has no points".into()));
    }
    let half = (hyper.d_max / 2) as i32;
    for p in train_manifest.points.iter().chain(&val_manifest.points) {
        if p.d.abs() > half {
            return Err(Error::Dataset(format!(
                "point ({}, {}) on '{}' has |d|={} outside the sweep range {half}",
                p.x,
                p.y,
                p.frame_id,
                p.d.abs()
            )));
        }
    }

    let mut model = Model::<f32>::new(extractor_cfg, head_cfg, hyper.seed)?;
    let mut adam = Adam::new(hyper.learning_rate, model.param_count());
    let p = extractor_cfg.patch_size;

    let mut history = TrainHistory {
        epochs: Vec::with_capacity(hyper.epochs),
        best_epoch: 0,
        best_val_recall3: f64::NEG_INFINITY,
    };
    let mut best: Option<Model<f32>> = None;

    for epoch in 1..=hyper.epochs {
        let start = std::time::Instant::now();
        let pairs = sample_pairs(&train_manifest.points, hyper, epoch)?;
        let mut sums = (0.0f64, 0.0f64, 0.0f64); // corr, concat, weight
        let mut saw_corr = false;
        let mut saw_concat = false;
        for (batch_index, chunk) in pairs.chunks(hyper.batch_size).enumerate() {
            let (rgb, lwir, labels) = build_batch::<f32>(train_manifest, chunk, p)?;
            model.params.zero_grads();
            let losses =
                batch_loss_and_grads(&mut model, &rgb, &lwir, &labels, hyper.fusion_mode, true)?;
            if !losses.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_index}: corr={:?} concat={:?}",
                    losses.corr, losses.concat
                )));
            }
            let w = chunk.len() as f64;
            sums.0 += losses.corr.unwrap_or(0.0) * w;
            sums.1 += losses.concat.unwrap_or(0.0) * w;
            sums.2 += w;
            saw_corr |= losses.corr.is_some();
            saw_concat |= losses.concat.is_some();
            adam.step(&mut model.params);
        }

        let (val_report, _) = evaluate_manifest(
            &model,
            &train_manifest.stats,
            val_manifest,
            &options.fold_id,
            EvalSettings {
                d_max: hyper.d_max,
                fusion_mode: hyper.fusion_mode,
                sweep_mode: options.val_sweep_mode,
                workers: options.workers,
            },
        )?;
        let val_recall = [
            val_report.recalls[0],
            val_report.recalls[1],
            val_report.recalls[2],
        ];
        debug_assert_eq!(RECALL_THRESHOLDS[1], 3.0);
        if val_recall[1] > history.best_val_recall3 {
            history.best_val_recall3 = val_recall[1];
            history.best_epoch = epoch;
            best = Some(model.clone());
        }

        let record = EpochRecord {
            epoch,
            loss_corr: saw_corr.then_some(sums.0 / sums.2),
            loss_concat: saw_concat.then_some(sums.1 / sums.2),
            loss_total: (sums.0 + sums.1) / sums.2,
            val_recall,
            seconds: start.elapsed().as_secs_f64(),
        };
        if options.verbose {
            println!("{}", record.log_line());
        }
        history.epochs.push(record);
    }

    let best_model = best.expect("at least one epoch ran");
    Ok((
        Checkpoint {
            model: best_model,
            stats: train_manifest.stats.clone(),
            fold_id: options.fold_id.clone(),
            fusion_mode: hyper.fusion_mode,
            d_max: hyper.d_max,
        },
        history,
    ))
}
