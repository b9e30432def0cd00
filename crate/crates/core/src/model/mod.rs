//! The two-stream matching model: independent visible and thermal feature
//! extractors (identical structure, no weight sharing) plus the fusion
//! classification heads, all over one flat parameter store.

pub mod extractor;
pub mod heads;

use std::path::Path;

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::{BnState, Layout, ParamStore, Scalar, StateStore, Value};

pub use extractor::{build_stream, ExtractorConfig, StreamGraph, Variant};
pub use heads::{
    build_fusion, ce_loss_and_grad, concatenate, correlate, head_loss, softmax2, total_loss,
    FusionGraph, FusionMode, HeadConfig, HeadOutput, PROB_EPS,
};

/// Stream-produced activation map, stored as [channels, height, width].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(pub Array3<f32>);

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.0.dim().0
    }
    pub fn height(&self) -> usize {
        self.0.dim().1
    }
    pub fn width(&self) -> usize {
        self.0.dim().2
    }
}

/// Per-head logit batches, absent for heads outside the fusion mode.
pub type HeadLogits<T> = (Option<ndarray::Array2<T>>, Option<ndarray::Array2<T>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rgb,
    Lwir,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub extractor_cfg: ExtractorConfig,
    pub head_cfg: HeadConfig,
    pub rgb_stream: StreamGraph,
    pub lwir_stream: StreamGraph,
    pub fusion: FusionGraph,
    pub params: ParamStore<T>,
    pub state: StateStore<T>,
    pub seed: u64,
}

impl<T: Scalar> Model<T> {
    /// Build both streams and heads, initializing weights from `seed`.
    /// The config's `input_channels` is overridden per stream (3 visible,
    /// 1 thermal).
    pub fn new(extractor_cfg: &ExtractorConfig, head_cfg: &HeadConfig, seed: u64) -> Result<Self> {
        extractor_cfg.validate()?;
        head_cfg.validate()?;
        let mut params = Layout::default();
        let mut states = Layout::default();
        let rgb_stream = build_stream(
            &extractor_cfg.with_input_channels(3),
            &mut params,
            &mut states,
        )?;
        let lwir_stream = build_stream(
            &extractor_cfg.with_input_channels(1),
            &mut params,
            &mut states,
        )?;
        let fusion = build_fusion(
            extractor_cfg.patch_size,
            extractor_cfg.out_channels,
            head_cfg,
            &mut params,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Model {
            extractor_cfg: extractor_cfg.with_input_channels(3),
            head_cfg: head_cfg.clone(),
            rgb_stream,
            lwir_stream,
            fusion,
            params: ParamStore::init(&params, &mut rng),
            state: StateStore::init(&states),
            seed,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn stream(&self, which: Stream) -> &StreamGraph {
        match which {
            Stream::Rgb => &self.rgb_stream,
            Stream::Lwir => &self.lwir_stream,
        }
    }

    /// Inference-mode feature extraction over a batch. Output spatial
    /// dimensions equal the input's for any width; the height must be a
    /// multiple of 4.
    pub fn features(&self, which: Stream, batch: &Array4<T>) -> Result<Array4<T>> {
        run_stream_eval(self.stream(which), &self.params, &self.state, batch)
    }

    /// Inference-mode head logits for fused feature maps, restricted to
    /// the heads the fusion mode uses.
    pub fn head_logits(
        &self,
        f_rgb: &Array4<T>,
        f_lwir: &Array4<T>,
        mode: FusionMode,
    ) -> Result<HeadLogits<T>> {
        if f_rgb.dim() != f_lwir.dim() {
            return Err(Error::shape(
                "head_logits",
                format!("{:?} vs {:?}", f_rgb.dim(), f_lwir.dim()),
            ));
        }
        let mut wanted = Vec::new();
        if mode.uses_correlation() {
            wanted.push(self.fusion.logits_corr);
        }
        if mode.uses_concatenation() {
            wanted.push(self.fusion.logits_concat);
        }
        let tape = self.fusion.graph.forward(
            &self.params,
            BnState::Eval(&self.state),
            vec![Value::A4(f_rgb.clone()), Value::A4(f_lwir.clone())],
            &wanted,
        );
        let take = |id: usize, on: bool| on.then(|| tape.value(id).a2().clone());
        Ok((
            take(self.fusion.logits_corr, mode.uses_correlation()),
            take(self.fusion.logits_concat, mode.uses_concatenation()),
        ))
    }
}

impl Model<f32> {
    /// Extract the feature map of a single standardized patch using the
    /// requested stream.
    pub fn extract(&self, which: Stream, patch: &Array3<f32>) -> Result<FeatureMap> {
        let (c, h, w) = patch.dim();
        let batch = patch
            .to_owned()
            .into_shape_with_order((1, c, h, w))
            .expect("batch reshape");
        let out = self.features(which, &batch)?;
        let (_, co, ho, wo) = out.dim();
        let map = out
            .into_shape_with_order((co, ho, wo))
            .expect("unbatch reshape");
        Ok(FeatureMap(map))
    }
}

/// Standalone single-stream extractor with its own parameters.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub cfg: ExtractorConfig,
    stream: StreamGraph,
    pub params: ParamStore<f32>,
    state: StateStore<f32>,
}

impl Extractor {
    pub fn new(cfg: &ExtractorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = Layout::default();
        let mut states = Layout::default();
        let stream = build_stream(cfg, &mut params, &mut states)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Extractor {
            cfg: cfg.clone(),
            stream,
            params: ParamStore::init(&params, &mut rng),
            state: StateStore::init(&states),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        self.params.values()
    }

    pub fn extract(&self, patch: &Array3<f32>) -> Result<FeatureMap> {
        let (c, h, w) = patch.dim();
        let batch = patch
            .to_owned()
            .into_shape_with_order((1, c, h, w))
            .expect("batch reshape");
        let out = run_stream_eval(&self.stream, &self.params, &self.state, &batch)?;
        let (_, co, ho, wo) = out.dim();
        Ok(FeatureMap(
            out.into_shape_with_order((co, ho, wo)).expect("unbatch"),
        ))
    }
}

/// Eval-mode stream execution. Widths that are not multiples of 4 are
/// right-padded by edge replication and cropped back, so output width
/// always equals input width.
pub(crate) fn run_stream_eval<T: Scalar>(
    sg: &StreamGraph,
    params: &ParamStore<T>,
    state: &StateStore<T>,
    batch: &Array4<T>,
) -> Result<Array4<T>> {
    let (_n, c, h, w) = batch.dim();
    let expected_c = sg.in_channels;
    if c != expected_c {
        return Err(Error::shape(
            "extract",
            format!("expected {expected_c} input channels, got {c}"),
        ));
    }
    if h == 0 || !h.is_multiple_of(4) {
        return Err(Error::shape(
            "extract",
            format!("patch height {h} must be a positive multiple of 4"),
        ));
    }
    let padded;
    let input = if w.is_multiple_of(4) {
        batch
    } else {
        let w4 = w + (4 - w % 4);
        let (n, ..) = batch.dim();
        let mut p = Array4::<T>::zeros((n, c, h, w4));
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w4 {
                        p[[b, ch, y, x]] = batch[[b, ch, y, x.min(w - 1)]];
                    }
                }
            }
        }
        padded = p;
        &padded
    };
    let tape = sg.graph.forward(
        params,
        BnState::Eval(state),
        vec![Value::A4(input.clone())],
        &[sg.output],
    );
    let out = tape.value(sg.output).a4();
    let out = if out.dim().3 != w {
        out.slice(ndarray::s![.., .., .., ..w]).to_owned()
    } else {
        out.clone()
    };
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite value in feature map".into()));
    }
    Ok(out)
}

const CHECKPOINT_MAGIC: &[u8; 7] = b"XSPCKPT";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    extractor: ExtractorConfig,
    head: HeadConfig,
    seed: u64,
    fold_id: String,
    fusion_mode: FusionMode,
    d_max: usize,
    stats: NormStats,
    params: Vec<f32>,
    state: Vec<f32>,
}

/// Trained model plus everything needed to run it on new data.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub stats: NormStats,
    pub fold_id: String,
    pub fusion_mode: FusionMode,
    pub d_max: usize,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = CheckpointFile {
        extractor: ckpt.model.extractor_cfg.clone(),
        head: ckpt.model.head_cfg.clone(),
        seed: ckpt.model.seed,
        fold_id: ckpt.fold_id.clone(),
        fusion_mode: ckpt.fusion_mode,
        d_max: ckpt.d_max,
        stats: ckpt.stats.clone(),
        params: ckpt.model.params.values().to_vec(),
        state: ckpt.model.state.values().to_vec(),
    };
    let mut bytes = Vec::with_capacity(file.params.len() * 4 + 1024);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.push(CHECKPOINT_VERSION);
    bincode::serialize_into(&mut bytes, &file)
        .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..7] != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    if bytes[7] != CHECKPOINT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported checkpoint version {} (expected {})",
            bytes[7], CHECKPOINT_VERSION
        )));
    }
    let file: CheckpointFile = bincode::deserialize(&bytes[8..])
        .map_err(|e| Error::CheckpointFormat(format!("{}: {e}", path.display())))?;
    let mut model = Model::<f32>::new(&file.extractor, &file.head, file.seed)?;
    if model.params.len() != file.params.len() || model.state.len() != file.state.len() {
        return Err(Error::CheckpointFormat(format!(
            "parameter count mismatch: file has {}, config implies {}",
            file.params.len(),
            model.params.len()
        )));
    }
    model.params = ParamStore::from_values(file.params);
    model.state = StateStore::from_values(file.state);
    Ok(Checkpoint {
        model,
        stats: file.stats,
        fold_id: file.fold_id,
        fusion_mode: file.fusion_mode,
        d_max: file.d_max,
    })
}
