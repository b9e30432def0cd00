//! Feature fusion (correlation and concatenation), the fully connected
//! classification heads, and the training losses.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, Graph, Init, Layout, NodeId, Op, Scalar};

use super::FeatureMap;

/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

/// Which fusion paths participate in training and estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Both,
    CorrelationOnly,
    ConcatenationOnly,
}

impl FusionMode {
    pub fn uses_correlation(self) -> bool {
        matches!(self, FusionMode::Both | FusionMode::CorrelationOnly)
    }
    pub fn uses_concatenation(self) -> bool {
        matches!(self, FusionMode::Both | FusionMode::ConcatenationOnly)
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(FusionMode::Both),
            "correlation_only" => Ok(FusionMode::CorrelationOnly),
            "concatenation_only" => Ok(FusionMode::ConcatenationOnly),
            other => Err(Error::Usage(format!(
                "unknown fusion mode '{other}' (expected both|correlation_only|concatenation_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: vec![512, 128],
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("head hidden sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Two-class probability vector: index 0 = different, index 1 = same.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput(pub [f64; 2]);

impl HeadOutput {
    pub fn same_probability(&self) -> f64 {
        self.0[1]
    }
}

/// Normalized exponential of a two-class logit pair.
pub fn softmax2(logits: [f64; 2]) -> HeadOutput {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    HeadOutput([e0 / (e0 + e1), e1 / (e0 + e1)])
}

/// Element-wise product of two equally shaped feature maps.
pub fn correlate(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.0.dim() != b.0.dim() {
        return Err(Error::shape(
            "correlate",
            format!("{:?} vs {:?}", a.0.dim(), b.0.dim()),
        ));
    }
    Ok(FeatureMap(&a.0 * &b.0))
}

/// Stack along the row axis: rows [0, P) come from `a`, rows [P, 2P) from `b`.
pub fn concatenate(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.0.dim() != b.0.dim() {
        return Err(Error::shape(
            "concatenate",
            format!("{:?} vs {:?}", a.0.dim(), b.0.dim()),
        ));
    }
    let (c, h, w) = a.0.dim();
    let mut out = Array3::<f32>::zeros((c, 2 * h, w));
    out.slice_mut(ndarray::s![.., ..h, ..]).assign(&a.0);
    out.slice_mut(ndarray::s![.., h.., ..]).assign(&b.0);
    Ok(FeatureMap(out))
}

/// Mean negative log-likelihood of the true class over a batch.
pub fn head_loss(outputs: &[HeadOutput], labels: &[u8]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Config("head_loss: empty batch".into()));
    }
    if outputs.len() != labels.len() {
        return Err(Error::shape(
            "head_loss",
            format!("{} outputs vs {} labels", outputs.len(), labels.len()),
        ));
    }
    let mut acc = 0.0;
    for (out, &label) in outputs.iter().zip(labels) {
        let p = out.0[label as usize].max(PROB_EPS);
        acc -= p.ln();
    }
    Ok(acc / outputs.len() as f64)
}

/// Sum of the two head losses.
pub fn total_loss(loss_corr: f64, loss_concat: f64) -> f64 {
    loss_corr + loss_concat
}

/// Cross-entropy value and logit gradient for a batch of 2-class logits.
/// The value equals `head_loss` applied to the softmaxed logits; the
/// gradient is (p - onehot)/N.
pub fn ce_loss_and_grad<T: Scalar>(logits: &Array2<T>, labels: &[u8]) -> (f64, Array2<T>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len(), "batch sizes must match");
    assert!(n > 0, "empty batch");
    let mut grad = Array2::<T>::zeros(logits.raw_dim());
    let mut loss = 0.0f64;
    for i in 0..n {
        let pair = [logits[[i, 0]].to_f64(), logits[[i, 1]].to_f64()];
        let probs = softmax2(pair);
        let label = labels[i] as usize;
        loss -= probs.0[label].max(PROB_EPS).ln();
        for k in 0..2 {
            let indicator = if k == label { 1.0 } else { 0.0 };
            grad[[i, k]] = T::from_f64((probs.0[k] - indicator) / n as f64);
        }
    }
    (loss / n as f64, grad)
}

/// Fusion + classification graph: two feature-map inputs, one logit pair
/// per head. The heads share no weights.
#[derive(Debug, Clone)]
pub struct FusionGraph {
    pub graph: Graph,
    pub input_rgb: NodeId,
    pub input_lwir: NodeId,
    pub logits_corr: NodeId,
    pub logits_concat: NodeId,
}

fn mlp(
    g: &mut Graph,
    params: &mut Layout,
    x: NodeId,
    in_features: usize,
    cfg: &HeadConfig,
) -> NodeId {
    let mut node = x;
    let mut width = in_features;
    for &h in &cfg.hidden {
        let dense = Dense {
            weight: params.alloc(h * width, Init::HeUniform { fan_in: width }),
            bias: params.alloc(h, Init::Zero),
            in_features: width,
            out_features: h,
        };
        node = g.push(Op::Dense(dense), &[node]);
        node = g.push(Op::Relu, &[node]);
        width = h;
    }
    let last = Dense {
        weight: params.alloc(2 * width, Init::HeUniform { fan_in: width }),
        bias: params.alloc(2, Init::Zero),
        in_features: width,
        out_features: 2,
    };
    g.push(Op::Dense(last), &[node])
}

/// Build the fusion/classification graph for P x P x C feature maps.
pub fn build_fusion(
    patch_size: usize,
    feature_channels: usize,
    cfg: &HeadConfig,
    params: &mut Layout,
) -> Result<FusionGraph> {
    cfg.validate()?;
    let mut g = Graph::default();
    let input_rgb = g.input();
    let input_lwir = g.input();

    let corr = g.push(Op::Mul, &[input_rgb, input_lwir]);
    let corr_flat = g.push(Op::Flatten, &[corr]);
    let corr_features = feature_channels * patch_size * patch_size;
    let logits_corr = mlp(&mut g, params, corr_flat, corr_features, cfg);

    let concat = g.push(Op::ConcatRows, &[input_rgb, input_lwir]);
    let concat_flat = g.push(Op::Flatten, &[concat]);
    let logits_concat = mlp(&mut g, params, concat_flat, 2 * corr_features, cfg);

    Ok(FusionGraph {
        graph: g,
        input_rgb,
        input_lwir,
        logits_corr,
        logits_concat,
    })
}
