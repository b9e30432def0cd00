//! High-resolution feature extractor stream.
//!
//! A stride-1 stem followed by three stages of residual blocks over
//! parallel branches at full, half and quarter resolution. At each stage
//! transition an exchange unit fuses all branches (stride-2 3x3 chains
//! downward, 1x1 conv + nearest-neighbor resize upward, summed) and a new
//! branch opens at half the lowest resolution. The variant selects which
//! maps feed the final 1x1 projection to `out_channels`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Graph, Init, Layout, NodeId, Op};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Concatenate all last-stage branch maps, resized to full resolution.
    Scales,
    /// Concatenate the full-resolution maps of the last two stages.
    Stages,
    /// Single full-resolution output of stage 1 / 2 / 3.
    X1,
    X2,
    X3,
}

impl Variant {
    pub fn stages_built(self) -> usize {
        match self {
            Variant::X1 => 1,
            Variant::X2 => 2,
            Variant::Scales | Variant::Stages | Variant::X3 => 3,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scales" => Ok(Variant::Scales),
            "stages" => Ok(Variant::Stages),
            "x1" => Ok(Variant::X1),
            "x2" => Ok(Variant::X2),
            "x3" => Ok(Variant::X3),
            other => Err(Error::Usage(format!(
                "unknown variant '{other}' (expected scales|stages|x1|x2|x3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub input_channels: usize,
    pub patch_size: usize,
    pub base_channels: usize,
    /// Branch widths per stage, e.g. [[32], [32, 64], [32, 64, 128]].
    pub stage_channels: Vec<Vec<usize>>,
    pub blocks_per_branch: usize,
    pub out_channels: usize,
    pub variant: Variant,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            input_channels: 3,
            patch_size: 36,
            base_channels: 32,
            stage_channels: vec![vec![32], vec![32, 64], vec![32, 64, 128]],
            blocks_per_branch: 2,
            out_channels: 64,
            variant: Variant::Scales,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "patch_size {} must be a positive multiple of 4",
                self.patch_size
            )));
        }
        if self.stage_channels.len() != 3 {
            return Err(Error::Config(
                "stage_channels must list exactly three stages".into(),
            ));
        }
        for (s, widths) in self.stage_channels.iter().enumerate() {
            if widths.len() != s + 1 {
                return Err(Error::Config(format!(
                    "stage {} must have {} branch widths, has {}",
                    s + 1,
                    s + 1,
                    widths.len()
                )));
            }
            if widths.contains(&0) {
                return Err(Error::Config("zero branch width".into()));
            }
            if s > 0 && self.stage_channels[s - 1][..] != widths[..s] {
                return Err(Error::Config(
                    "continuing branches must keep their width across stages".into(),
                ));
            }
        }
        if self.base_channels != self.stage_channels[0][0] {
            return Err(Error::Config(
                "base_channels must equal the first stage branch width".into(),
            ));
        }
        if self.blocks_per_branch == 0 {
            return Err(Error::Config("blocks_per_branch must be at least 1".into()));
        }
        if self.out_channels == 0 || self.input_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn with_input_channels(&self, input_channels: usize) -> ExtractorConfig {
        ExtractorConfig {
            input_channels,
            ..self.clone()
        }
    }
}

/// One built stream: graph plus its input/output node handles.
#[derive(Debug, Clone)]
pub struct StreamGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub output: NodeId,
    pub in_channels: usize,
}

struct Builder<'a> {
    g: Graph,
    params: &'a mut Layout,
    states: &'a mut Layout,
}

impl Builder<'_> {
    fn conv(
        &mut self,
        x: NodeId,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> NodeId {
        let weight = self.params.alloc(
            out_c * in_c * k * k,
            Init::HeUniform {
                fan_in: in_c * k * k,
            },
        );
        let bias = bias.then(|| self.params.alloc(out_c, Init::Zero));
        let conv = Conv2d {
            weight,
            bias,
            in_channels: in_c,
            out_channels: out_c,
            kernel: k,
            stride,
            padding: k / 2,
        };
        self.g.push(Op::Conv(conv), &[x])
    }

    fn bn(&mut self, x: NodeId, c: usize) -> NodeId {
        // running mean starts at zero, running variance at one; the two
        // consecutive allocations form one contiguous state slot
        let mean = self.states.alloc(c, Init::Zero);
        let _var = self.states.alloc(c, Init::One);
        let bn = BatchNorm {
            gamma: self.params.alloc(c, Init::One),
            beta: self.params.alloc(c, Init::Zero),
            state: crate::nn::Slot {
                offset: mean.offset,
                len: 2 * c,
            },
            channels: c,
            eps: 1e-5,
            momentum: 0.1,
        };
        self.g.push(Op::Norm(bn), &[x])
    }

    fn conv_bn(&mut self, x: NodeId, in_c: usize, out_c: usize, k: usize, stride: usize) -> NodeId {
        let c = self.conv(x, in_c, out_c, k, stride, false);
        self.bn(c, out_c)
    }

    fn conv_bn_relu(
        &mut self,
        x: NodeId,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
    ) -> NodeId {
        let b = self.conv_bn(x, in_c, out_c, k, stride);
        self.g.push(Op::Relu, &[b])
    }

    /// conv-norm-relu-conv-norm with identity skip, relu after the sum.
    fn basic_block(&mut self, x: NodeId, c: usize) -> NodeId {
        let a = self.conv_bn_relu(x, c, c, 3, 1);
        let b = self.conv_bn(a, c, c, 3, 1);
        let sum = self.g.push(Op::Add, &[x, b]);
        self.g.push(Op::Relu, &[sum])
    }

    /// Stride-2 conv chain dropping `hops` resolution levels.
    fn down_path(&mut self, x: NodeId, from_w: usize, to_w: usize, hops: usize) -> NodeId {
        let mut node = x;
        let mut w = from_w;
        for hop in 0..hops {
            let target = if hop + 1 == hops { to_w } else { from_w };
            node = self.conv_bn(node, w, target, 3, 2);
            if hop + 1 != hops {
                node = self.g.push(Op::Relu, &[node]);
            }
            w = target;
        }
        node
    }

    /// 1x1 conv to the target width, then nearest-neighbor resize up.
    fn up_path(&mut self, x: NodeId, from_w: usize, to_w: usize, levels: usize) -> NodeId {
        let projected = self.conv_bn(x, from_w, to_w, 1, 1);
        self.g.push(
            Op::Upsample {
                factor: 1 << levels,
            },
            &[projected],
        )
    }

    /// Cross-resolution fusion: every output branch is the relu'd sum of
    /// all input branches brought to its resolution and width.
    fn exchange(&mut self, branches: &[NodeId], widths: &[usize]) -> Vec<NodeId> {
        if branches.len() == 1 {
            return branches.to_vec();
        }
        let mut fused = Vec::with_capacity(branches.len());
        for (b, &wb) in widths.iter().enumerate() {
            let mut acc: Option<NodeId> = None;
            for (a, &wa) in widths.iter().enumerate() {
                let contribution = match a.cmp(&b) {
                    std::cmp::Ordering::Equal => branches[a],
                    std::cmp::Ordering::Less => self.down_path(branches[a], wa, wb, b - a),
                    std::cmp::Ordering::Greater => self.up_path(branches[a], wa, wb, a - b),
                };
                acc = Some(match acc {
                    None => contribution,
                    Some(prev) => self.g.push(Op::Add, &[prev, contribution]),
                });
            }
            fused.push(self.g.push(Op::Relu, &[acc.unwrap()]));
        }
        fused
    }
}

/// Build one extractor stream into the shared layouts.
pub fn build_stream(
    cfg: &ExtractorConfig,
    params: &mut Layout,
    states: &mut Layout,
) -> Result<StreamGraph> {
    cfg.validate()?;
    let mut b = Builder {
        g: Graph::default(),
        params,
        states,
    };
    let input = b.g.input();

    // stride-1 stem: two 3x3 convolutions preserving resolution
    let stem1 = b.conv_bn_relu(input, cfg.input_channels, cfg.base_channels, 3, 1);
    let stem2 = b.conv_bn_relu(stem1, cfg.base_channels, cfg.base_channels, 3, 1);

    let n_stages = cfg.variant.stages_built();
    let mut branches = vec![stem2];
    let mut widths = vec![cfg.stage_channels[0][0]];
    // full-resolution tap recorded at the end of each stage
    let mut taps: Vec<NodeId> = Vec::new();

    for stage in 0..n_stages {
        for (bi, node) in branches.iter_mut().enumerate() {
            for _ in 0..cfg.blocks_per_branch {
                *node = b.basic_block(*node, widths[bi]);
            }
        }
        if stage + 1 < n_stages {
            branches = b.exchange(&branches, &widths);
            taps.push(branches[0]);
            let new_width = cfg.stage_channels[stage + 1][stage + 1];
            let lowest = *branches.last().unwrap();
            let new_branch = b.conv_bn_relu(lowest, *widths.last().unwrap(), new_width, 3, 2);
            branches.push(new_branch);
            widths.push(new_width);
        } else {
            taps.push(branches[0]);
        }
    }

    let output = match cfg.variant {
        Variant::Scales => {
            let mut resized = vec![branches[0]];
            for (level, &node) in branches.iter().enumerate().skip(1) {
                resized.push(b.g.push(Op::Upsample { factor: 1 << level }, &[node]));
            }
            let cat = b.g.push(Op::ConcatChannels, &resized);
            let total: usize = widths.iter().sum();
            b.conv(cat, total, cfg.out_channels, 1, 1, true)
        }
        Variant::Stages => {
            let cat = b.g.push(Op::ConcatChannels, &[taps[1], taps[2]]);
            let total = cfg.stage_channels[1][0] + cfg.stage_channels[2][0];
            b.conv(cat, total, cfg.out_channels, 1, 1, true)
        }
        Variant::X1 | Variant::X2 | Variant::X3 => {
            let tap = *taps.last().unwrap();
            b.conv(tap, cfg.base_channels, cfg.out_channels, 1, 1, true)
        }
    };

    Ok(StreamGraph {
        graph: b.g,
        input,
        output,
        in_channels: cfg.input_channels,
    })
}
