//! Analytic cost model: multiply-accumulate counts and learnable parameter
//! counts for every candidate operation and for a whole stacked network.
//!
//! One MAC counts as one FLOP. Element-wise additions, activations and batch
//! norm are not counted. Convolutions carry no bias; the classifier does.
//!
//! Per-operation formulas, for input `C_in x H x W`, output channels `C_out`,
//! stride `s` and output area `P = ceil(H/s) * ceil(W/s)`:
//!
//! | op | MACs | params |
//! |----|------|--------|
//! | identity | 0 (stride 2 subsamples) | 0 |
//! | max/avg pool 3x3 | `9 C P` | 0 |
//! | squeeze-excite (r = max(1, C/16)) | `2 C P + 2 C r` | `2 C r` |
//! | lbc kxk | `floor(k² C_in² P / 2) + C_in C_out P` | `C_in C_out` |
//! | dil conv kxk | `k² C_in P + C_in C_out P` | `k² C_in + C_in C_out` |
//! | sep conv kxk | `2 k² C_in P + C_in² P + C_in C_out P` | `2 k² C_in + C_in² + C_in C_out` |
//! | conv 1x7 then 7x1 | `7 C_in² P + 7 C_in C_out P` | `7 C_in² + 7 C_in C_out` |
//!
//! Network skeleton: 3x3 stem conv, then three stages of `n_repeat` Normal
//! blocks separated by two Reduction blocks, then global average pooling and a
//! linear classifier. Block `k` (0-based over all blocks) computes with
//! `ch_init + k * ch_inc` channels per node; its output concatenates the loose
//! nodes. Both block inputs pass through a 1x1 conv to the block width; the
//! `h[i-2]` conv uses stride 2 when that input is at twice the resolution of
//! `h[i-1]`. Inside a Reduction block only branches reading `h[i-1]`/`h[i-2]`
//! use stride 2.

use serde::{Deserialize, Serialize};

use crate::genotype::{ArchitectureGenotype, BlockGenotype, BlockKind, OpCode, SearchSpaceSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CostError {
    #[error("unknown op code {0}")]
    UnknownOp(u8),
    #[error("unsupported stride {0}")]
    BadStride(usize),
    #[error("{op} cannot change channels ({c_in} -> {c_out})")]
    ChannelMismatch { op: OpCode, c_in: usize, c_out: usize },
    #[error("invalid macro config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn area(&self) -> u64 {
        (self.height * self.width) as u64
    }

    fn strided(&self, stride: usize) -> (usize, usize) {
        (self.height.div_ceil(stride), self.width.div_ceil(stride))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: u64,
    pub params: u64,
}

impl CostReport {
    pub fn new(flops: u64, params: u64) -> Self {
        Self { flops, params }
    }

    /// FLOPs in millions, the unit of the complexity objective.
    pub fn mflops(&self) -> f64 {
        self.flops as f64 / 1e6
    }
}

impl std::ops::Add for CostReport {
    type Output = CostReport;

    fn add(self, rhs: CostReport) -> CostReport {
        CostReport::new(self.flops + rhs.flops, self.params + rhs.params)
    }
}

impl std::ops::AddAssign for CostReport {
    fn add_assign(&mut self, rhs: CostReport) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for CostReport {
    fn sum<I: Iterator<Item = CostReport>>(iter: I) -> CostReport {
        iter.fold(CostReport::default(), |a, b| a + b)
    }
}

/// Network-level skeleton around the searched blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroConfig {
    pub ch_init: usize,
    pub ch_inc: usize,
    /// Normal blocks per stage; 4, 5 or 6.
    pub n_repeat: usize,
    pub input_hw: usize,
    pub input_channels: usize,
    pub num_classes: usize,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            ch_init: 32,
            ch_inc: 6,
            n_repeat: 5,
            input_hw: 32,
            input_channels: 3,
            num_classes: 10,
        }
    }
}

impl MacroConfig {
    pub const STAGES: usize = 3;

    pub fn validate(&self) -> Result<(), CostError> {
        let positive = [
            ("ch_init", self.ch_init),
            ("n_repeat", self.n_repeat),
            ("input_hw", self.input_hw),
            ("input_channels", self.input_channels),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CostError::BadConfig(format!("{name} must be positive")));
        }
        if self.input_hw % 4 != 0 {
            return Err(CostError::BadConfig(format!(
                "input_hw {} is not divisible by 4",
                self.input_hw
            )));
        }
        Ok(())
    }

    /// Block kinds in network order.
    pub fn block_sequence(&self) -> Vec<BlockKind> {
        let mut seq = Vec::with_capacity(Self::STAGES * self.n_repeat + Self::STAGES - 1);
        for stage in 0..Self::STAGES {
            if stage > 0 {
                seq.push(BlockKind::Reduction);
            }
            seq.extend(std::iter::repeat_n(BlockKind::Normal, self.n_repeat));
        }
        seq
    }

    pub fn block_channels(&self, depth: usize) -> usize {
        self.ch_init + depth * self.ch_inc
    }
}

fn check_stride(stride: usize) -> Result<(), CostError> {
    match stride {
        1 | 2 => Ok(()),
        s => Err(CostError::BadStride(s)),
    }
}

/// Cost of one branch operation.
pub fn op_cost(op: OpCode, input: TensorShape, out_channels: usize, stride: usize) -> Result<CostReport, CostError> {
    check_stride(stride)?;
    let (h, w) = input.strided(stride);
    let p = (h * w) as u64;
    let cin = input.channels as u64;
    let cout = out_channels as u64;
    let same_channels = || {
        if cin == cout {
            Ok(())
        } else {
            Err(CostError::ChannelMismatch {
                op,
                c_in: input.channels,
                c_out: out_channels,
            })
        }
    };
    let separable = |k: u64| CostReport::new(k * k * cin * p + cin * cout * p, k * k * cin + cin * cout);
    let lbc = |k: u64| CostReport::new(k * k * cin * cin * p / 2 + cin * cout * p, cin * cout);
    let report = match op {
        OpCode::Identity => {
            same_channels()?;
            CostReport::default()
        }
        OpCode::MaxPool3x3 | OpCode::AvgPool3x3 => {
            same_channels()?;
            CostReport::new(9 * cin * p, 0)
        }
        OpCode::SqueezeExcite => {
            same_channels()?;
            let r = (cin / 16).max(1);
            CostReport::new(2 * cin * p + 2 * cin * r, 2 * cin * r)
        }
        OpCode::Lbc3x3 => lbc(3),
        OpCode::Lbc5x5 => lbc(5),
        OpCode::DilConv3x3 => separable(3),
        OpCode::DilConv5x5 => separable(5),
        OpCode::SepConv3x3 | OpCode::SepConv5x5 | OpCode::SepConv7x7 => {
            let k = match op {
                OpCode::SepConv3x3 => 3,
                OpCode::SepConv5x5 => 5,
                _ => 7,
            };
            // Two separable convs in series; the first keeps C_in channels.
            let first = CostReport::new(k * k * cin * p + cin * cin * p, k * k * cin + cin * cin);
            first + separable(k)
        }
        OpCode::Conv1x7_7x1 => CostReport::new(7 * cin * cin * p + 7 * cin * cout * p, 7 * cin * cin + 7 * cin * cout),
    };
    Ok(report)
}

fn op_from_index(index: u8) -> Result<OpCode, CostError> {
    OpCode::from_index(index).ok_or(CostError::UnknownOp(index))
}

fn conv1x1(c_in: usize, c_out: usize, out_area: u64) -> CostReport {
    let w = (c_in * c_out) as u64;
    CostReport::new(w * out_area, w)
}

/// Cost of one block instance, given the shapes of its two inputs. Returns the
/// cost and the output shape.
pub fn block_cost(
    block: &BlockGenotype,
    prev_prev: TensorShape,
    prev: TensorShape,
    channels: usize,
) -> Result<(CostReport, TensorShape), CostError> {
    let mut cost = CostReport::default();
    // Preprocessing to the block width at h[i-1]'s resolution.
    let pp_stride = if prev_prev.height > prev.height { 2 } else { 1 };
    let (ph, pw) = prev_prev.strided(pp_stride);
    cost += conv1x1(prev_prev.channels, channels, (ph * pw) as u64);
    cost += conv1x1(prev.channels, channels, prev.area());

    let reduce = block.kind == BlockKind::Reduction;
    let in_shape = TensorShape::new(channels, prev.height, prev.width);
    let out_shape = if reduce {
        let (h, w) = in_shape.strided(2);
        TensorShape::new(channels, h, w)
    } else {
        in_shape
    };
    for node in &block.nodes {
        for (input, op) in [(node.in1, node.op1), (node.in2, node.op2)] {
            let op = op_from_index(op)?;
            let from_block_input = input < 2;
            let (shape, stride) = if from_block_input && reduce {
                (in_shape, 2)
            } else if from_block_input {
                (in_shape, 1)
            } else {
                (out_shape, 1)
            };
            cost += op_cost(op, shape, channels, stride)?;
        }
    }
    let width = block.concat_width();
    Ok((cost, TensorShape::new(channels * width, out_shape.height, out_shape.width)))
}

/// FLOPs and parameters of the whole network built from `g`.
pub fn network_cost(g: &ArchitectureGenotype, m: &MacroConfig) -> Result<CostReport, CostError> {
    m.validate()?;
    let mut cost = CostReport::default();
    let hw = m.input_hw;
    let stem = TensorShape::new(m.ch_init, hw, hw);
    let stem_w = (9 * m.input_channels * m.ch_init) as u64;
    cost += CostReport::new(stem_w * stem.area(), stem_w);

    let (mut prev_prev, mut prev) = (stem, stem);
    for (depth, kind) in m.block_sequence().into_iter().enumerate() {
        let block = match kind {
            BlockKind::Normal => &g.normal,
            BlockKind::Reduction => &g.reduction,
        };
        let (c, out) = block_cost(block, prev_prev, prev, m.block_channels(depth))?;
        cost += c;
        prev_prev = prev;
        prev = out;
    }
    // Global average pool plus linear classifier with bias.
    let c = prev.channels as u64;
    let k = m.num_classes as u64;
    cost += CostReport::new(c * prev.area() + c * k, c * k + k);
    Ok(cost)
}

/// Operations sorted by ascending cost at `reference`, ties by listing order.
pub fn op_complexity_order(spec: &SearchSpaceSpec, reference: TensorShape) -> Vec<OpCode> {
    let mut ops: Vec<(u64, OpCode)> = OpCode::ALL[..spec.n_ops.min(OpCode::ALL.len())]
        .iter()
        .map(|&op| {
            let flops = op_cost(op, reference, reference.channels, 1)
                .map(|c| c.flops)
                .unwrap_or(u64::MAX);
            (flops, op)
        })
        .collect();
    ops.sort_by_key(|&(flops, op)| (flops, op.index()));
    ops.into_iter().map(|(_, op)| op).collect()
}

/// Reference shape used for the mutation ordering: `ch_init` channels at the
/// input resolution.
pub fn default_reference_shape(m: &MacroConfig) -> TensorShape {
    TensorShape::new(m.ch_init, m.input_hw, m.input_hw)
}
