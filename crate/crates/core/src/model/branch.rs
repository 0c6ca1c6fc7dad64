use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FBANK_DIM, MODGD_DIM};
use crate::tensor::{ParamStore, Var};

use super::config::BranchConfig;
use super::layers::{BatchNorm2d, Conv2d, Ctx};

/// Input domain of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Fbank,
    Modgd,
}

impl BranchKind {
    /// Frequency rows the branch expects.
    pub fn input_dim(self) -> usize {
        match self {
            BranchKind::Fbank => FBANK_DIM,
            BranchKind::Modgd => MODGD_DIM,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            BranchKind::Fbank => "fbank",
            BranchKind::Modgd => "modgd",
        }
    }
}

/// Conv → BN → ReLU.
#[derive(Debug, Clone, PartialEq)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        Self {
            conv: Conv2d::build(store, rng, format!("{name}.conv"), c_in, c_out, kernel, stride, pad, false),
            bn: BatchNorm2d::build(store, format!("{name}.bn"), c_out),
        }
    }

    fn forward_linear(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        self.bn.forward(ctx, y)
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.forward_linear(ctx, x)?;
        Ok(ctx.graph.relu(y))
    }
}

/// Two 3×3 convs with an identity or 1×1-projection shortcut.
#[derive(Debug, Clone, PartialEq)]
struct BasicBlock {
    first: ConvBn,
    second: ConvBn,
    shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn build(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c_in: usize, c_out: usize, stride: (usize, usize)) -> Self {
        let shortcut = (stride != (1, 1) || c_in != c_out)
            .then(|| ConvBn::build(store, rng, &format!("{name}.shortcut"), c_in, c_out, (1, 1), stride, (0, 0)));
        Self {
            first: ConvBn::build(store, rng, &format!("{name}.conv1"), c_in, c_out, (3, 3), stride, (1, 1)),
            second: ConvBn::build(store, rng, &format!("{name}.conv2"), c_out, c_out, (3, 3), (1, 1), (1, 1)),
            shortcut,
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.first.forward(ctx, x)?;
        let h = self.second.forward_linear(ctx, h)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward_linear(ctx, x)?,
            None => x,
        };
        let sum = ctx.graph.add(h, skip)?;
        Ok(ctx.graph.relu(sum))
    }
}

/// Thin ResNet34-style trunk for one input domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchModel {
    pub kind: BranchKind,
    pub config: BranchConfig,
    stem: ConvBn,
    extra_stem: Option<ConvBn>,
    stages: Vec<Vec<BasicBlock>>,
}

impl BranchModel {
    /// Registers the branch parameters under `<kind>.` in `store`.
    pub fn build(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &BranchConfig, kind: BranchKind) -> Result<Self> {
        cfg.validate()?;
        let p = kind.prefix();
        let c0 = cfg.channels[0];
        let stem = ConvBn::build(store, rng, &format!("{p}.stem"), 1, c0, cfg.stem_kernel, cfg.stem_stride, cfg.stem_pad);
        let extra_stem = (kind == BranchKind::Modgd).then(|| {
            ConvBn::build(
                store,
                rng,
                &format!("{p}.stem2"),
                c0,
                c0,
                cfg.modgd_stem_kernel,
                cfg.modgd_stem_stride,
                cfg.modgd_stem_pad,
            )
        });
        let stages = (0..cfg.blocks.len())
            .map(|s| {
                (0..cfg.blocks[s])
                    .map(|b| {
                        let c_in = if b == 0 { cfg.channels[s] } else { cfg.channels[s + 1] };
                        let stride = if b == 0 { cfg.stage_strides[s] } else { (1, 1) };
                        BasicBlock::build(store, rng, &format!("{p}.layer{}.{b}", s + 1), c_in, cfg.channels[s + 1], stride)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            kind,
            config: cfg.clone(),
            stem,
            extra_stem,
            stages,
        })
    }

    /// `[n, 1, F, T]` features to a `[n, C, H, W]` feature map.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] != self.kind.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "{} branch expects [n, 1, {}, T] input, got {:?}",
                self.kind.prefix(),
                self.kind.input_dim(),
                s
            )));
        }
        let mut h = self.stem.forward(ctx, x)?;
        if let Some(extra) = &self.extra_stem {
            h = extra.forward(ctx, h)?;
        }
        for stage in &self.stages {
            for block in stage {
                h = block.forward(ctx, h)?;
            }
        }
        Ok(h)
    }

    /// `(H, W)` after the stem(s) and after each stage, for an `F × T` input.
    pub fn trace_sizes(&self, freq: usize, time: usize) -> Vec<(usize, usize)> {
        let mut sizes = vec![(freq, time)];
        let mut cur = self.stem.conv.out_size(freq, time);
        sizes.push(cur);
        if let Some(extra) = &self.extra_stem {
            cur = extra.conv.out_size(cur.0, cur.1);
            sizes.push(cur);
        }
        for stage in &self.stages {
            for block in stage {
                cur = block.first.conv.out_size(cur.0, cur.1);
            }
            sizes.push(cur);
        }
        sizes
    }
}
