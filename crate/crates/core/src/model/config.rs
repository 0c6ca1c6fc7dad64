//! Model and training hyperparameters, read from a plain `key = value`
//! text file.
//!
//! Recognized keys (all optional; defaults are the tiny preset):
//!
//! | key | meaning |
//! |---|---|
//! | `preset` | `tiny`, `toy` or `full`, applied before the other keys |
//! | `fusion` | `coattention`, `concat`, `fbank`, `modgd` |
//! | `channels` | comma list, stem width then one width per stage |
//! | `blocks` | comma list, basic blocks per stage |
//! | `stage_strides` | comma list of `HxW`, e.g. `1x1,2x2,2x2,1x1` |
//! | `residual` | co-attention adds `F'` to `F` (`true`/`false`) |
//! | `loss` | `softmax` or `aam` |
//! | `aam_scale`, `aam_margin` | AAM-Softmax scale and margin |
//! | `lr`, `momentum`, `weight_decay` | SGD settings |
//! | `cosine_decay` | anneal the learning rate to zero along a half cosine |
//! | `balanced` | every batch cycles through the speakers evenly |
//! | `fixed_schedule` | draw crop offsets and one pass of batches once, then replay that pass |
//! | `steps`, `batch_size`, `crop_frames` | training schedule; `crop_frames = 0` uses whole segments |
//! | `bn_momentum` | running-statistics momentum |
//! | `seed` | initialization and batching seed |
//! | `alpha`, `gamma`, `lifter_len` | MODGD front end |

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::ModgdParams;

/// Which inputs feed the embedding and how they are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Both branches, channel co-attention, then embedding concatenation.
    CoAttention,
    /// Both branches, embedding concatenation only.
    Concat,
    /// FBank branch alone.
    Fbank,
    /// MODGD branch alone.
    Modgd,
}

impl FusionMode {
    pub fn uses_fbank(self) -> bool {
        !matches!(self, FusionMode::Modgd)
    }

    pub fn uses_modgd(self) -> bool {
        !matches!(self, FusionMode::Fbank)
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::CoAttention => "coattention",
            FusionMode::Concat => "concat",
            FusionMode::Fbank => "fbank",
            FusionMode::Modgd => "modgd",
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coattention" | "co-attention" => Ok(FusionMode::CoAttention),
            "concat" | "traditional" => Ok(FusionMode::Concat),
            "fbank" => Ok(FusionMode::Fbank),
            "modgd" => Ok(FusionMode::Modgd),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Softmax,
    Aam,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" | "ce" => Ok(LossKind::Softmax),
            "aam" | "aam-softmax" => Ok(LossKind::Aam),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Thin ResNet34 branch layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchConfig {
    /// Stem width followed by one width per stage.
    pub channels: Vec<usize>,
    pub blocks: Vec<usize>,
    pub stage_strides: Vec<(usize, usize)>,
    pub stem_kernel: (usize, usize),
    pub stem_stride: (usize, usize),
    pub stem_pad: (usize, usize),
    /// Extra 7×1 stem conv of the MODGD branch.
    pub modgd_stem_kernel: (usize, usize),
    pub modgd_stem_stride: (usize, usize),
    pub modgd_stem_pad: (usize, usize),
}

impl BranchConfig {
    pub fn full() -> Self {
        Self {
            channels: vec![16, 16, 32, 64, 128],
            blocks: vec![3, 4, 6, 3],
            ..Self::tiny()
        }
    }

    pub fn tiny() -> Self {
        Self {
            channels: vec![4, 4, 8, 16, 32],
            blocks: vec![1, 1, 1, 1],
            stage_strides: vec![(1, 1), (2, 2), (2, 2), (1, 1)],
            stem_kernel: (7, 7),
            stem_stride: (2, 1),
            stem_pad: (3, 3),
            modgd_stem_kernel: (7, 1),
            modgd_stem_stride: (3, 1),
            modgd_stem_pad: (3, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.blocks.len();
        if stages == 0 || self.channels.len() != stages + 1 || self.stage_strides.len() != stages {
            return Err(Error::Config(format!(
                "need {} channel widths and {} strides for {} stages, got {} and {}",
                stages + 1,
                stages,
                stages,
                self.channels.len(),
                self.stage_strides.len()
            )));
        }
        if self.channels.contains(&0) || self.blocks.contains(&0) {
            return Err(Error::Config("channel widths and block counts must be positive".into()));
        }
        if self.stage_strides.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::Config("strides must be positive".into()));
        }
        Ok(())
    }

    /// Output width of the last stage, which is also the embedding size.
    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub branch: BranchConfig,
    pub fusion: FusionMode,
    pub residual: bool,
    pub loss: LossKind,
    pub aam_scale: f64,
    pub aam_margin: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub cosine_decay: bool,
    pub balanced: bool,
    pub fixed_schedule: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
    pub modgd: ModgdParams,
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            branch: BranchConfig::tiny(),
            fusion: FusionMode::CoAttention,
            residual: true,
            loss: LossKind::Softmax,
            aam_scale: 30.0,
            aam_margin: 0.2,
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 0.0,
            cosine_decay: false,
            balanced: false,
            fixed_schedule: false,
            steps: 300,
            batch_size: 8,
            crop_frames: 0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
            modgd: ModgdParams::default(),
        }
    }

    pub fn full() -> Self {
        Self {
            branch: BranchConfig::full(),
            ..Self::tiny()
        }
    }

    /// Tiny network with a schedule that fits the synthetic eight-speaker
    /// task in a few minutes of one CPU core.
    pub fn toy() -> Self {
        Self {
            lr: 0.01,
            cosine_decay: true,
            balanced: true,
            fixed_schedule: true,
            batch_size: 16,
            crop_frames: 48,
            steps: 300,
            ..Self::tiny()
        }
    }

    /// Learning rate at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if !self.cosine_decay || self.steps == 0 {
            return self.lr;
        }
        let progress = step as f64 / self.steps as f64;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// Embedding dimension `D`.
    pub fn embed_dim(&self) -> usize {
        self.branch.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.branch.validate()?;
        self.modgd.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.aam_scale > 0.0) {
            return Err(Error::Config("aam_scale must be positive".into()));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.aam_margin) {
            return Err(Error::Config("aam_margin must be in [0, π/2)".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr ≥ 0, momentum in [0, 1), weight_decay ≥ 0 required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_momentum must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs: Vec<(usize, &str, &str)> = text
            .lines()
            .enumerate()
            .filter_map(|(i, raw)| {
                let line = raw.split('#').next().unwrap().trim();
                (!line.is_empty()).then_some((i + 1, line))
            })
            .map(|(i, line)| {
                line.split_once('=')
                    .map(|(k, v)| (i, k.trim(), v.trim()))
                    .ok_or_else(|| Error::Config(format!("line {i}: expected `key = value`")))
            })
            .collect::<Result<_>>()?;

        let mut cfg = match pairs.iter().find(|(_, k, _)| *k == "preset") {
            Some((_, _, "full")) => Self::full(),
            Some((_, _, "tiny")) | None => Self::tiny(),
            Some((_, _, "toy")) => Self::toy(),
            Some((i, _, other)) => return Err(Error::Config(format!("line {i}: unknown preset {other:?}"))),
        };
        for (line, key, value) in pairs {
            let bad = |what: &str| Error::Config(format!("line {line}: bad {what} value {value:?}"));
            let num = |what: &str| value.parse::<f64>().map_err(|_| bad(what));
            let int = |what: &str| value.parse::<usize>().map_err(|_| bad(what));
            let list = |what: &str| -> Result<Vec<usize>> {
                value.split(',').map(|v| v.trim().parse().map_err(|_| bad(what))).collect()
            };
            match key {
                "preset" => {}
                "fusion" => cfg.fusion = value.parse()?,
                "channels" => cfg.branch.channels = list(key)?,
                "blocks" => cfg.branch.blocks = list(key)?,
                "stage_strides" => {
                    cfg.branch.stage_strides = value
                        .split(',')
                        .map(|s| {
                            let (h, w) = s.trim().split_once('x').ok_or_else(|| bad(key))?;
                            Ok((h.parse().map_err(|_| bad(key))?, w.parse().map_err(|_| bad(key))?))
                        })
                        .collect::<Result<_>>()?
                }
                "residual" => cfg.residual = value.parse().map_err(|_| bad(key))?,
                "loss" => cfg.loss = value.parse()?,
                "aam_scale" => cfg.aam_scale = num(key)?,
                "aam_margin" => cfg.aam_margin = num(key)?,
                "lr" => cfg.lr = num(key)?,
                "momentum" => cfg.momentum = num(key)?,
                "weight_decay" => cfg.weight_decay = num(key)?,
                "cosine_decay" => cfg.cosine_decay = value.parse().map_err(|_| bad(key))?,
                "balanced" => cfg.balanced = value.parse().map_err(|_| bad(key))?,
                "fixed_schedule" => cfg.fixed_schedule = value.parse().map_err(|_| bad(key))?,
                "steps" => cfg.steps = int(key)?,
                "batch_size" => cfg.batch_size = int(key)?,
                "crop_frames" => cfg.crop_frames = int(key)?,
                "bn_momentum" => cfg.bn_momentum = num(key)?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
                "alpha" => cfg.modgd.alpha = num(key)?,
                "gamma" => cfg.modgd.gamma = num(key)?,
                "lifter_len" => cfg.modgd.lifter_len = int(key)?,
                other => return Err(Error::Config(format!("line {line}: unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let strides = self
            .branch
            .stage_strides
            .iter()
            .map(|(h, w)| format!("{h}x{w}"))
            .collect::<Vec<_>>()
            .join(",");
        let mut s = String::new();
        let _ = writeln!(s, "fusion = {}", self.fusion.name());
        let _ = writeln!(s, "channels = {}", join(&self.branch.channels));
        let _ = writeln!(s, "blocks = {}", join(&self.branch.blocks));
        let _ = writeln!(s, "stage_strides = {strides}");
        let _ = writeln!(s, "residual = {}", self.residual);
        let _ = writeln!(s, "loss = {}", if self.loss == LossKind::Aam { "aam" } else { "softmax" });
        let _ = writeln!(s, "aam_scale = {}", self.aam_scale);
        let _ = writeln!(s, "aam_margin = {}", self.aam_margin);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "cosine_decay = {}", self.cosine_decay);
        let _ = writeln!(s, "balanced = {}", self.balanced);
        let _ = writeln!(s, "fixed_schedule = {}", self.fixed_schedule);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "crop_frames = {}", self.crop_frames);
        let _ = writeln!(s, "bn_momentum = {}", self.bn_momentum);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "alpha = {}", self.modgd.alpha);
        let _ = writeln!(s, "gamma = {}", self.modgd.gamma);
        let _ = writeln!(s, "lifter_len = {}", self.modgd.lifter_len);
        s
    }
}
