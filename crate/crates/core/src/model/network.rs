use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::Real;
use crate::tensor::{ParamStore, Tensor, Var};

use super::branch::{BranchKind, BranchModel};
use super::coattention::CoAttention;
use super::config::{FusionMode, ModelConfig};
use super::fusion::FusionHead;
use super::layers::{Ctx, Mode};
use super::loss::ClassifierHead;
use super::sap::SapLayer;

/// Dual-branch embedder plus its training classifier.
///
/// Parameter names are shared across fusion modes: a single-branch model's
/// names are a subset of the co-attention model's, so weights can be copied
/// between them with [`ParamStore::load_from`].
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    fbank: Option<(BranchModel, SapLayer)>,
    modgd: Option<(BranchModel, SapLayer)>,
    coattention: Option<CoAttention>,
    fusion: Option<FusionHead>,
    classifier: ClassifierHead,
}

/// Inputs of one forward pass, each `[n, 1, F, T]`.
#[derive(Debug, Clone, Copy)]
pub struct BranchInputs {
    pub fbank: Option<Var>,
    pub modgd: Option<Var>,
}

impl FusionModel {
    /// Builds and initializes every parameter from `config.seed`.
    pub fn new(config: &ModelConfig, classes: usize) -> Result<Self> {
        config.validate()?;
        if classes == 0 {
            return Err(Error::Config("need at least one speaker class".into()));
        }
        let mut store = ParamStore::new();
        let c = config.branch.out_channels();
        let mode = config.fusion;
        // Each component draws from its own stream so that enabling one
        // part never shifts the initialization of another.
        let sub = |k: u64| ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9).wrapping_add(k));
        let fbank = match mode.uses_fbank() {
            true => {
                let b = BranchModel::build(&mut store, &mut sub(1), &config.branch, BranchKind::Fbank)?;
                Some((b, SapLayer::build(&mut store, &mut sub(2), "sap_f", c)))
            }
            false => None,
        };
        let modgd = match mode.uses_modgd() {
            true => {
                let b = BranchModel::build(&mut store, &mut sub(3), &config.branch, BranchKind::Modgd)?;
                Some((b, SapLayer::build(&mut store, &mut sub(4), "sap_g", c)))
            }
            false => None,
        };
        let coattention = (mode == FusionMode::CoAttention)
            .then(|| CoAttention::build(&mut store, &mut sub(5), "coattn", c, config.residual));
        let fusion = (mode.uses_fbank() && mode.uses_modgd()).then(|| FusionHead::build(&mut store, &mut sub(6), "fusion", c));
        let classifier = ClassifierHead::build(
            &mut store,
            &mut sub(7),
            "cls",
            c,
            classes,
            config.loss,
            config.aam_scale,
            config.aam_margin,
        );
        Ok(Self {
            config: config.clone(),
            store,
            fbank,
            modgd,
            coattention,
            fusion,
            classifier,
        })
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim()
    }

    pub fn classifier(&self) -> &ClassifierHead {
        &self.classifier
    }

    /// Trainable parameters of the embedder, excluding the classifier.
    pub fn embedder_param_count(&self) -> usize {
        self.store.trainable_count("") - self.store.trainable_count("cls.")
    }

    /// Trainable parameters of one branch including its pooling layer.
    pub fn branch_param_count(&self, kind: BranchKind) -> usize {
        let sap = match kind {
            BranchKind::Fbank => "sap_f.",
            BranchKind::Modgd => "sap_g.",
        };
        self.store.trainable_count(&format!("{}.", kind.prefix())) + self.store.trainable_count(sap)
    }

    pub fn new_ctx(&self, mode: Mode) -> Ctx<'_> {
        Ctx::new(&self.store, mode, self.config.bn_eps)
    }

    /// Embedding batch `[n, D]`.
    pub fn forward(&self, ctx: &mut Ctx, inputs: BranchInputs) -> Result<Var> {
        let take = |v: Option<Var>, kind: FeatureKind| {
            v.ok_or_else(|| Error::InvalidArgument(format!("{} mode needs {} input", self.config.fusion.name(), kind.name())))
        };
        let f_map = match &self.fbank {
            Some((branch, _)) => Some(branch.forward(ctx, take(inputs.fbank, FeatureKind::Fbank192)?)?),
            None => None,
        };
        let g_map = match &self.modgd {
            Some((branch, _)) => Some(branch.forward(ctx, take(inputs.modgd, FeatureKind::Modgd201)?)?),
            None => None,
        };
        let (f_map, g_map) = match (&self.coattention, f_map, g_map) {
            (Some(co), Some(f), Some(g)) => {
                let out = co.forward(ctx, f, g)?;
                (Some(out.fbank), Some(out.modgd))
            }
            (_, f, g) => (f, g),
        };
        let e_f = match (&self.fbank, f_map) {
            (Some((_, sap)), Some(f)) => Some(sap.forward(ctx, f)?),
            _ => None,
        };
        let e_g = match (&self.modgd, g_map) {
            (Some((_, sap)), Some(g)) => Some(sap.forward(ctx, g)?),
            _ => None,
        };
        match (&self.fusion, e_f, e_g) {
            (Some(head), Some(f), Some(g)) => head.forward(ctx, f, g),
            (None, Some(f), None) => Ok(f),
            (None, None, Some(g)) => Ok(g),
            _ => unreachable!("branch set always matches the fusion mode"),
        }
    }

    /// Single-branch ablation: the named branch and its pooling layer alone,
    /// bypassing co-attention and the fusion head.
    pub fn forward_branch_only(&self, ctx: &mut Ctx, kind: BranchKind, x: Var) -> Result<Var> {
        let part = match kind {
            BranchKind::Fbank => &self.fbank,
            BranchKind::Modgd => &self.modgd,
        };
        let (branch, sap) = part
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} model has no {} branch", self.config.fusion.name(), kind.prefix())))?;
        let map = branch.forward(ctx, x)?;
        sap.forward(ctx, map)
    }

    /// Eval-mode embedding of one utterance through a single branch.
    pub fn extract_branch_embedding<T: Real>(&self, kind: BranchKind, features: &FeatureMatrix<T>) -> Result<Vec<f64>> {
        let mut ctx = self.new_ctx(Mode::Eval);
        let x = ctx.graph.constant(features_to_input(&[features])?);
        let e = self.forward_branch_only(&mut ctx, kind, x)?;
        Ok(ctx.graph.value(e).data().to_vec())
    }

    /// Eval-mode embedding of one full utterance.
    pub fn extract_embedding<T: Real>(
        &self,
        fbank: Option<&FeatureMatrix<T>>,
        modgd: Option<&FeatureMatrix<T>>,
    ) -> Result<Vec<f64>> {
        let mut ctx = self.new_ctx(Mode::Eval);
        let inputs = BranchInputs {
            fbank: fbank.map(|m| features_to_input(&[m])).transpose()?.map(|t| ctx.graph.constant(t)),
            modgd: modgd.map(|m| features_to_input(&[m])).transpose()?.map(|t| ctx.graph.constant(t)),
        };
        let e = self.forward(&mut ctx, inputs)?;
        Ok(ctx.graph.value(e).data().to_vec())
    }
}

/// Stacks `T × F` feature matrices of equal length into a `[n, 1, F, T]` tensor.
pub fn features_to_input<T: Real>(mats: &[&FeatureMatrix<T>]) -> Result<Tensor> {
    let first = mats.first().ok_or(Error::Empty("feature batch"))?;
    let (t, f) = (first.frames(), first.dim());
    let mut data = Vec::with_capacity(mats.len() * f * t);
    for m in mats {
        if m.frames() != t || m.dim() != f {
            return Err(Error::shape("features_to_input", &[t, f], &[m.frames(), m.dim()]));
        }
        for col in 0..f {
            data.extend((0..t).map(|row| m.values().get(row, col).to_f64_lossy()));
        }
    }
    Tensor::new(&[mats.len(), 1, f, t], data)
}
