use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

use super::config::LossKind;
use super::layers::{Ctx, Linear};

/// Clamp margin for `arccos` so its derivative stays finite.
pub const ACOS_EPS: f64 = 1e-7;
const NORM_EPS: f64 = 1e-12;

/// Speaker classifier used only during training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub kind: LossKind,
    pub classes: usize,
    pub scale: f64,
    pub margin: f64,
    linear: Linear,
}

impl ClassifierHead {
    /// AAM heads carry no bias.
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        classes: usize,
        kind: LossKind,
        scale: f64,
        margin: f64,
    ) -> Self {
        let linear = Linear::build(store, rng, name, dim, classes, kind == LossKind::Softmax);
        Self {
            kind,
            classes,
            scale,
            margin,
            linear,
        }
    }

    /// Logits fed to the cross entropy, `[n, classes]`.
    pub fn logits(&self, ctx: &mut Ctx, emb: Var, labels: &[usize]) -> Result<Var> {
        match self.kind {
            LossKind::Softmax => self.linear.forward(ctx, emb),
            LossKind::Aam => {
                let w = ctx.param(&format!("{}.weight", self.linear.name))?;
                aam_logits(&mut ctx.graph, emb, w, labels, self.scale, self.margin)
            }
        }
    }

    /// Logits without the margin, usable for prediction.
    pub fn scores(&self, ctx: &mut Ctx, emb: Var) -> Result<Var> {
        match self.kind {
            LossKind::Softmax => self.linear.forward(ctx, emb),
            LossKind::Aam => {
                let w = ctx.param(&format!("{}.weight", self.linear.name))?;
                let cos = cosine_logits(&mut ctx.graph, emb, w)?;
                Ok(ctx.graph.scale(cos, self.scale))
            }
        }
    }

    pub fn loss(&self, ctx: &mut Ctx, emb: Var, labels: &[usize]) -> Result<Var> {
        let logits = self.logits(ctx, emb, labels)?;
        ctx.graph.cross_entropy(logits, labels)
    }
}

/// Mean cross entropy of `emb·W + b`.
pub fn cross_entropy_loss(g: &mut Graph, emb: Var, w: Var, b: Var, labels: &[usize]) -> Result<Var> {
    let z = g.matmul(emb, w)?;
    let z = g.add_bias(z, b)?;
    g.cross_entropy(z, labels)
}

/// Cosines between length-normalized rows of `emb` and columns of `w`.
fn cosine_logits(g: &mut Graph, emb: Var, w: Var) -> Result<Var> {
    let en = g.l2_normalize(emb, 1, NORM_EPS)?;
    let wn = g.l2_normalize(w, 0, NORM_EPS)?;
    g.matmul(en, wn)
}

/// `s·cos(θ_y + m)` on the true class, `s·cos θ_j` elsewhere.
pub fn aam_logits(g: &mut Graph, emb: Var, w: Var, labels: &[usize], scale: f64, margin: f64) -> Result<Var> {
    let cos = cosine_logits(g, emb, w)?;
    let shape = g.shape(cos).to_vec();
    let (n, classes) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::shape("aam_softmax", &shape, &[labels.len()]));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let theta = g.arccos_clamped(cos, ACOS_EPS);
    let m = g.constant(Tensor::full(&shape, margin));
    let shifted = g.add(theta, m)?;
    let cos_m = g.cos(shifted);
    let gap = g.sub(cos_m, cos)?;
    let mut onehot = vec![0.0; n * classes];
    for (r, &y) in labels.iter().enumerate() {
        onehot[r * classes + y] = 1.0;
    }
    let mask = g.constant(Tensor::new(&shape, onehot)?);
    let gap = g.mul(gap, mask)?;
    let logits = g.add(cos, gap)?;
    Ok(g.scale(logits, scale))
}

/// Additive angular margin softmax loss.
pub fn aam_softmax_loss(g: &mut Graph, emb: Var, w: Var, labels: &[usize], scale: f64, margin: f64) -> Result<Var> {
    if !(scale > 0.0) || !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
        return Err(Error::InvalidArgument(format!("need s > 0 and 0 ≤ m < π/2, got s={scale}, m={margin}")));
    }
    let logits = aam_logits(g, emb, w, labels, scale, margin)?;
    g.cross_entropy(logits, labels)
}
