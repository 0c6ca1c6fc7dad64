use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Var};

use super::layers::{kaiming_uniform, Ctx, Linear};

/// Self-attentive pooling over time.
///
/// The map is averaged over frequency into frames `h_t`; each frame is
/// scored by `vᵀ·tanh(W·h_t + b)` and the softmax of those scores weights
/// the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SapLayer {
    pub name: String,
    pub channels: usize,
    proj: Linear,
}

impl SapLayer {
    pub fn build(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize) -> Self {
        let proj = Linear::build(store, rng, format!("{name}.proj"), channels, channels, true);
        store.insert(format!("{name}.context"), kaiming_uniform(rng, &[channels, 1], channels), true);
        Self {
            name: name.to_string(),
            channels,
            proj,
        }
    }

    /// `[n, C, H, W]` to `[n, C]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x).to_vec();
        let (n, c, w) = match s.as_slice() {
            &[n, c, _, w] if c == self.channels && w > 0 => (n, c, w),
            _ => return Err(Error::shape("self_attentive_pool", &s, &[self.channels])),
        };
        let frames = ctx.graph.mean_axis(x, 2)?;
        let frames = ctx.graph.transpose(frames)?;
        let flat = ctx.graph.reshape(frames, &[n * w, c])?;
        let hidden = self.proj.forward(ctx, flat)?;
        let hidden = ctx.graph.tanh(hidden);
        let v = ctx.param(&format!("{}.context", self.name))?;
        let scores = ctx.graph.matmul(hidden, v)?;
        let scores = ctx.graph.reshape(scores, &[n, w])?;
        let weights = ctx.graph.softmax_axis(scores, 1)?;
        let weights = ctx.graph.reshape(weights, &[n, 1, w])?;
        let pooled = ctx.graph.matmul(weights, frames)?;
        ctx.graph.reshape(pooled, &[n, c])
    }
}
