use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor, Var};

use super::layers::{AttentionProbe, Conv2d, Ctx};

/// Channel co-attention between the MODGD (`g`) and FBank (`f`) feature maps.
///
/// `A = Q_g·K_fᵀ` correlates the channels of both branches; its row- and
/// column-wise softmaxes re-mix each branch's value maps. Each output keeps
/// its input's spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoAttention {
    pub channels: usize,
    pub residual: bool,
    query_g: Conv2d,
    key_f: Conv2d,
    value_f: Conv2d,
    value_g: Conv2d,
}

/// Result of one co-attention pass.
#[derive(Debug, Clone, Copy)]
pub struct CoAttentionOut {
    pub fbank: Var,
    pub modgd: Var,
    /// `softmax(A)` with rows summing to one, `[n, C, C]`.
    pub s_r: Var,
    /// `softmax(Aᵀ)`, `[n, C, C]`.
    pub s_c: Var,
}

impl CoAttention {
    /// Query/key projections get Kaiming init; the value projections start
    /// at zero so a residual block begins as plain concatenation.
    pub fn build(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize, residual: bool) -> Self {
        let query_g = Conv2d::pointwise(store, rng, format!("{name}.query_g"), channels);
        let key_f = Conv2d::pointwise(store, rng, format!("{name}.key_f"), channels);
        let value_f = Conv2d::pointwise(store, rng, format!("{name}.value_f"), channels);
        let value_g = Conv2d::pointwise(store, rng, format!("{name}.value_g"), channels);
        for v in [&value_f, &value_g] {
            store.insert(format!("{}.weight", v.name), Tensor::zeros(&[channels, channels, 1, 1]), true);
        }
        Self {
            channels,
            residual,
            query_g,
            key_f,
            value_f,
            value_g,
        }
    }

    /// `f` is `[n, C, H_f, W]`, `g` is `[n, C, H_g, W]`.
    pub fn forward(&self, ctx: &mut Ctx, f: Var, g: Var) -> Result<CoAttentionOut> {
        let sf = ctx.graph.shape(f).to_vec();
        let sg = ctx.graph.shape(g).to_vec();
        let (n, c, hf, w) = match sf.as_slice() {
            &[n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::shape("co_attention", &sf, &sg)),
        };
        let hg = match sg.as_slice() {
            &[n2, c2, h, w2] if n2 == n && c2 == c && w2 == w && c == self.channels => h,
            _ => return Err(Error::shape("co_attention", &sf, &sg)),
        };

        let q = self.query_g.forward(ctx, g)?;
        let q = ctx.graph.reshape(q, &[n, c, hg * w])?;
        let aligned = if hf == hg { f } else { ctx.graph.avg_pool_h(f, hg)? };
        let k = self.key_f.forward(ctx, aligned)?;
        let k = ctx.graph.reshape(k, &[n, c, hg * w])?;
        let kt = ctx.graph.transpose(k)?;
        let a = ctx.graph.matmul(q, kt)?;
        let s_r = ctx.graph.softmax_axis(a, 2)?;
        let at = ctx.graph.transpose(a)?;
        let s_c = ctx.graph.softmax_axis(at, 2)?;
        ctx.probes.push(probe(ctx.graph.value(s_r), ctx.graph.value(s_c), c));

        let vf = self.value_f.forward(ctx, f)?;
        let vf = ctx.graph.reshape(vf, &[n, c, hf * w])?;
        let ff = ctx.graph.matmul(s_c, vf)?;
        let ff = ctx.graph.reshape(ff, &[n, c, hf, w])?;
        let vg = self.value_g.forward(ctx, g)?;
        let vg = ctx.graph.reshape(vg, &[n, c, hg * w])?;
        let fg = ctx.graph.matmul(s_r, vg)?;
        let fg = ctx.graph.reshape(fg, &[n, c, hg, w])?;

        let (fbank, modgd) = if self.residual {
            (ctx.graph.add(f, ff)?, ctx.graph.add(g, fg)?)
        } else {
            (ff, fg)
        };
        Ok(CoAttentionOut { fbank, modgd, s_r, s_c })
    }
}

fn probe(s_r: &Tensor, s_c: &Tensor, c: usize) -> AttentionProbe {
    let mut max_row_deviation: f64 = 0.0;
    let mut min_entry = f64::INFINITY;
    for s in [s_r, s_c] {
        for row in s.data().chunks(c) {
            max_row_deviation = max_row_deviation.max((row.iter().sum::<f64>() - 1.0).abs());
            min_entry = row.iter().copied().fold(min_entry, f64::min);
        }
    }
    AttentionProbe {
        max_row_deviation,
        min_entry,
    }
}
