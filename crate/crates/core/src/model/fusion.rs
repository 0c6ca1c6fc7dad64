use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Var};

use super::layers::{Ctx, Linear};

/// `e = W_ψᵀ·[W_φ1ᵀ·e_f, W_φ2ᵀ·e_g]` on `[n, D]` row batches.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub dim: usize,
    phi_f: Linear,
    phi_g: Linear,
    psi: Linear,
}

impl FusionHead {
    pub fn build(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dim: usize) -> Self {
        Self {
            dim,
            phi_f: Linear::build(store, rng, format!("{name}.phi_f"), dim, dim, false),
            phi_g: Linear::build(store, rng, format!("{name}.phi_g"), dim, dim, false),
            psi: Linear::build(store, rng, format!("{name}.psi"), 2 * dim, dim, false),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, e_f: Var, e_g: Var) -> Result<Var> {
        let (sf, sg) = (ctx.graph.shape(e_f).to_vec(), ctx.graph.shape(e_g).to_vec());
        if sf != sg || sf.len() != 2 || sf[1] != self.dim {
            return Err(Error::shape("fuse_embeddings", &sf, &sg));
        }
        let pf = self.phi_f.forward(ctx, e_f)?;
        let pg = self.phi_g.forward(ctx, e_g)?;
        let joint = ctx.graph.concat(&[pf, pg], 1)?;
        self.psi.forward(ctx, joint)
    }
}
