use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Row-stochasticity diagnostics of one co-attention call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionProbe {
    /// Largest `|row sum − 1|` over both attention matrices.
    pub max_row_deviation: f64,
    pub min_entry: f64,
}

/// One forward pass: the tape, the parameters bound into it and the side
/// outputs (batch statistics, attention diagnostics).
pub struct Ctx<'a> {
    pub graph: Graph,
    pub mode: Mode,
    store: &'a ParamStore,
    bound: IndexMap<String, Var>,
    pub(crate) bn_stats: Vec<(String, BatchStats)>,
    pub(crate) probes: Vec<AttentionProbe>,
    pub(crate) bn_eps: f64,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode, bn_eps: f64) -> Self {
        Self {
            graph: Graph::new(),
            mode,
            store,
            bound: IndexMap::new(),
            bn_stats: Vec::new(),
            probes: Vec::new(),
            bn_eps,
        }
    }

    /// Continues an existing tape, e.g. one whose leaves a gradient check owns.
    pub fn with_graph(graph: Graph, store: &'a ParamStore, mode: Mode, bn_eps: f64) -> Self {
        Self {
            graph,
            ..Self::new(store, mode, bn_eps)
        }
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    /// Makes `name` resolve to `var` instead of the stored tensor.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    /// Binds a stored tensor into the graph (once per pass). Trainable
    /// entries become gradient-tracked leaves.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.expect(name)?.clone();
        let v = if self.store.is_trainable(name) {
            self.graph.param(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&'a Tensor> {
        self.store.expect(name)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn probes(&self) -> &[AttentionProbe] {
        &self.probes
    }
}

/// Kaiming-uniform (fan-in, ReLU gain) initialization.
pub(crate) fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub bias: bool,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
    ) -> Self {
        let name = name.into();
        let fan_in = c_in * kernel.0 * kernel.1;
        store.insert(
            format!("{name}.weight"),
            kaiming_uniform(rng, &[c_out, c_in, kernel.0, kernel.1], fan_in),
            true,
        );
        if bias {
            store.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]), true);
        }
        Self {
            name,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
            bias,
        }
    }

    /// 1×1, stride 1, with bias.
    pub fn pointwise(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: impl Into<String>, c: usize) -> Self {
        Self::build(store, rng, name, c, c, (1, 1), (1, 1), (0, 0), true)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let y = ctx.graph.conv2d(x, w, self.stride, self.pad)?;
        if self.bias {
            let b = ctx.param(&format!("{}.bias", self.name))?;
            ctx.graph.add_channel_bias(y, b)
        } else {
            Ok(y)
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad.0 - self.kernel.0) / self.stride.0 + 1,
            (w + 2 * self.pad.1 - self.kernel.1) / self.stride.1 + 1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn build(store: &mut ParamStore, name: impl Into<String>, channels: usize) -> Self {
        let name = name.into();
        store.insert(format!("{name}.weight"), Tensor::full(&[channels], 1.0), true);
        store.insert(format!("{name}.bias"), Tensor::zeros(&[channels]), true);
        store.insert(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false);
        store.insert(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), false);
        Self { name, channels }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let gamma = ctx.param(&format!("{}.weight", self.name))?;
        let beta = ctx.param(&format!("{}.bias", self.name))?;
        let eps = ctx.bn_eps;
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.graph.batchnorm2d_train(x, gamma, beta, eps)?;
                ctx.bn_stats.push((self.name.clone(), stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.buffer(&format!("{}.running_mean", self.name))?;
                let var = ctx.buffer(&format!("{}.running_var", self.name))?;
                ctx.graph.batchnorm2d_eval(x, gamma, beta, mean.data(), var.data(), eps)
            }
        }
    }
}

/// Folds a batch's statistics into the running averages.
pub(crate) fn update_running_stats(store: &mut ParamStore, stats: &[(String, BatchStats)], momentum: f64) -> Result<()> {
    for (name, s) in stats {
        for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            let key = format!("{name}.{suffix}");
            let t = store
                .get_mut(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing buffer {key}")))?;
            for (r, b) in t.data_mut().iter_mut().zip(batch.iter()) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }
    Ok(())
}

/// `y = x·W (+ b)` on row vectors, weight stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let name = name.into();
        store.insert(format!("{name}.weight"), kaiming_uniform(rng, &[d_in, d_out], d_in), true);
        if bias {
            store.insert(format!("{name}.bias"), Tensor::zeros(&[d_out]), true);
        }
        Self {
            name,
            d_in,
            d_out,
            bias,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let y = ctx.graph.matmul(x, w)?;
        if self.bias {
            let b = ctx.param(&format!("{}.bias", self.name))?;
            ctx.graph.add_bias(y, b)
        } else {
            Ok(y)
        }
    }
}
