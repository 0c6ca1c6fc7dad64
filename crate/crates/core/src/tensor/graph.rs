use crate::error::{Error, Result};

use super::kernels::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, transpose, ConvGeom};
use super::{axis_split, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics from a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, used for running-statistics updates.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Transpose { x: Var, batch: usize, rows: usize, cols: usize },
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, n: usize, c: usize, hw: usize },
    BatchNormEval { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64>, n: usize, c: usize, hw: usize },
    Relu(Var),
    Tanh(Var),
    Cos(Var),
    Arccos { x: Var, eps: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, b: Var },
    AddChannelBias { x: Var, b: Var, c: usize, hw: usize },
    Scale { x: Var, c: f64 },
    Reshape(Var),
    MeanAxis { x: Var, outer: usize, len: usize, inner: usize },
    Sum(Var),
    Mean(Var),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    Concat { parts: Vec<Var>, outer: usize, lens: Vec<usize>, inner: usize },
    L2Normalize { x: Var, outer: usize, len: usize, inner: usize, norms: Vec<f64>, eps: f64 },
    CrossEntropy { logits: Var, probs: Vec<f64>, labels: Vec<usize>, classes: usize },
    AvgPoolH { x: Var, n: usize, c: usize, h: usize, w: usize, out_h: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Tape of operations in creation (hence topological) order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::shape(op, a, b)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, true, Op::Leaf)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, available after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).unwrap())
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, parents: &[Var], op: Op) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, rg, op)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// `[m, k] × [k, n]`, or batched `[b, m, k] × [b, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n, vec![*m, *n]),
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n, vec![*b1, *m, *n]),
            _ => return Err(shape_err("matmul", &sa, &sb)),
        };
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..batch {
            gemm_acc(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.derived(value, &[a, b], Op::MatMul { a, b, batch, m, k, n }))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (batch, rows, cols, out_shape) = match s.as_slice() {
            [r, c] => (1, *r, *c, vec![*c, *r]),
            [b, r, c] => (*b, *r, *c, vec![*b, *c, *r]),
            _ => return Err(shape_err("transpose", &s, &[])),
        };
        let mut out = vec![0.0; batch * rows * cols];
        let xd = self.data(x);
        for i in 0..batch {
            let span = i * rows * cols..(i + 1) * rows * cols;
            transpose(rows, cols, &xd[span.clone()], &mut out[span]);
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.derived(value, &[x], Op::Transpose { x, batch, rows, cols }))
    }

    /// 2-D convolution without bias. `x` is `[n, c_in, h, w]` (or `[c_in, h, w]`),
    /// `k` is `[c_out, c_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: (usize, usize), pad: (usize, usize)) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(k).to_vec();
        let (n, unbatched) = match sx.len() {
            3 => (1, true),
            4 => (sx[0], false),
            _ => return Err(shape_err("conv2d", &sx, &sk)),
        };
        let (c_in, h, w) = (sx[sx.len() - 3], sx[sx.len() - 2], sx[sx.len() - 1]);
        if sk.len() != 4 || sk[1] != c_in || stride.0 == 0 || stride.1 == 0 {
            return Err(shape_err("conv2d", &sx, &sk));
        }
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        if h + 2 * pad.0 < kh || w + 2 * pad.1 < kw {
            return Err(shape_err("conv2d", &sx, &sk));
        }
        let geom = ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
            ho: (h + 2 * pad.0 - kh) / stride.0 + 1,
            wo: (w + 2 * pad.1 - kw) / stride.1 + 1,
        };
        let mut out = vec![0.0; n * geom.out_sample()];
        let (xd, kd) = (self.data(x), self.data(k));
        let mut cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; geom.col_rows() * geom.out_plane()]
        };
        for s in 0..n {
            let xs = &xd[s * geom.in_sample()..(s + 1) * geom.in_sample()];
            let col: &[f64] = if geom.is_pointwise() {
                xs
            } else {
                geom.im2col(xs, &mut cols);
                &cols
            };
            gemm_acc(
                c_out,
                geom.col_rows(),
                geom.out_plane(),
                kd,
                col,
                &mut out[s * geom.out_sample()..(s + 1) * geom.out_sample()],
            );
        }
        let shape = if unbatched {
            vec![c_out, geom.ho, geom.wo]
        } else {
            vec![n, c_out, geom.ho, geom.wo]
        };
        let value = Tensor::new(&shape, out)?;
        Ok(self.derived(value, &[x, k], Op::Conv2d { x, k, geom }))
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x).to_vec();
        let (n, c, hw) = match s.as_slice() {
            [c, h, w] => (1, *c, h * w),
            [n, c, h, w] => (*n, *c, h * w),
            _ => return Err(shape_err("batchnorm2d", &s, self.shape(gamma))),
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batchnorm2d", &s, self.shape(gamma)));
        }
        Ok((n, c, hw))
    }

    /// Training-mode batch norm over `[n, c, h, w]`: normalizes with the batch
    /// statistics and returns them for running-average updates.
    pub fn batchnorm2d_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, hw) = self.bn_dims(x, gamma, beta)?;
        let count = (n * hw) as f64;
        let xd = self.data(x);
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..n {
                s += xd[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
            }
            mean[ch] = s / count;
            let mut v = 0.0;
            for i in 0..n {
                v += xd[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                    .iter()
                    .map(|&e| (e - mean[ch]) * (e - mean[ch]))
                    .sum::<f64>();
            }
            var[ch] = v / count;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let span = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for j in span {
                    let h = (xd[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = gd[ch] * h + bd[ch];
                }
            }
        }
        let unbiased = if count > 1.0 {
            var.iter().map(|v| v * count / (count - 1.0)).collect()
        } else {
            var.clone()
        };
        let value = Tensor::new(self.shape(x), out)?;
        let v = self.derived(
            value,
            &[x, gamma, beta],
            Op::BatchNormTrain { x, gamma, beta, xhat, inv_std, n, c, hw },
        );
        Ok((v, BatchStats { mean, var: unbiased }))
    }

    /// Eval-mode batch norm with fixed running statistics.
    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, hw) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batchnorm2d", &[c], &[running_mean.len(), running_var.len()]));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = self.data(x);
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                    out[j] = gd[ch] * (xd[j] - running_mean[ch]) * inv_std[ch] + bd[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let mean = running_mean.to_vec();
        Ok(self.derived(
            value,
            &[x, gamma, beta],
            Op::BatchNormEval { x, gamma, beta, mean, inv_std, n, c, hw },
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(x), data).unwrap();
        self.derived(value, &[x], op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, f64::cos, Op::Cos(x))
    }

    /// `acos` of the input clamped to `[−1 + eps, 1 − eps]`.
    pub fn arccos_clamped(&mut self, x: Var, eps: f64) -> Var {
        let (lo, hi) = (-1.0 + eps, 1.0 - eps);
        self.unary(x, move |v| v.clamp(lo, hi).acos(), Op::Arccos { x, eps })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v * c, Op::Scale { x, c })
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(name, self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.derived(value, &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a `[d]` vector to every row of a `[.., d]` tensor.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap_or(&0);
        if self.shape(b) != [d] {
            return Err(shape_err("add_bias", &sx, self.shape(b)));
        }
        let bd = self.data(b).to_vec();
        let data = self
            .data(x)
            .chunks(d.max(1))
            .flat_map(|row| row.iter().zip(&bd).map(|(v, b)| v + b).collect::<Vec<_>>())
            .collect();
        let value = Tensor::new(&sx, data)?;
        Ok(self.derived(value, &[x, b], Op::AddBias { x, b }))
    }

    /// Adds a `[c]` vector along the channel axis of `[n, c, h, w]` or `[c, h, w]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (c, hw) = match sx.as_slice() {
            [c, h, w] | [_, c, h, w] => (*c, h * w),
            _ => return Err(shape_err("add_channel_bias", &sx, self.shape(b))),
        };
        if self.shape(b) != [c] {
            return Err(shape_err("add_channel_bias", &sx, self.shape(b)));
        }
        let bd = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[(i / hw) % c])
            .collect();
        let value = Tensor::new(&sx, data)?;
        Ok(self.derived(value, &[x, b], Op::AddChannelBias { x, b, c, hw }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape).map_err(|_| shape_err("reshape", self.shape(x), shape))?;
        Ok(self.derived(value, &[x], Op::Reshape(x)))
    }

    /// Keeps the leading axis and merges the rest.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let lead = *s.first().unwrap_or(&1);
        let rest = s.iter().skip(1).product();
        self.reshape(x, &[lead, rest])
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(shape_err("mean_axis", &s, &[axis]));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &xd[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape = s.clone();
        shape.remove(axis);
        let value = Tensor::new(&shape, out)?;
        Ok(self.derived(value, &[x], Op::MeanAxis { x, outer, len, inner }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.derived(Tensor::scalar(total), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.derived(Tensor::scalar(m), &[x], Op::Mean(x))
    }

    /// Softmax along `axis`.
    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("softmax_axis", &s, &[axis]));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| xd[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..len {
                    let e = (xd[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    out[idx(a)] /= total;
                }
            }
        }
        let value = Tensor::new(&s, out)?;
        Ok(self.derived(value, &[x], Op::Softmax { x, outer, len, inner }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or(Error::Empty("concat inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", &first, &[axis]));
        }
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &first, s));
            }
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let lens: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                out.extend_from_slice(&self.data(p)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(self.derived(
            value,
            parts,
            Op::Concat { parts: parts.to_vec(), outer, lens, inner },
        ))
    }

    /// `x / max(‖x‖₂, eps)` along `axis`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("l2_normalize", &s, &[axis]));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        let mut norms = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let norm = (0..len).map(|a| xd[idx(a)] * xd[idx(a)]).sum::<f64>().sqrt().max(eps);
                norms[o * inner + i] = norm;
                for a in 0..len {
                    out[idx(a)] = xd[idx(a)] / norm;
                }
            }
        }
        let value = Tensor::new(&s, out)?;
        Ok(self.derived(value, &[x], Op::L2Normalize { x, outer, len, inner, norms, eps }))
    }

    /// Mean over rows of `−log softmax(logits)[label]` for `[b, classes]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let [b, classes] = s.as_slice() else {
            return Err(shape_err("cross_entropy", &s, &[labels.len()]));
        };
        let (b, classes) = (*b, *classes);
        if labels.len() != b || b == 0 {
            return Err(shape_err("cross_entropy", &s, &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let ld = self.data(logits);
        let mut probs = vec![0.0; b * classes];
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &ld[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[y];
            for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let value = Tensor::scalar(loss / b as f64);
        Ok(self.derived(
            value,
            &[logits],
            Op::CrossEntropy { logits, probs, labels: labels.to_vec(), classes },
        ))
    }

    /// Adaptive average pooling of axis 2 of `[n, c, h, w]` down to `out_h`.
    pub fn avg_pool_h(&mut self, x: Var, out_h: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [n, c, h, w] = s.as_slice() else {
            return Err(shape_err("avg_pool_h", &s, &[out_h]));
        };
        let (n, c, h, w) = (*n, *c, *h, *w);
        if out_h == 0 || out_h > h {
            return Err(shape_err("avg_pool_h", &s, &[out_h]));
        }
        let xd = self.data(x);
        let mut out = vec![0.0; n * c * out_h * w];
        for plane in 0..n * c {
            for (oh, (start, end)) in pool_bins(h, out_h).enumerate() {
                let dst = &mut out[(plane * out_h + oh) * w..(plane * out_h + oh + 1) * w];
                for ih in start..end {
                    for (d, v) in dst.iter_mut().zip(&xd[(plane * h + ih) * w..(plane * h + ih + 1) * w]) {
                        *d += v;
                    }
                }
                let k = (end - start) as f64;
                dst.iter_mut().for_each(|d| *d /= k);
            }
        }
        let value = Tensor::new(&[n, c, out_h, w], out)?;
        Ok(self.derived(value, &[x], Op::AvgPoolH { x, n, c, h, w, out_h }))
    }

    /// Reverse pass from a scalar `loss`, accumulating into every node that
    /// requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.adjoint(i, &g);
            self.nodes[i].grad = Some(g);
            for (parent, delta) in contributions {
                let node = &mut self.nodes[parent.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn adjoint(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            &Op::MatMul { a, b, batch, m, k, n } => {
                let mut res = Vec::new();
                let (ad, bd) = (self.data(a), self.data(b));
                if rg(a) {
                    let mut da = vec![0.0; batch * m * k];
                    for s in 0..batch {
                        gemm_nt_acc(
                            m,
                            n,
                            k,
                            &g[s * m * n..(s + 1) * m * n],
                            &bd[s * k * n..(s + 1) * k * n],
                            &mut da[s * m * k..(s + 1) * m * k],
                        );
                    }
                    res.push((a, da));
                }
                if rg(b) {
                    let mut db = vec![0.0; batch * k * n];
                    for s in 0..batch {
                        gemm_tn_acc(
                            k,
                            m,
                            n,
                            &ad[s * m * k..(s + 1) * m * k],
                            &g[s * m * n..(s + 1) * m * n],
                            &mut db[s * k * n..(s + 1) * k * n],
                        );
                    }
                    res.push((b, db));
                }
                res
            }
            &Op::Transpose { x, batch, rows, cols } => {
                let mut dx = vec![0.0; g.len()];
                for s in 0..batch {
                    let span = s * rows * cols..(s + 1) * rows * cols;
                    transpose(cols, rows, &g[span.clone()], &mut dx[span]);
                }
                vec![(x, dx)]
            }
            &Op::Conv2d { x, k, geom } => self.conv_adjoint(x, k, &geom, g),
            Op::BatchNormTrain { x, gamma, beta, xhat, inv_std, n, c, hw } => {
                let (n, c, hw) = (*n, *c, *hw);
                let gd = self.data(*gamma);
                let count = (n * hw) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let span = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                        dgamma[ch] += dot(&g[span.clone()], &xhat[span.clone()]);
                        dbeta[ch] += g[span].iter().sum::<f64>();
                    }
                }
                let mut dx = vec![0.0; g.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let k = gd[ch] * inv_std[ch] / count;
                        for j in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                            dx[j] = k * (count * g[j] - dbeta[ch] - xhat[j] * dgamma[ch]);
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::BatchNormEval { x, gamma, beta, mean, inv_std, n, c, hw } => {
                let (n, c, hw) = (*n, *c, *hw);
                let (xd, gd) = (self.data(*x), self.data(*gamma));
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        for j in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                            dx[j] = g[j] * gd[ch] * inv_std[ch];
                            dgamma[ch] += g[j] * (xd[j] - mean[ch]) * inv_std[ch];
                            dbeta[ch] += g[j];
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            &Op::Relu(x) => {
                let dx = g.iter().zip(out).map(|(&g, &y)| if y > 0.0 { g } else { 0.0 }).collect();
                vec![(x, dx)]
            }
            &Op::Tanh(x) => {
                let dx = g.iter().zip(out).map(|(&g, &y)| g * (1.0 - y * y)).collect();
                vec![(x, dx)]
            }
            &Op::Cos(x) => {
                let dx = g.iter().zip(self.data(x)).map(|(&g, &v)| -g * v.sin()).collect();
                vec![(x, dx)]
            }
            &Op::Arccos { x, eps } => {
                let (lo, hi) = (-1.0 + eps, 1.0 - eps);
                let dx = g
                    .iter()
                    .zip(self.data(x))
                    .map(|(&g, &v)| {
                        if v < lo || v > hi {
                            0.0
                        } else {
                            -g / (1.0 - v * v).sqrt()
                        }
                    })
                    .collect();
                vec![(x, dx)]
            }
            &Op::Add(a, b) => vec![(a, g.to_vec()), (b, g.to_vec())],
            &Op::Sub(a, b) => vec![(a, g.to_vec()), (b, g.iter().map(|v| -v).collect())],
            &Op::Mul(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                vec![
                    (a, g.iter().zip(bd).map(|(g, b)| g * b).collect()),
                    (b, g.iter().zip(ad).map(|(g, a)| g * a).collect()),
                ]
            }
            &Op::AddBias { x, b } => {
                let d = self.shape(b)[0];
                let mut db = vec![0.0; d];
                for row in g.chunks(d) {
                    db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                vec![(x, g.to_vec()), (b, db)]
            }
            &Op::AddChannelBias { x, b, c, hw } => {
                let mut db = vec![0.0; c];
                for (i, plane) in g.chunks(hw).enumerate() {
                    db[i % c] += plane.iter().sum::<f64>();
                }
                vec![(x, g.to_vec()), (b, db)]
            }
            &Op::Scale { x, c } => vec![(x, g.iter().map(|v| v * c).collect())],
            &Op::Reshape(x) => vec![(x, g.to_vec())],
            &Op::MeanAxis { x, outer, len, inner } => {
                let mut dx = vec![0.0; outer * len * inner];
                let scale = 1.0 / len as f64;
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            dx[(o * len + a) * inner + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                vec![(x, dx)]
            }
            &Op::Sum(x) => vec![(x, vec![g[0]; self.data(x).len()])],
            &Op::Mean(x) => {
                let n = self.data(x).len();
                vec![(x, vec![g[0] / n as f64; n])]
            }
            &Op::Softmax { x, outer, len, inner } => {
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let s: f64 = (0..len).map(|a| g[idx(a)] * out[idx(a)]).sum();
                        for a in 0..len {
                            dx[idx(a)] = out[idx(a)] * (g[idx(a)] - s);
                        }
                    }
                }
                vec![(x, dx)]
            }
            Op::Concat { parts, outer, lens, inner } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for (&p, &len) in parts.iter().zip(lens) {
                    let mut dp = Vec::with_capacity(outer * len * inner);
                    for o in 0..*outer {
                        let start = (o * total + offset) * inner;
                        dp.extend_from_slice(&g[start..start + len * inner]);
                    }
                    offset += len;
                    res.push((p, dp));
                }
                res
            }
            Op::L2Normalize { x, outer, len, inner, norms, eps } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let xd = self.data(*x);
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let norm = norms[o * inner + i];
                        let raw = (0..len).map(|a| xd[idx(a)] * xd[idx(a)]).sum::<f64>().sqrt();
                        if raw >= *eps {
                            let s: f64 = (0..len).map(|a| g[idx(a)] * out[idx(a)]).sum();
                            for a in 0..len {
                                dx[idx(a)] = (g[idx(a)] - out[idx(a)] * s) / norm;
                            }
                        } else {
                            for a in 0..len {
                                dx[idx(a)] = g[idx(a)] / norm;
                            }
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::CrossEntropy { logits, probs, labels, classes } => {
                let b = labels.len() as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * g[0] / b).collect();
                for (r, &y) in labels.iter().enumerate() {
                    dx[r * classes + y] -= g[0] / b;
                }
                vec![(*logits, dx)]
            }
            &Op::AvgPoolH { x, n, c, h, w, out_h } => {
                let mut dx = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    for (oh, (start, end)) in pool_bins(h, out_h).enumerate() {
                        let k = (end - start) as f64;
                        let src = &g[(plane * out_h + oh) * w..(plane * out_h + oh + 1) * w];
                        for ih in start..end {
                            let dst = &mut dx[(plane * h + ih) * w..(plane * h + ih + 1) * w];
                            for (d, v) in dst.iter_mut().zip(src) {
                                *d += v / k;
                            }
                        }
                    }
                }
                vec![(x, dx)]
            }
        }
    }

    fn conv_adjoint(&self, x: Var, k: Var, geom: &ConvGeom, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let (xd, kd) = (self.data(x), self.data(k));
        let rows = geom.col_rows();
        let plane = geom.out_plane();
        let want_x = self.nodes[x.0].requires_grad;
        let want_k = self.nodes[k.0].requires_grad;
        let mut dk = if want_k { vec![0.0; kd.len()] } else { Vec::new() };
        let mut dx = if want_x { vec![0.0; xd.len()] } else { Vec::new() };
        let mut cols = vec![0.0; if geom.is_pointwise() { 0 } else { rows * plane }];
        let mut dcols = vec![0.0; if want_x { rows * plane } else { 0 }];
        for s in 0..geom.n {
            let gs = &g[s * geom.out_sample()..(s + 1) * geom.out_sample()];
            let xs = &xd[s * geom.in_sample()..(s + 1) * geom.in_sample()];
            if want_k {
                let col: &[f64] = if geom.is_pointwise() {
                    xs
                } else {
                    geom.im2col(xs, &mut cols);
                    &cols
                };
                gemm_nt_acc(geom.c_out, plane, rows, gs, col, &mut dk);
            }
            if want_x {
                dcols.fill(0.0);
                gemm_tn_acc(rows, geom.c_out, plane, kd, gs, &mut dcols);
                let dxs = &mut dx[s * geom.in_sample()..(s + 1) * geom.in_sample()];
                if geom.is_pointwise() {
                    dxs.iter_mut().zip(&dcols).for_each(|(a, b)| *a += b);
                } else {
                    geom.col2im_acc(&dcols, dxs);
                }
            }
        }
        let mut res = Vec::new();
        if want_x {
            res.push((x, dx));
        }
        if want_k {
            res.push((k, dk));
        }
        res
    }
}

/// `[start, end)` input rows of each adaptive pooling bin.
fn pool_bins(h: usize, out_h: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..out_h).map(move |i| (i * h / out_h, ((i + 1) * h).div_ceil(out_h)))
}
