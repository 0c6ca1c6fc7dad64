//! Central-difference checks of every differentiable operation and of the
//! composite model paths. Each case returns `(label, max relative error)`.

use super::{away_from_zero, rng, uniform, weighted_sum};
use magphase::model::{
    aam_softmax_loss, cross_entropy_loss, CoAttention, Ctx, FusionHead, Mode, SapLayer, ACOS_EPS,
};
use magphase::tensor::{grad_check, grad_check_single, Graph, ParamStore, Tensor, Var};
use magphase::Result;

pub type Report = Vec<(String, f64)>;

fn record(out: &mut Report, name: &str, err: Result<f64>) {
    out.push((name.to_string(), err.unwrap_or(f64::INFINITY)));
}

pub fn matmul_plain_and_batched() -> Report {
    let mut out = Report::new();
    let mut r = rng(1);
    for (a, b) in [
        (vec![2, 3], vec![3, 4]),
        (vec![1, 5], vec![5, 1]),
        (vec![4, 2], vec![2, 3]),
        (vec![2, 3, 2], vec![2, 2, 4]),
    ] {
        let inputs = [uniform(&mut r, &a, -1.0, 1.0), uniform(&mut r, &b, -1.0, 1.0)];
        record(&mut out, "matmul", grad_check(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 1)
        }, &inputs));
    }
    out
}

pub fn transpose_rank2_and_rank3() -> Report {
    let mut out = Report::new();
    let mut r = rng(2);
    for shape in [vec![2, 3], vec![4, 1], vec![2, 3, 4]] {
        let x = uniform(&mut r, &shape, -1.0, 1.0);
        record(&mut out, "transpose", grad_check_single(|g, x| {
            let y = g.transpose(x)?;
            weighted_sum(g, y, 2)
        }, &x));
    }
    out
}

pub fn conv2d_strides_and_padding() -> Report {
    let mut out = Report::new();
    let mut r = rng(3);
    let cases = [
        (vec![1, 2, 5, 4], vec![3, 2, 3, 3], (1, 1), (1, 1)),
        (vec![2, 1, 7, 5], vec![2, 1, 7, 3], (2, 1), (3, 1)),
        (vec![2, 3, 4, 4], vec![2, 3, 1, 1], (2, 2), (0, 0)),
        (vec![2, 6, 3], vec![2, 2, 7, 1], (3, 1), (3, 0)),
    ];
    for (xs, ks, stride, pad) in cases {
        let inputs = [uniform(&mut r, &xs, -1.0, 1.0), uniform(&mut r, &ks, -1.0, 1.0)];
        record(&mut out, "conv2d", grad_check(|g, v| {
            let y = g.conv2d(v[0], v[1], stride, pad)?;
            weighted_sum(g, y, 3)
        }, &inputs));
    }
    out
}

pub fn batchnorm_train_and_eval() -> Report {
    let mut out = Report::new();
    let mut r = rng(4);
    for shape in [vec![2, 3, 2, 2], vec![4, 1, 3, 1], vec![3, 2, 1, 3]] {
        let c = shape[1];
        let inputs = [
            uniform(&mut r, &shape, -1.0, 1.0),
            uniform(&mut r, &[c], 0.5, 1.5),
            uniform(&mut r, &[c], -0.5, 0.5),
        ];
        record(&mut out, "batchnorm2d_train", grad_check(|g, v| {
            let (y, _) = g.batchnorm2d_train(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(g, y, 4)
        }, &inputs));
        let mean = uniform(&mut r, &[c], -0.2, 0.2);
        let var = uniform(&mut r, &[c], 0.5, 2.0);
        record(&mut out, "batchnorm2d_eval", grad_check(|g, v| {
            let y = g.batchnorm2d_eval(v[0], v[1], v[2], mean.data(), var.data(), 1e-5)?;
            weighted_sum(g, y, 5)
        }, &inputs));
    }
    out
}

pub fn elementwise_unary() -> Report {
    let mut out = Report::new();
    let mut r = rng(5);
    for shape in [vec![7], vec![2, 3], vec![2, 2, 3]] {
        let x = away_from_zero(&mut r, &shape);
        record(&mut out, "relu", grad_check_single(|g, x| {
            let y = g.relu(x);
            weighted_sum(g, y, 6)
        }, &x));
        record(&mut out, "tanh", grad_check_single(|g, x| {
            let y = g.tanh(x);
            weighted_sum(g, y, 7)
        }, &x));
        record(&mut out, "cos", grad_check_single(|g, x| {
            let y = g.cos(x);
            weighted_sum(g, y, 8)
        }, &x));
        record(&mut out, "scale", grad_check_single(|g, x| {
            let y = g.scale(x, -2.5);
            weighted_sum(g, y, 9)
        }, &x));
        let c = uniform(&mut r, &shape, -0.9, 0.9);
        record(&mut out, "arccos_clamped", grad_check_single(|g, x| {
            let y = g.arccos_clamped(x, ACOS_EPS);
            weighted_sum(g, y, 10)
        }, &c));
    }
    out
}

pub fn elementwise_binary() -> Report {
    let mut out = Report::new();
    let mut r = rng(6);
    for shape in [vec![5], vec![3, 2], vec![2, 1, 4]] {
        let inputs = [uniform(&mut r, &shape, -1.0, 1.0), uniform(&mut r, &shape, -1.0, 1.0)];
        type Op = fn(&mut Graph, Var, Var) -> Result<Var>;
        let ops: [(&str, Op); 3] = [("add", Graph::add), ("sub", Graph::sub), ("mul", Graph::mul)];
        for (name, op) in ops {
            record(&mut out, name, grad_check(|g, v| {
                let y = op(g, v[0], v[1])?;
                weighted_sum(g, y, 11)
            }, &inputs));
        }
    }
    out
}

pub fn biases() -> Report {
    let mut out = Report::new();
    let mut r = rng(7);
    for (xs, d) in [(vec![3, 4], 4), (vec![2, 2, 3], 3), (vec![1, 5], 5)] {
        let inputs = [uniform(&mut r, &xs, -1.0, 1.0), uniform(&mut r, &[d], -1.0, 1.0)];
        record(&mut out, "add_bias", grad_check(|g, v| {
            let y = g.add_bias(v[0], v[1])?;
            let y = g.tanh(y);
            weighted_sum(g, y, 12)
        }, &inputs));
    }
    for (xs, c) in [(vec![2, 3, 2, 2], 3), (vec![4, 1, 3], 4), (vec![1, 2, 1, 5], 2)] {
        let inputs = [uniform(&mut r, &xs, -1.0, 1.0), uniform(&mut r, &[c], -1.0, 1.0)];
        record(&mut out, "add_channel_bias", grad_check(|g, v| {
            let y = g.add_channel_bias(v[0], v[1])?;
            let y = g.tanh(y);
            weighted_sum(g, y, 13)
        }, &inputs));
    }
    out
}

pub fn reshapes_and_reductions() -> Report {
    let mut out = Report::new();
    let mut r = rng(8);
    for shape in [vec![2, 3, 4], vec![3, 1, 2], vec![1, 4, 2]] {
        let x = uniform(&mut r, &shape, -1.0, 1.0);
        record(&mut out, "reshape", grad_check_single(|g, x| {
            let n: usize = g.shape(x).iter().product();
            let y = g.reshape(x, &[n])?;
            let y = g.tanh(y);
            weighted_sum(g, y, 14)
        }, &x));
        record(&mut out, "flatten", grad_check_single(|g, x| {
            let y = g.flatten(x)?;
            let y = g.tanh(y);
            weighted_sum(g, y, 15)
        }, &x));
        for axis in 0..3 {
            record(&mut out, "mean_axis", grad_check_single(|g, x| {
                let y = g.mean_axis(x, axis)?;
                let y = g.tanh(y);
                weighted_sum(g, y, 16)
            }, &x));
            record(&mut out, "softmax_axis", grad_check_single(|g, x| {
                let y = g.softmax_axis(x, axis)?;
                weighted_sum(g, y, 17 + axis as u64)
            }, &x));
            record(&mut out, "l2_normalize", grad_check_single(|g, x| {
                let y = g.l2_normalize(x, axis, 1e-12)?;
                weighted_sum(g, y, 20 + axis as u64)
            }, &x));
        }
        record(&mut out, "sum", grad_check_single(|g, x| {
            let y = g.tanh(x);
            Ok(g.sum(y))
        }, &x));
        record(&mut out, "mean", grad_check_single(|g, x| {
            let y = g.tanh(x);
            Ok(g.mean(y))
        }, &x));
    }
    out
}

pub fn concat_every_axis() -> Report {
    let mut out = Report::new();
    let mut r = rng(9);
    for axis in 0..3 {
        let mut a = vec![2, 3, 2];
        let mut b = a.clone();
        a[axis] = 1;
        b[axis] = 3;
        let inputs = [uniform(&mut r, &a, -1.0, 1.0), uniform(&mut r, &b, -1.0, 1.0)];
        record(&mut out, "concat", grad_check(|g, v| {
            let y = g.concat(&[v[0], v[1]], axis)?;
            let y = g.tanh(y);
            weighted_sum(g, y, 23)
        }, &inputs));
    }
    out
}

pub fn cross_entropy_and_pooling() -> Report {
    let mut out = Report::new();
    let mut r = rng(10);
    for (b, c) in [(3, 4), (1, 2), (5, 8)] {
        let x = uniform(&mut r, &[b, c], -2.0, 2.0);
        let labels: Vec<usize> = (0..b).map(|i| (i * 7 + 1) % c).collect();
        record(&mut out, "cross_entropy", grad_check_single(|g, x| g.cross_entropy(x, &labels), &x));
    }
    for (shape, out_h) in [(vec![1, 2, 5, 3], 2), (vec![2, 1, 4, 2], 4), (vec![2, 2, 24, 1], 9)] {
        let x = uniform(&mut r, &shape, -1.0, 1.0);
        record(&mut out, "avg_pool_h", grad_check_single(|g, x| {
            let y = g.avg_pool_h(x, out_h)?;
            let y = g.tanh(y);
            weighted_sum(g, y, 24)
        }, &x));
    }
    out
}

pub fn five_op_chain() -> Report {
    let mut out = Report::new();
    let mut r = rng(11);
    let inputs = [uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[4, 5], -1.0, 1.0)];
    record(&mut out, "chain", grad_check(|g, v| {
        let y = g.matmul(v[0], v[1])?;
        let y = g.tanh(y);
        let y = g.softmax_axis(y, 1)?;
        let y = g.scale(y, 3.0);
        let y = g.l2_normalize(y, 0, 1e-12)?;
        weighted_sum(g, y, 25)
    }, &inputs));
    out
}

/// Runs a model component inside a gradient check, binding the named
/// parameters to the checked inputs that follow the data inputs.
fn check_component(
    store: &ParamStore,
    data: Vec<Tensor>,
    params: &[&str],
    forward: impl Fn(&mut Ctx, &[Var]) -> Result<Var>,
) -> f64 {
    let n_data = data.len();
    let mut inputs = data;
    inputs.extend(params.iter().map(|p| store.get(p).unwrap().clone()));
    grad_check(
        |g, v| {
            let mut ctx = Ctx::with_graph(std::mem::take(g), store, Mode::Train, 1e-5);
            for (name, &var) in params.iter().zip(&v[n_data..]) {
                ctx.bind(name, var);
            }
            let out = forward(&mut ctx, &v[..n_data]);
            *g = ctx.into_graph();
            let out = out?;
            weighted_sum(g, out, 26)
        },
        &inputs,
    )
    .unwrap()
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        let t = store.get_mut(&n).unwrap();
        let fresh = uniform(&mut r, t.shape(), -0.8, 0.8);
        *t = fresh;
    }
}

pub fn co_attention_block() -> Report {
    let mut out = Report::new();
    for residual in [true, false] {
        let mut store = ParamStore::new();
        let block = CoAttention::build(&mut store, &mut rng(12), "co", 3, residual);
        randomize(&mut store, 13);
        let mut r = rng(14);
        let f = uniform(&mut r, &[1, 3, 4, 2], -1.0, 1.0);
        let gm = uniform(&mut r, &[1, 3, 2, 2], -1.0, 1.0);
        let params: Vec<String> = store.names().map(str::to_string).collect();
        let params: Vec<&str> = params.iter().map(String::as_str).collect();
        for output in 0..2 {
            let err = check_component(&store, vec![f.clone(), gm.clone()], &params, |ctx, v| {
                let out = block.forward(ctx, v[0], v[1])?;
                Ok(if output == 0 { out.fbank } else { out.modgd })
            });
            out.push((format!("co-attention residual={residual} output {output}"), err));
        }
    }
    out
}

pub fn self_attentive_pooling() -> Report {
    let mut out = Report::new();
    let mut store = ParamStore::new();
    let sap = SapLayer::build(&mut store, &mut rng(15), "sap", 3);
    randomize(&mut store, 16);
    let params: Vec<String> = store.names().map(str::to_string).collect();
    let params: Vec<&str> = params.iter().map(String::as_str).collect();
    for shape in [[2, 3, 2, 4], [1, 3, 3, 1], [1, 3, 1, 5]] {
        let x = uniform(&mut rng(17), &shape, -1.0, 1.0);
        let err = check_component(&store, vec![x], &params, |ctx, v| sap.forward(ctx, v[0]));
        out.push((format!("sap {shape:?}"), err));
    }
    out
}

pub fn embedding_fusion() -> Report {
    let mut out = Report::new();
    let mut store = ParamStore::new();
    let head = FusionHead::build(&mut store, &mut rng(18), "fusion", 4);
    let params: Vec<String> = store.names().map(str::to_string).collect();
    let params: Vec<&str> = params.iter().map(String::as_str).collect();
    let mut r = rng(19);
    let data = vec![uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[3, 4], -1.0, 1.0)];
    let err = check_component(&store, data, &params, |ctx, v| head.forward(ctx, v[0], v[1]));
    out.push(("fusion".into(), err));
    out
}

pub fn softmax_cross_entropy_loss() -> Report {
    let mut out = Report::new();
    let mut r = rng(20);
    for (n, d, c) in [(4, 3, 5), (2, 6, 2), (6, 4, 8)] {
        let inputs = [
            uniform(&mut r, &[n, d], -1.0, 1.0),
            uniform(&mut r, &[d, c], -1.0, 1.0),
            uniform(&mut r, &[c], -0.5, 0.5),
        ];
        let labels: Vec<usize> = (0..n).map(|i| (3 * i + 1) % c).collect();
        record(&mut out, "cross_entropy_loss", grad_check(|g, v| cross_entropy_loss(g, v[0], v[1], v[2], &labels), &inputs));
    }
    out
}

pub fn aam_softmax_loss_gradient() -> Report {
    let mut out = Report::new();
    let mut r = rng(21);
    for (n, d, c, m) in [(4, 3, 5, 0.2), (3, 5, 4, 0.0), (6, 4, 8, 0.35)] {
        let inputs = [uniform(&mut r, &[n, d], -1.0, 1.0), uniform(&mut r, &[d, c], -1.0, 1.0)];
        let labels: Vec<usize> = (0..n).map(|i| (5 * i + 2) % c).collect();
        record(&mut out, "aam_softmax_loss", grad_check(|g, v| aam_softmax_loss(g, v[0], v[1], &labels, 30.0, m), &inputs));
    }
    out
}

pub const ALL: &[(&str, fn() -> Report)] = &[
    ("matmul_plain_and_batched", matmul_plain_and_batched),
    ("transpose_rank2_and_rank3", transpose_rank2_and_rank3),
    ("conv2d_strides_and_padding", conv2d_strides_and_padding),
    ("batchnorm_train_and_eval", batchnorm_train_and_eval),
    ("elementwise_unary", elementwise_unary),
    ("elementwise_binary", elementwise_binary),
    ("biases", biases),
    ("reshapes_and_reductions", reshapes_and_reductions),
    ("concat_every_axis", concat_every_axis),
    ("cross_entropy_and_pooling", cross_entropy_and_pooling),
    ("five_op_chain", five_op_chain),
    ("co_attention_block", co_attention_block),
    ("self_attentive_pooling", self_attentive_pooling),
    ("embedding_fusion", embedding_fusion),
    ("softmax_cross_entropy_loss", softmax_cross_entropy_loss),
    ("aam_softmax_loss_gradient", aam_softmax_loss_gradient),
];
