use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scoring::argmax;
use crate::tensor::Tensor;

use super::layers::{update_running_stats, AttentionProbe, Mode};
use super::network::{features_to_input, BranchInputs, FusionModel};

/// Gradient descent with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: IndexMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: IndexMap::new(),
        }
    }

    fn apply(&mut self, param: &mut Tensor, name: &str, grad: &Tensor) {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; grad.numel()]);
        for ((p, g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(v.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= self.lr * *v;
        }
    }
}

/// One minibatch, inputs `[n, 1, F, T]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub fbank: Option<Tensor>,
    pub modgd: Option<Tensor>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    /// Loss before the update.
    pub loss: f64,
    /// Batch items whose train-mode prediction was right.
    pub correct: usize,
    pub probes: Vec<AttentionProbe>,
}

impl StepReport {
    /// Worst row-sum deviation of the attention matrices this step.
    pub fn max_row_deviation(&self) -> f64 {
        self.probes.iter().map(|p| p.max_row_deviation).fold(0.0, f64::max)
    }
}

/// Forward, backward and update on one batch.
pub fn train_step(model: &mut FusionModel, batch: &Batch, opt: &mut Sgd) -> Result<StepReport> {
    let (loss, correct, grads, stats, probes) = {
        let mut ctx = model.new_ctx(Mode::Train);
        let inputs = BranchInputs {
            fbank: batch.fbank.clone().map(|t| ctx.graph.constant(t)),
            modgd: batch.modgd.clone().map(|t| ctx.graph.constant(t)),
        };
        let emb = model.forward(&mut ctx, inputs)?;
        let loss = model.classifier().loss(&mut ctx, emb, &batch.labels)?;
        let scores = model.classifier().scores(&mut ctx, emb)?;
        let classes = model.classes();
        let correct = ctx
            .graph
            .value(scores)
            .data()
            .chunks(classes)
            .zip(&batch.labels)
            .filter(|(row, &y)| argmax(row) == Some(y))
            .count();
        ctx.graph.backward(loss)?;
        let bound: Vec<(String, _)> = ctx.bound().map(|(n, v)| (n.to_string(), v)).collect();
        let grads: Vec<(String, Tensor)> = bound
            .into_iter()
            .filter_map(|(n, v)| ctx.graph.grad(v).map(|g| (n, g)))
            .collect();
        let loss_value = ctx.graph.value(loss).item();
        (loss_value, correct, grads, std::mem::take(&mut ctx.bn_stats), std::mem::take(&mut ctx.probes))
    };
    if !loss.is_finite() {
        return Err(Error::InvalidArgument(format!("training loss became {loss}")));
    }
    for (name, grad) in &grads {
        let param = model.store.get_mut(name).expect("bound parameter exists");
        opt.apply(param, name, grad);
    }
    update_running_stats(&mut model.store, &stats, model.config.bn_momentum)?;
    Ok(StepReport { loss, correct, probes })
}

/// A labelled training example; both feature views cover the same frames.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub label: usize,
    pub fbank: Option<FeatureMatrix<f32>>,
    pub modgd: Option<FeatureMatrix<f32>>,
}

impl TrainItem {
    pub fn frames(&self) -> usize {
        self.fbank.as_ref().or(self.modgd.as_ref()).map_or(0, |m| m.frames())
    }
}

/// Stacks the chosen items, each cut to `len` frames from its offset in
/// `starts` (indexed like `items`).
pub fn sample_batch(items: &[TrainItem], order: &[usize], len: usize, starts: &[usize]) -> Result<Batch> {
    let mut fb = Vec::new();
    let mut mg = Vec::new();
    for &i in order {
        let it = &items[i];
        if let Some(m) = &it.fbank {
            fb.push(m.crop(starts[i], len)?);
        }
        if let Some(m) = &it.modgd {
            mg.push(m.crop(starts[i], len)?);
        }
    }
    let stack = |ms: &[FeatureMatrix<f32>]| -> Result<Option<Tensor>> {
        if ms.is_empty() {
            return Ok(None);
        }
        let refs: Vec<&FeatureMatrix<f32>> = ms.iter().collect();
        features_to_input(&refs).map(Some)
    };
    Ok(Batch {
        fbank: stack(&fb)?,
        modgd: stack(&mg)?,
        labels: order.iter().map(|&i| items[i].label).collect(),
    })
}

fn draw_starts(items: &[TrainItem], len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    items.iter().map(|it| rng.gen_range(0..=it.frames() - len)).collect()
}

/// Runs `model.config.steps` steps, calling `on_step(step, report)` after each.
pub fn train(
    model: &mut FusionModel,
    items: &[TrainItem],
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(usize, &StepReport),
) -> Result<Vec<StepReport>> {
    if items.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if let Some(it) = items.iter().find(|it| it.label >= model.classes()) {
        return Err(Error::LabelOutOfRange {
            label: it.label,
            classes: model.classes(),
        });
    }
    let cfg = model.config.clone();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let min_frames = items.iter().map(|it| it.frames()).min().unwrap_or(0);
    if min_frames == 0 {
        return Err(Error::Empty("training item frames"));
    }
    let len = if cfg.crop_frames == 0 { min_frames } else { cfg.crop_frames.min(min_frames) };
    let batch_size = cfg.batch_size.min(items.len());
    let mut picker = BatchPicker::new(items, cfg.balanced);
    // In fixed mode one pass over the data is planned up front and replayed.
    let plan: Vec<Vec<usize>> = if cfg.fixed_schedule {
        (0..items.len().div_ceil(batch_size)).map(|_| picker.next(batch_size, rng)).collect()
    } else {
        Vec::new()
    };
    let fixed_starts = cfg.fixed_schedule.then(|| draw_starts(items, len, rng));
    let mut reports = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        opt.lr = cfg.lr_at(step);
        let batch = match &fixed_starts {
            Some(starts) => sample_batch(items, &plan[step % plan.len()], len, starts)?,
            None => {
                let order = picker.next(batch_size, rng);
                sample_batch(items, &order, len, &draw_starts(items, len, rng))?
            }
        };
        let report = train_step(model, &batch, &mut opt)?;
        on_step(step, &report);
        reports.push(report);
    }
    Ok(reports)
}

/// Shuffled passes over the items, either globally or per speaker with the
/// speakers visited round-robin.
struct BatchPicker {
    pools: Vec<Vec<usize>>,
    queues: Vec<Vec<usize>>,
    speaker_queue: Vec<usize>,
}

impl BatchPicker {
    fn new(items: &[TrainItem], balanced: bool) -> Self {
        let pools = if balanced {
            let classes = items.iter().map(|it| it.label + 1).max().unwrap_or(0);
            let mut pools = vec![Vec::new(); classes];
            for (i, it) in items.iter().enumerate() {
                pools[it.label].push(i);
            }
            pools.retain(|p| !p.is_empty());
            pools
        } else {
            vec![(0..items.len()).collect()]
        };
        Self {
            queues: vec![Vec::new(); pools.len()],
            pools,
            speaker_queue: Vec::new(),
        }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut order = Vec::with_capacity(size);
        while order.len() < size {
            if self.speaker_queue.is_empty() {
                self.speaker_queue = (0..self.pools.len()).collect();
                self.speaker_queue.shuffle(rng);
            }
            let pool = self.speaker_queue.pop().unwrap();
            if self.queues[pool].is_empty() {
                self.queues[pool] = self.pools[pool].clone();
                self.queues[pool].shuffle(rng);
            }
            order.push(self.queues[pool].pop().unwrap());
        }
        order
    }
}

/// Eval-mode class predictions (argmax of the classifier scores, first index
/// on ties), computed one item at a time.
pub fn predict(model: &FusionModel, items: &[TrainItem]) -> Result<Vec<usize>> {
    items
        .iter()
        .map(|it| {
            let mut ctx = model.new_ctx(Mode::Eval);
            let inputs = BranchInputs {
                fbank: it.fbank.as_ref().map(|m| features_to_input(&[m])).transpose()?.map(|t| ctx.graph.constant(t)),
                modgd: it.modgd.as_ref().map(|m| features_to_input(&[m])).transpose()?.map(|t| ctx.graph.constant(t)),
            };
            let emb = model.forward(&mut ctx, inputs)?;
            let scores = model.classifier().scores(&mut ctx, emb)?;
            Ok(argmax(ctx.graph.value(scores).data()).unwrap_or(0))
        })
        .collect()
}
