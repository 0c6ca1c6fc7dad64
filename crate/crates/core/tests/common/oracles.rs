//! Brute-force references for the scoring metrics and the classifier
//! losses, written without the library's own sweep or tensor code.

use super::{rng, uniform};
use magphase::model::aam_softmax_loss;
use magphase::scoring::DcfParams;
use magphase::tensor::{Graph, Tensor};
use rand_distr::{Distribution, Normal};

/// Error rates at threshold `t`, counting a score `≥ t` as accepted.
pub fn rates(tgt: &[f64], non: &[f64], t: f64) -> (f64, f64) {
    let far = non.iter().filter(|&&s| s >= t).count() as f64 / non.len() as f64;
    let frr = tgt.iter().filter(|&&s| s < t).count() as f64 / tgt.len() as f64;
    (far, frr)
}

/// Same counts via binary search on sorted scores, for dense grids.
pub fn rates_sorted(tgt: &[f64], non: &[f64], t: f64) -> (f64, f64) {
    let below = |v: &[f64]| v.partition_point(|&s| s < t);
    let far = (non.len() - below(non)) as f64 / non.len() as f64;
    let frr = below(tgt) as f64 / tgt.len() as f64;
    (far, frr)
}

/// Sorted target and nontarget scores.
pub fn split(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut tgt: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
    let mut non: Vec<f64> = scores.iter().zip(labels).filter(|p| !*p.1).map(|p| *p.0).collect();
    tgt.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    (tgt, non)
}

/// Crossing point of FAR and FRR on a grid of a million thresholds.
pub fn brute_force_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let (tgt, non) = split(scores, labels);
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let steps = 1_000_000;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=steps + 1 {
        let t = lo + (hi - lo) * k as f64 / steps as f64;
        let (far, frr) = rates_sorted(&tgt, &non, t);
        if (far - frr).abs() < best.0 {
            best = ((far - frr).abs(), 0.5 * (far + frr));
        }
    }
    best.1
}

/// Normalized minimum detection cost over every threshold of a 1e-3 grid.
/// Exact when all scores lie on that grid.
pub fn grid_min_dcf(scores: &[f64], labels: &[bool], params: DcfParams) -> f64 {
    let (tgt, non) = split(scores, labels);
    let w_miss = params.c_miss * params.p_target;
    let w_fa = params.c_fa * (1.0 - params.p_target);
    let lo = (scores.iter().copied().fold(f64::INFINITY, f64::min) * 1000.0).round() as i64;
    let hi = (scores.iter().copied().fold(f64::NEG_INFINITY, f64::max) * 1000.0).round() as i64;
    let mut best = f64::INFINITY;
    for k in lo..=hi + 1 {
        // Half a step below each grid point, so ties are never on the edge.
        let (far, frr) = rates(&tgt, &non, k as f64 / 1000.0 - 5e-4);
        best = best.min(w_miss * frr + w_fa * far);
    }
    best / w_miss.min(w_fa)
}

pub fn quantize_milli(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|s| (s * 1000.0).round() / 1000.0).collect()
}

/// Targets drawn from `N(d', 1)`, nontargets from `N(0, 1)`.
pub fn gaussian_trials(seed: u64, n_tgt: usize, n_non: usize, d_prime: f64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng(seed);
    let tgt = Normal::new(d_prime, 1.0).unwrap();
    let non = Normal::new(0.0, 1.0).unwrap();
    let mut scores = Vec::with_capacity(n_tgt + n_non);
    let mut labels = Vec::with_capacity(n_tgt + n_non);
    for _ in 0..n_tgt {
        scores.push(tgt.sample(&mut r));
        labels.push(true);
    }
    for _ in 0..n_non {
        scores.push(non.sample(&mut r));
        labels.push(false);
    }
    (scores, labels)
}

pub fn aam_value(emb: &Tensor, w: &Tensor, labels: &[usize], scale: f64, margin: f64) -> f64 {
    let mut g = Graph::new();
    let (e, w) = (g.constant(emb.clone()), g.constant(w.clone()));
    let l = aam_softmax_loss(&mut g, e, w, labels, scale, margin).unwrap();
    g.value(l).item()
}

/// Cross entropy of `s·cos θ` computed with plain loops.
pub fn scaled_cosine_ce(emb: &Tensor, w: &Tensor, labels: &[usize], s: f64) -> f64 {
    let (n, d) = (emb.shape()[0], emb.shape()[1]);
    let c = w.shape()[1];
    let col_norm: Vec<f64> = (0..c)
        .map(|j| (0..d).map(|i| w.data()[i * c + j].powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &emb.data()[r * d..(r + 1) * d];
        let rn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let logits: Vec<f64> = (0..c)
            .map(|j| s * (0..d).map(|i| row[i] * w.data()[i * c + j]).sum::<f64>() / (rn * col_norm[j]))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / n as f64
}

/// Largest `|AAM(m = 0) − CE(s·cos θ)|` over `batches` random batches.
pub fn aam_zero_margin_gap(seed: u64, batches: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let emb = uniform(&mut r, &[6, 5], -1.0, 1.0);
        let w = uniform(&mut r, &[5, 8], -1.0, 1.0);
        let labels: Vec<usize> = (0..6).map(|i| (i * 3) % 8).collect();
        worst = worst.max((aam_value(&emb, &w, &labels, 30.0, 0.0) - scaled_cosine_ce(&emb, &w, &labels, 30.0)).abs());
    }
    worst
}

/// Number of random batches, out of `batches`, where the loss at margin
/// 0.2 falls below the loss at margin 0.
pub fn margin_violations(seed: u64, batches: usize) -> usize {
    let mut r = rng(seed);
    (0..batches)
        .filter(|_| {
            let emb = uniform(&mut r, &[4, 6], -1.0, 1.0);
            let w = uniform(&mut r, &[6, 5], -1.0, 1.0);
            let labels: Vec<usize> = (0..4).map(|i| (i * 2 + 1) % 5).collect();
            aam_value(&emb, &w, &labels, 30.0, 0.2) < aam_value(&emb, &w, &labels, 30.0, 0.0)
        })
        .count()
}
