#![allow(dead_code)]

pub mod grad_suite;
pub mod oracles;

use magphase::tensor::{Graph, Tensor, Var};
use magphase::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so kinks such as ReLU's are never probed.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// `Σ w ⊙ y` with fixed pseudo-random weights, so that no output entry has
/// a structurally zero adjoint.
pub fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = uniform(&mut rng(seed ^ 0xABCD), &shape, 0.5, 1.5);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Largest `|rfft − DFT|` over bins for a random real frame of length `len`,
/// the DFT computed term by term.
pub fn rfft_vs_dft(len: usize, seed: u64) -> f64 {
    use magphase::dsp::SpectralAnalyzer;
    let mut r = rng(seed);
    let x: Vec<f64> = (0..len).map(|_| r.gen_range(-1.0..1.0)).collect();
    let spec = SpectralAnalyzer::<f64>::new(len).unwrap().rfft(&x).unwrap();
    let mut worst: f64 = 0.0;
    for (k, bin) in spec.bins.iter().enumerate() {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &v) in x.iter().enumerate() {
            let w = -std::f64::consts::TAU * ((k * n) % len) as f64 / len as f64;
            re += v * w.cos();
            im += v * w.sin();
        }
        worst = worst.max((bin.re - re).abs()).max((bin.im - im).abs());
    }
    worst
}

/// `(X_R·Y_R + X_I·Y_I) / |X|²` from the library's spectrum pair.
pub fn raw_group_delay(frame: &[f64], fft_len: usize) -> Vec<f64> {
    use magphase::dsp::SpectralAnalyzer;
    let (x, y) = SpectralAnalyzer::<f64>::new(fft_len).unwrap().stft_pair(frame).unwrap();
    x.bins
        .iter()
        .zip(&y.bins)
        .map(|(a, b)| (a.re * b.re + a.im * b.im) / a.norm_sqr())
        .collect()
}

/// Largest deviation from `k` of the group delay of a unit impulse at `k`.
pub fn impulse_group_delay_error(fft_len: usize, k: usize) -> f64 {
    let mut frame = vec![0.0; fft_len];
    frame[k] = 1.0;
    raw_group_delay(&frame, fft_len)
        .iter()
        .map(|t| (t - k as f64).abs())
        .fold(0.0, f64::max)
}

/// Coefficients of `Π (1 − z_k·q⁻¹)` for zeros strictly inside the unit
/// circle (conjugate pairs plus one real zero), i.e. a minimum-phase FIR.
pub fn minimum_phase_frame(seed: u64, pairs: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let mut poly = vec![1.0];
    let mut multiply = |factor: &[f64]| {
        let mut out = vec![0.0; poly.len() + factor.len() - 1];
        for (i, a) in poly.iter().enumerate() {
            for (j, b) in factor.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        poly = out;
    };
    for _ in 0..pairs {
        let radius = r.gen_range(0.3..0.85);
        let angle = r.gen_range(0.2..3.0);
        multiply(&[1.0, -2.0 * radius * f64::cos(angle), radius * radius]);
    }
    multiply(&[1.0, -r.gen_range(-0.8..0.8)]);
    poly
}

/// Negative derivative of the unwrapped phase, by central differences of
/// the DTFT evaluated directly at `ω ± δ`.
pub fn phase_derivative_oracle(frame: &[f64], omega: f64) -> f64 {
    let delta = 1e-5;
    let arg = |w: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &v) in frame.iter().enumerate() {
            re += v * (w * n as f64).cos();
            im -= v * (w * n as f64).sin();
        }
        im.atan2(re)
    };
    let mut d = arg(omega + delta) - arg(omega - delta);
    while d > std::f64::consts::PI {
        d -= std::f64::consts::TAU;
    }
    while d < -std::f64::consts::PI {
        d += std::f64::consts::TAU;
    }
    -d / (2.0 * delta)
}

/// Largest `|τ_lib − τ_oracle|` in samples over all bins of a constructed
/// minimum-phase frame of `fft_len` samples.
pub fn minimum_phase_group_delay_error(seed: u64, fft_len: usize) -> f64 {
    let mut frame = minimum_phase_frame(seed, 4);
    frame.resize(fft_len, 0.0);
    raw_group_delay(&frame, fft_len)
        .iter()
        .enumerate()
        .map(|(k, tau)| {
            let omega = std::f64::consts::TAU * k as f64 / fft_len as f64;
            (tau - phase_derivative_oracle(&frame, omega)).abs()
        })
        .fold(0.0, f64::max)
}
