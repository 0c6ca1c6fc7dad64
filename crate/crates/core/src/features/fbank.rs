use crate::dsp::{frame_signal, FrameSpec, SpectralAnalyzer};
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{FeatureKind, FeatureMatrix, Matrix};

pub const N_MELS: usize = 64;
pub const FBANK_DIM: usize = 3 * N_MELS;
const FBANK_FFT_LEN: usize = 512;
const MEL_LOG_FLOOR: f64 = 1e-10;
const CMVN_VAR_FLOOR: f64 = 1e-8;
const DELTA_WINDOW: usize = 2;

pub fn hz_to_mel(hz: f64) -> Result<f64> {
    if !(hz >= 0.0) {
        return Err(Error::InvalidArgument(format!("frequency {hz} Hz must be non-negative")));
    }
    Ok(2595.0 * (1.0 + hz / 700.0).log10())
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter over FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    pub start_bin: usize,
    pub peak_bin: usize,
    pub end_bin: usize,
    /// Weights for bins `start_bin..=end_bin`.
    pub weights: Vec<f64>,
    pub left_mel: f64,
    pub center_mel: f64,
    pub right_mel: f64,
}

impl MelFilter {
    /// Triangle response at an arbitrary frequency; 1 at the center.
    pub fn response(&self, hz: f64) -> f64 {
        let m = hz_to_mel(hz.max(0.0)).unwrap();
        if m <= self.left_mel || m >= self.right_mel {
            0.0
        } else if m <= self.center_mel {
            (m - self.left_mel) / (self.center_mel - self.left_mel)
        } else {
            (self.right_mel - m) / (self.right_mel - self.center_mel)
        }
    }

    pub fn center_hz(&self) -> f64 {
        mel_to_hz(self.center_mel)
    }
}

/// Triangular filters equally spaced on the mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub filters: Vec<MelFilter>,
    pub n_fft: usize,
    pub sample_rate: f64,
    pub f_low: f64,
    pub f_high: f64,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, n_fft: usize, sample_rate: f64, f_low: f64, f_high: f64) -> Result<Self> {
        if n_filters == 0 || f_high <= f_low || f_high > sample_rate / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "bad filterbank: {n_filters} filters over {f_low}..{f_high} Hz at {sample_rate} Hz"
            )));
        }
        let mel_low = hz_to_mel(f_low)?;
        let mel_high = hz_to_mel(f_high)?;
        let step = (mel_high - mel_low) / (n_filters + 1) as f64;
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate / n_fft as f64;
        let filters = (0..n_filters)
            .map(|i| {
                let left_mel = mel_low + i as f64 * step;
                let center_mel = left_mel + step;
                let right_mel = center_mel + step;
                let mut filter = MelFilter {
                    start_bin: 0,
                    peak_bin: (mel_to_hz(center_mel) / bin_hz).round() as usize,
                    end_bin: 0,
                    weights: Vec::new(),
                    left_mel,
                    center_mel,
                    right_mel,
                };
                let support: Vec<(usize, f64)> = (0..n_bins)
                    .map(|k| (k, filter.response(k as f64 * bin_hz)))
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                if let (Some(first), Some(last)) = (support.first(), support.last()) {
                    filter.start_bin = first.0;
                    filter.end_bin = last.0;
                    filter.weights = support.iter().map(|&(_, w)| w).collect();
                } else {
                    filter.start_bin = filter.peak_bin;
                    filter.end_bin = filter.peak_bin;
                    filter.weights = vec![0.0];
                }
                filter
            })
            .collect();
        Ok(Self {
            filters,
            n_fft,
            sample_rate,
            f_low,
            f_high,
        })
    }

    /// 64 filters, 0–8000 Hz, over a 512-point FFT at 16 kHz.
    pub fn standard() -> Self {
        Self::new(N_MELS, FBANK_FFT_LEN, 16000.0, 0.0, 8000.0).expect("static filterbank parameters")
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn apply<T: Real>(&self, power: &[T]) -> Vec<T> {
        self.filters
            .iter()
            .map(|f| {
                power[f.start_bin..=f.end_bin]
                    .iter()
                    .zip(&f.weights)
                    .fold(T::zero(), |acc, (&p, &w)| acc + p * T::lit(w))
            })
            .collect()
    }
}

/// Regression deltas over `±window` frames with replicated edges.
pub fn delta<T: Real>(m: &Matrix<T>, window: usize) -> Matrix<T> {
    let (rows, cols) = (m.rows(), m.cols());
    let norm = T::lit(2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>());
    let clamp = |t: isize| t.clamp(0, rows as isize - 1) as usize;
    let mut out = Vec::with_capacity(rows * cols);
    for t in 0..rows {
        for c in 0..cols {
            let mut acc = T::zero();
            for n in 1..=window {
                let fwd = m.get(clamp(t as isize + n as isize), c);
                let back = m.get(clamp(t as isize - n as isize), c);
                acc += T::from_usize_lossy(n) * (fwd - back);
            }
            out.push(acc / norm);
        }
    }
    Matrix::new(rows, cols, out).unwrap()
}

/// Per-column mean and variance normalization: `(x − μ) / sqrt(σ² + 1e−8)`.
pub fn cmvn<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    standardize_columns(m, |var| (var + T::lit(CMVN_VAR_FLOOR)).sqrt())
}

pub(super) fn standardize_columns<T: Real>(m: &Matrix<T>, denom: impl Fn(T) -> T) -> Matrix<T> {
    let (rows, cols) = (m.rows(), m.cols());
    let n = T::from_usize_lossy(rows.max(1));
    let mut mean = vec![T::zero(); cols];
    for r in 0..rows {
        for (acc, &v) in mean.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![T::zero(); cols];
    for r in 0..rows {
        for ((acc, &v), &mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let constant: Vec<bool> = (0..cols)
        .map(|c| (1..rows).all(|r| m.get(r, c) == m.get(0, c)))
        .collect();
    let scale: Vec<T> = var
        .iter()
        .zip(&constant)
        .map(|(&v, &flat)| if flat { T::zero() } else { T::one() / denom(v / n) })
        .collect();
    let data = (0..rows)
        .flat_map(|r| {
            m.row(r)
                .iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((&v, &mu), &s)| (v - mu) * s)
                .collect::<Vec<_>>()
        })
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Reusable FBank front end (filterbank and FFT plan built once).
#[derive(Debug, Clone)]
pub struct FbankExtractor<T: Real> {
    pub frame_spec: FrameSpec,
    pub filterbank: MelFilterbank,
    analyzer: SpectralAnalyzer<T>,
}

impl<T: Real> FbankExtractor<T> {
    pub fn new() -> Self {
        Self {
            frame_spec: FrameSpec::fbank(),
            filterbank: MelFilterbank::standard(),
            analyzer: SpectralAnalyzer::new(FBANK_FFT_LEN).expect("512 is a valid FFT length"),
        }
    }

    /// Static log mel energies, `T × 64`, before deltas and CMVN.
    pub fn log_mel(&self, samples: &[T]) -> Result<Matrix<T>> {
        let frames = frame_signal(samples, &self.frame_spec)?;
        let floor = T::lit(MEL_LOG_FLOOR);
        let rows = frames
            .iter()
            .map(|f| {
                let power = self.analyzer.rfft(f)?.power();
                Ok(self.filterbank.apply(&power).into_iter().map(|e| (e + floor).ln()).collect())
            })
            .collect::<Result<Vec<Vec<T>>>>()?;
        Matrix::from_rows(&rows)
    }

    pub fn compute(&self, samples: &[T]) -> Result<FeatureMatrix<T>> {
        let stat = self.log_mel(samples)?;
        let d1 = delta(&stat, DELTA_WINDOW);
        let d2 = delta(&d1, DELTA_WINDOW);
        let stacked = Matrix::hstack(&[&stat, &d1, &d2])?;
        FeatureMatrix::new(cmvn(&stacked), FeatureKind::Fbank192, self.frame_spec)
    }
}

impl<T: Real> Default for FbankExtractor<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// 192-dim FBank features of a waveform or segment.
pub fn compute_fbank<T: Real>(samples: &[T]) -> Result<FeatureMatrix<T>> {
    FbankExtractor::new().compute(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mel_scale() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        assert!((hz_to_mel(1000.0).unwrap() - 999.99).abs() < 0.1);
        assert!((mel_to_hz(hz_to_mel(4321.0).unwrap()) - 4321.0).abs() < 1e-6);
        assert!(hz_to_mel(-1.0).is_err());
    }

    #[test]
    fn filter_shapes() {
        let fb = MelFilterbank::standard();
        assert_eq!(fb.len(), 64);
        for pair in fb.filters.windows(2) {
            assert!(pair[1].center_mel > pair[0].center_mel);
        }
        for f in &fb.filters {
            assert!((f.response(f.center_hz()) - 1.0).abs() < 1e-9);
            assert!(f.response(mel_to_hz(f.left_mel)) < 1e-9);
            assert_eq!(f.response(mel_to_hz(f.right_mel) + 1.0), 0.0);
            assert!(f.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
            assert_eq!(f.weights.len(), f.end_bin - f.start_bin + 1);
        }
        assert!(fb.filters.last().unwrap().end_bin <= 256);
    }

    #[test]
    fn delta_cases() {
        let flat = Matrix::new(5, 2, vec![3.0f64; 10]).unwrap();
        assert!(delta(&flat, 2).data().iter().all(|&v| v == 0.0));

        let ramp = Matrix::new(9, 1, (0..9).map(|t| t as f64).collect()).unwrap();
        let d = delta(&ramp, 2);
        for t in 2..7 {
            assert!((d.get(t, 0) - 1.0).abs() < 1e-12);
        }

        let single = Matrix::new(1, 3, vec![1.0f64, -2.0, 5.0]).unwrap();
        assert!(delta(&single, 2).data().iter().all(|&v| v == 0.0));
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn cmvn_moments_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_matrix(&mut rng, 50, 6);
        let n = cmvn(&m);
        for c in 0..6 {
            let col = n.column(c);
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
        let twice = cmvn(&n);
        for (a, b) in twice.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-6);
        }

        let constant = Matrix::new(4, 1, vec![7.5f64; 4]).unwrap();
        assert!(cmvn(&constant).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_peaks_in_nearest_filter() {
        let samples: Vec<f64> = (0..16000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let ex = FbankExtractor::<f64>::new();
        let stat = ex.log_mel(&samples).unwrap();
        let nearest = ex
            .filterbank
            .filters
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.center_hz() - 1000.0).abs().total_cmp(&(b.1.center_hz() - 1000.0).abs()))
            .unwrap()
            .0;
        for t in 0..stat.rows() {
            let row = stat.row(t);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn silence_maps_to_zero() {
        let fm = compute_fbank(&vec![0.0f64; 16000]).unwrap();
        assert_eq!(fm.dim(), 192);
        assert!(fm.values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_second_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..16000).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let fm = compute_fbank(&x).unwrap();
        assert_eq!((fm.frames(), fm.dim()), (98, 192));
        assert!(compute_fbank(&x[..399]).is_err());
    }

    proptest! {
        #[test]
        fn cmvn_output_is_normalized(seed in 0u64..1000, rows in 2usize..40, cols in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = cmvn(&random_matrix(&mut rng, rows, cols));
            for c in 0..cols {
                let col = n.column(c);
                let mean = col.iter().sum::<f64>() / rows as f64;
                prop_assert!(mean.abs() < 1e-9);
            }
        }
    }
}
