//! Framing, windowing, real FFTs of even length, the paired spectra of
//! `x[n]` and `n·x[n]`, and cepstral smoothing of magnitude spectra.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tapering window applied to each frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Symmetric window of length `n`.
    pub fn coefficients<T: Real>(self, n: usize) -> Vec<T> {
        if n == 1 {
            return vec![T::one()];
        }
        let denom = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
                T::lit(match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                })
            })
            .collect()
    }
}

/// Framing parameters. Defaults are 25 ms / 10 ms at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub preemphasis: f64,
}

impl FrameSpec {
    /// Magnitude path: Hamming window with 0.97 pre-emphasis.
    pub fn fbank() -> Self {
        Self {
            frame_len: 400,
            hop: 160,
            window: WindowKind::Hamming,
            preemphasis: 0.97,
        }
    }

    /// Phase path: Hamming window, no pre-emphasis.
    pub fn modgd() -> Self {
        Self {
            preemphasis: 0.0,
            ..Self::fbank()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidArgument(format!(
                "hop {} must be in 1..={}",
                self.hop, self.frame_len
            )));
        }
        if self.frame_len % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "frame length {} must be even",
                self.frame_len
            )));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err(Error::InvalidArgument(format!(
                "pre-emphasis {} must be in [0, 1)",
                self.preemphasis
            )));
        }
        Ok(())
    }

    /// Number of frames produced from `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.frame_len {
            0
        } else {
            (n - self.frame_len) / self.hop + 1
        }
    }
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self::fbank()
    }
}

/// Splits `x` into overlapping frames, applying pre-emphasis then the window.
///
/// Pre-emphasis uses the sample preceding each frame as history, or zero for
/// the first frame.
pub fn frame_signal<T: Real>(x: &[T], spec: &FrameSpec) -> Result<Vec<Vec<T>>> {
    spec.validate()?;
    if x.len() < spec.frame_len {
        return Err(Error::TooShort {
            len: x.len(),
            needed: spec.frame_len,
        });
    }
    let window = spec.window.coefficients::<T>(spec.frame_len);
    let k = T::lit(spec.preemphasis);
    let frames = (0..spec.frame_count(x.len()))
        .map(|t| {
            let start = t * spec.hop;
            let mut prev = if start == 0 { T::zero() } else { x[start - 1] };
            x[start..start + spec.frame_len]
                .iter()
                .zip(&window)
                .map(|(&s, &w)| {
                    let y = s - k * prev;
                    prev = s;
                    y * w
                })
                .collect()
        })
        .collect();
    Ok(frames)
}

/// One-sided spectrum of a real sequence: `L/2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum<T> {
    pub bins: Vec<Complex<T>>,
}

impl<T: Real> ComplexSpectrum<T> {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Length of the real sequence this spectrum came from.
    pub fn fft_len(&self) -> usize {
        2 * (self.bins.len() - 1)
    }

    pub fn magnitude(&self) -> Vec<T> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    pub fn power(&self) -> Vec<T> {
        self.bins.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn phase(&self) -> Vec<T> {
        self.bins.iter().map(|c| c.arg()).collect()
    }
}

/// Real cepstrum, `L` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Cepstrum<T> {
    pub coefficients: Vec<T>,
}

/// Planned forward and inverse transforms of one even length.
#[derive(Clone)]
pub struct SpectralAnalyzer<T: Real> {
    len: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for SpectralAnalyzer<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralAnalyzer").field("len", &self.len).finish()
    }
}

impl<T: Real> SpectralAnalyzer<T> {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 || len % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "FFT length {len} must be even and at least 2"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    /// `bins[k] = Σ_n x[n]·exp(−i2πkn/L)` for `k = 0..=L/2`. Shorter inputs
    /// are zero padded to the analyzer length.
    pub fn rfft(&self, frame: &[T]) -> Result<ComplexSpectrum<T>> {
        if frame.len() > self.len {
            return Err(Error::InvalidArgument(format!(
                "frame of {} samples exceeds FFT length {}",
                frame.len(),
                self.len
            )));
        }
        let mut buf: Vec<Complex<T>> = frame.iter().map(|&v| Complex::new(v, T::zero())).collect();
        buf.resize(self.len, Complex::new(T::zero(), T::zero()));
        self.forward.process(&mut buf);
        buf.truncate(self.bins());
        Ok(ComplexSpectrum { bins: buf })
    }

    /// Spectra of the frame and of the index-weighted frame `n·x[n]`.
    pub fn stft_pair(&self, frame: &[T]) -> Result<(ComplexSpectrum<T>, ComplexSpectrum<T>)> {
        let x = self.rfft(frame)?;
        let weighted: Vec<T> = frame
            .iter()
            .enumerate()
            .map(|(n, &v)| T::from_usize_lossy(n) * v)
            .collect();
        let y = self.rfft(&weighted)?;
        Ok((x, y))
    }

    /// Real cepstrum of `log(|X| + floor_eps)`.
    pub fn real_cepstrum(&self, spectrum: &ComplexSpectrum<T>, floor_eps: T) -> Result<Cepstrum<T>> {
        self.check_bins(spectrum)?;
        let log_mag: Vec<T> = spectrum.bins.iter().map(|c| (c.norm() + floor_eps).ln()).collect();
        let mut buf = self.mirror(&log_mag);
        self.inverse.process(&mut buf);
        let scale = T::one() / T::from_usize_lossy(self.len);
        Ok(Cepstrum {
            coefficients: buf.iter().map(|c| c.re * scale).collect(),
        })
    }

    /// Smoothed magnitude envelope `|S|` obtained by low-quefrency liftering of
    /// the real cepstrum of `log(|X| + floor_eps)`.
    ///
    /// Quefrencies with `min(q, L − q) < lifter_len` are kept; the boundary
    /// quefrency `lifter_len` contributes once (half weight on each mirrored
    /// side), so `lifter_len = L/2` reproduces `|X| + floor_eps`.
    pub fn cepstral_envelope(
        &self,
        spectrum: &ComplexSpectrum<T>,
        lifter_len: usize,
        floor_eps: T,
    ) -> Result<Vec<T>> {
        let half = self.len / 2;
        if lifter_len == 0 || lifter_len > half {
            return Err(Error::InvalidArgument(format!(
                "lifter length {lifter_len} must be in 1..={half}"
            )));
        }
        let cep = self.real_cepstrum(spectrum, floor_eps)?;
        let half_weight = T::lit(0.5);
        let mut buf: Vec<Complex<T>> = cep
            .coefficients
            .iter()
            .enumerate()
            .map(|(q, &c)| {
                let fold = q.min(self.len - q);
                let w = if fold < lifter_len {
                    T::one()
                } else if fold == lifter_len {
                    if fold == half {
                        T::one()
                    } else {
                        half_weight
                    }
                } else {
                    T::zero()
                };
                Complex::new(c * w, T::zero())
            })
            .collect();
        self.forward.process(&mut buf);
        Ok(buf[..=half].iter().map(|c| c.re.exp()).collect())
    }

    fn check_bins(&self, spectrum: &ComplexSpectrum<T>) -> Result<()> {
        if spectrum.len() != self.bins() {
            return Err(Error::InvalidArgument(format!(
                "spectrum has {} bins, analyzer expects {}",
                spectrum.len(),
                self.bins()
            )));
        }
        Ok(())
    }

    /// Even extension of a one-sided real sequence to the full FFT length.
    fn mirror(&self, one_sided: &[T]) -> Vec<Complex<T>> {
        (0..self.len)
            .map(|k| {
                let idx = if k <= self.len / 2 { k } else { self.len - k };
                Complex::new(one_sided[idx], T::zero())
            })
            .collect()
    }
}

/// Real FFT of an even-length sequence.
pub fn rfft<T: Real>(frame: &[T]) -> Result<ComplexSpectrum<T>> {
    SpectralAnalyzer::new(frame.len())?.rfft(frame)
}

/// Spectra of `x[n]` and `n·x[n]`, both of length `frame.len()`.
pub fn stft_pair<T: Real>(frame: &[T]) -> Result<(ComplexSpectrum<T>, ComplexSpectrum<T>)> {
    SpectralAnalyzer::new(frame.len())?.stft_pair(frame)
}

/// See [`SpectralAnalyzer::cepstral_envelope`].
pub fn cepstral_envelope<T: Real>(
    spectrum: &ComplexSpectrum<T>,
    lifter_len: usize,
    floor_eps: T,
) -> Result<Vec<T>> {
    if spectrum.len() < 2 {
        return Err(Error::InvalidArgument("spectrum needs at least 2 bins".into()));
    }
    SpectralAnalyzer::new(spectrum.fft_len())?.cepstral_envelope(spectrum, lifter_len, floor_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(L²) DFT used as an independent reference.
    fn dft(x: &[f64]) -> Vec<Complex<f64>> {
        let l = x.len();
        (0..=l / 2)
            .map(|k| {
                x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (n, &v)| {
                    let ang = -2.0 * std::f64::consts::PI * ((k * n) % l) as f64 / l as f64;
                    acc + Complex::new(ang.cos(), ang.sin()) * v
                })
            })
            .collect()
    }

    fn random_frame(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
        (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn frame_counts() {
        let spec = FrameSpec::fbank();
        assert_eq!(frame_signal(&vec![0.1f64; 1200], &spec).unwrap().len(), 6);
        assert_eq!(frame_signal(&vec![0.1f64; 400], &spec).unwrap().len(), 1);
        assert!(matches!(
            frame_signal(&vec![0.1f64; 399], &spec),
            Err(Error::TooShort { len: 399, needed: 400 })
        ));
    }

    #[test]
    fn preemphasis_uses_preceding_sample() {
        let spec = FrameSpec {
            frame_len: 4,
            hop: 2,
            window: WindowKind::Rectangular,
            preemphasis: 0.5,
        };
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let frames = frame_signal(&x, &spec).unwrap();
        assert_eq!(frames[0], vec![1.0, 1.5, 2.0, 2.5]);
        assert_eq!(frames[1], vec![3.0 - 1.0, 2.5, 3.0, 3.5]);
    }

    #[test]
    fn invalid_frame_specs() {
        let odd = FrameSpec {
            frame_len: 401,
            ..FrameSpec::fbank()
        };
        assert!(odd.validate().is_err());
        let hop = FrameSpec {
            hop: 0,
            ..FrameSpec::fbank()
        };
        assert!(hop.validate().is_err());
    }

    #[test]
    fn impulse_and_constant_spectra() {
        let mut delta = vec![0.0f64; 400];
        delta[0] = 1.0;
        let s = rfft(&delta).unwrap();
        assert_eq!(s.len(), 201);
        assert!(s.bins.iter().all(|c| (c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12));

        let s = rfft(&vec![1.0f64; 400]).unwrap();
        assert!((s.bins[0].re - 400.0).abs() < 1e-9 && s.bins[0].im.abs() < 1e-9);
        assert!(s.bins[1..].iter().all(|c| c.norm() < 1e-9));
    }

    #[test]
    fn rfft_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &l in &[2usize, 4, 10, 400] {
            for _ in 0..16 {
                let x = random_frame(&mut rng, l);
                let fast = rfft(&x).unwrap();
                let slow = dft(&x);
                let err = fast
                    .bins
                    .iter()
                    .zip(&slow)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(err < 1e-9, "L={l}: {err}");
            }
        }
        let many: Vec<Vec<f64>> = (0..64).map(|_| random_frame(&mut rng, 400)).collect();
        for x in &many {
            let err = rfft(x)
                .unwrap()
                .bins
                .iter()
                .zip(dft(x))
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn odd_length_is_rejected() {
        assert!(rfft(&[1.0f64, 2.0, 3.0]).is_err());
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &l in &[2usize, 10, 256, 400] {
            let x = random_frame(&mut rng, l);
            let s = rfft(&x).unwrap();
            let p = s.power();
            let inner: f64 = p[1..l / 2].iter().sum();
            let freq = (p[0] + 2.0 * inner + p[l / 2]) / l as f64;
            let time: f64 = x.iter().map(|v| v * v).sum();
            assert!((freq - time).abs() < 1e-9, "L={l}");
        }
    }

    #[test]
    fn stft_pair_of_shifted_impulse() {
        let l = 400;
        let k = 37;
        let mut frame = vec![0.0f64; l];
        frame[k] = 1.0;
        let (x, y) = stft_pair(&frame).unwrap();
        for (j, (xb, yb)) in x.bins.iter().zip(&y.bins).enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (j * k) as f64 / l as f64;
            let e = Complex::new(ang.cos(), ang.sin());
            assert!((xb - e).norm() < 1e-9);
            assert!((yb - e * k as f64).norm() < 1e-9);
        }
        let (x, y) = stft_pair(&vec![0.0f64; l]).unwrap();
        assert!(x.bins.iter().chain(&y.bins).all(|c| c.norm() == 0.0));
    }

    /// `Y = i·dX/dω`, checked against a five-point derivative of an 8x
    /// zero-padded spectrum.
    #[test]
    fn weighted_spectrum_is_frequency_derivative() {
        let l = 400;
        let pad = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let window = WindowKind::Hamming.coefficients::<f64>(l);
        let frame: Vec<f64> = random_frame(&mut rng, l).iter().zip(&window).map(|(a, w)| a * w).collect();
        let (_, y) = stft_pair(&frame).unwrap();
        let mut padded = frame.clone();
        padded.resize(l * pad, 0.0);
        let dense = rfft(&padded).unwrap().bins;
        let n = l * pad;
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let at = |i: isize| {
            let idx = i.rem_euclid(n as isize) as usize;
            if idx <= n / 2 {
                dense[idx]
            } else {
                dense[n - idx].conj()
            }
        };
        let max_y = y.bins.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for k in 0..=l / 2 {
            let i = (k * pad) as isize;
            let d = (at(i - 2) - at(i - 1) * 8.0 + at(i + 1) * 8.0 - at(i + 2)) / (12.0 * h);
            let approx = Complex::new(0.0, 1.0) * d;
            worst = worst.max((approx - y.bins[k]).norm());
        }
        assert!(worst / max_y < 1e-2, "relative deviation {}", worst / max_y);
    }

    #[test]
    fn flat_spectrum_is_its_own_envelope() {
        let spec = ComplexSpectrum {
            bins: vec![Complex::new(0.0, 2.5f64); 201],
        };
        let env = cepstral_envelope(&spec, 30, 1e-10).unwrap();
        assert!(env.iter().all(|v| (v - (2.5 + 1e-10)).abs() < 1e-9));
    }

    #[test]
    fn full_band_lifter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_frame(&mut rng, 400);
        let s = rfft(&x).unwrap();
        let env = cepstral_envelope(&s, 200, 1e-10).unwrap();
        for (e, m) in env.iter().zip(s.magnitude()) {
            assert!((e - (m + 1e-10)).abs() < 1e-6 * (1.0 + m));
        }
        assert!(cepstral_envelope(&s, 201, 1e-10).is_err());
        assert!(cepstral_envelope(&s, 0, 1e-10).is_err());
    }

    #[test]
    fn envelope_removes_fast_ripple() {
        let l = 400;
        let bins = l / 2 + 1;
        let envelope: Vec<f64> = (0..bins)
            .map(|k| {
                let w = 2.0 * std::f64::consts::PI * k as f64 / l as f64;
                (1.2 * (w * 3.0).cos() + 0.6 * (w * 7.0).cos() + 0.3).exp()
            })
            .collect();
        let spec = ComplexSpectrum {
            bins: envelope
                .iter()
                .enumerate()
                .map(|(k, &e)| {
                    let w = 2.0 * std::f64::consts::PI * k as f64 / l as f64;
                    let ripple = (0.5 * (w * 80.0).cos()).exp();
                    Complex::new(e * ripple, 0.0)
                })
                .collect(),
        };
        let est = cepstral_envelope(&spec, 30, 1e-10).unwrap();
        let worst = est
            .iter()
            .zip(&envelope)
            .map(|(a, b)| (a - b).abs() / b)
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "max relative error {worst}");
    }

    #[test]
    fn envelope_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let analyzer = SpectralAnalyzer::<f64>::new(400).unwrap();
        for scale in [0.0, 1e-8, 1.0, 1e4] {
            let x: Vec<f64> = random_frame(&mut rng, 400).iter().map(|v| v * scale).collect();
            let s = analyzer.rfft(&x).unwrap();
            let env = analyzer.cepstral_envelope(&s, 30, 1e-10).unwrap();
            assert!(env.iter().all(|v| *v > 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn single_precision_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_frame(&mut rng, 400);
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let a = rfft(&x).unwrap();
        let b = rfft(&x32).unwrap();
        for (p, q) in a.bins.iter().zip(&b.bins) {
            assert!((p.re - q.re as f64).abs() < 1e-3 && (p.im - q.im as f64).abs() < 1e-3);
        }
    }
}
