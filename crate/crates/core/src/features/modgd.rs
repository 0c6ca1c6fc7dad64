use crate::dsp::{frame_signal, ComplexSpectrum, FrameSpec, SpectralAnalyzer};
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::fbank::standardize_columns;
use super::{FeatureKind, FeatureMatrix, Matrix};

pub const MODGD_DIM: usize = 201;
const MODGD_FFT_LEN: usize = 400;
const STANDARDIZE_VAR_FLOOR: f64 = 1e-8;

/// Modified group delay parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModgdParams {
    /// Compression exponent applied to `|τ|`.
    pub alpha: f64,
    /// Exponent on the smoothed envelope in the denominator.
    pub gamma: f64,
    /// Cepstral lifter cutoff used to smooth `|X|`.
    pub lifter_len: usize,
    /// Denominator floor relative to the largest denominator in the frame.
    pub denom_floor: f64,
    /// Additive floor inside the log of the cepstrum.
    pub log_floor: f64,
}

impl Default for ModgdParams {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            gamma: 0.9,
            lifter_len: 30,
            denom_floor: 1e-8,
            log_floor: 1e-10,
        }
    }
}

impl ModgdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} must be in (0, 1]", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {} must be in (0, 1]", self.gamma)));
        }
        if !(self.denom_floor > 0.0) || !(self.log_floor > 0.0) {
            return Err(Error::InvalidArgument("floors must be positive".into()));
        }
        Ok(())
    }
}

/// Group delay with the cepstrally smoothed, `γ`-compressed denominator:
/// `τ(ω) = (X_R·Y_R + X_I·Y_I) / max(|S|^{2γ}, floor · max_ω |S|^{2γ})`.
pub fn compute_group_delay<T: Real>(
    x: &ComplexSpectrum<T>,
    y: &ComplexSpectrum<T>,
    params: &ModgdParams,
) -> Result<Vec<T>> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument("spectrum needs at least 2 bins".into()));
    }
    let analyzer = SpectralAnalyzer::new(x.fft_len())?;
    group_delay_with(&analyzer, x, y, params)
}

fn group_delay_with<T: Real>(
    analyzer: &SpectralAnalyzer<T>,
    x: &ComplexSpectrum<T>,
    y: &ComplexSpectrum<T>,
    params: &ModgdParams,
) -> Result<Vec<T>> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::shape("group_delay", &[x.len()], &[y.len()]));
    }
    let envelope = analyzer.cepstral_envelope(x, params.lifter_len, T::lit(params.log_floor))?;
    let two_gamma = T::lit(2.0 * params.gamma);
    let denom: Vec<T> = envelope.iter().map(|s| s.powf(two_gamma)).collect();
    let peak = denom.iter().copied().fold(T::zero(), T::max);
    let floor = peak * T::lit(params.denom_floor);
    Ok(x
        .bins
        .iter()
        .zip(&y.bins)
        .zip(&denom)
        .map(|((xb, yb), &d)| {
            let num = xb.re * yb.re + xb.im * yb.im;
            let d = d.max(floor);
            if d > T::zero() {
                num / d
            } else {
                T::zero()
            }
        })
        .collect())
}

/// `sign(τ)·|τ|^α`, with zero mapped to zero.
pub fn compress<T: Real>(tau: T, alpha: T) -> T {
    if tau == T::zero() {
        T::zero()
    } else {
        tau.signum() * tau.abs().powf(alpha)
    }
}

/// Reusable MODGD front end.
#[derive(Debug, Clone)]
pub struct ModgdExtractor<T: Real> {
    pub frame_spec: FrameSpec,
    pub params: ModgdParams,
    analyzer: SpectralAnalyzer<T>,
}

impl<T: Real> ModgdExtractor<T> {
    pub fn new(params: ModgdParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            frame_spec: FrameSpec::modgd(),
            params,
            analyzer: SpectralAnalyzer::new(MODGD_FFT_LEN)?,
        })
    }

    /// Per-frame group delay `τ` (before compression).
    pub fn group_delay(&self, samples: &[T]) -> Result<Matrix<T>> {
        let frames = frame_signal(samples, &self.frame_spec)?;
        let rows = frames
            .iter()
            .map(|f| {
                let (x, y) = self.analyzer.stft_pair(f)?;
                group_delay_with(&self.analyzer, &x, &y, &self.params)
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    /// Compressed group delay `τ_m` before standardization.
    pub fn compressed(&self, samples: &[T]) -> Result<Matrix<T>> {
        let tau = self.group_delay(samples)?;
        let alpha = T::lit(self.params.alpha);
        let data = tau.data().iter().map(|&v| compress(v, alpha)).collect();
        Matrix::new(tau.rows(), tau.cols(), data)
    }

    pub fn compute(&self, samples: &[T]) -> Result<FeatureMatrix<T>> {
        let tau_m = self.compressed(samples)?;
        let floor = T::lit(STANDARDIZE_VAR_FLOOR);
        let standardized = standardize_columns(&tau_m, |var| var.max(floor).sqrt());
        FeatureMatrix::new(standardized, FeatureKind::Modgd201, self.frame_spec)
    }
}

/// 201-dim standardized MODGD features of a waveform or segment.
pub fn compute_modgd<T: Real>(samples: &[T], params: &ModgdParams) -> Result<FeatureMatrix<T>> {
    ModgdExtractor::new(*params)?.compute(samples)
}
