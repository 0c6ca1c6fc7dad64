//! Magnitude and phase speaker features with co-attention fusion.
//!
//! The signal path ([`audio_io`], [`dsp`], [`features`]) and the metrics in
//! [`scoring`] are generic over [`Real`] (`f32` or `f64`). The differentiable
//! [`tensor`] engine and the [`model`] built on it run in `f64`.

pub mod audio_io;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod features;
pub mod model;
pub mod scoring;
pub mod synth;
mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Waveform64 = audio_io::Waveform<f64>;
pub type Waveform32 = audio_io::Waveform<f32>;
pub type FeatureMatrix64 = features::FeatureMatrix<f64>;
pub type FeatureMatrix32 = features::FeatureMatrix<f32>;
pub type ComplexSpectrum64 = dsp::ComplexSpectrum<f64>;
