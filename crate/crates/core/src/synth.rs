//! Seeded synthetic speakers for desk-scale experiments.
//!
//! A speaker is a glottal pulse train at its own pitch driven through its
//! own formant resonators, so identity shows up both in the fine phase
//! structure (pitch) and in the magnitude envelope (formants).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio_io::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const F0_RANGE: (f64, f64) = (80.0, 300.0);
const FORMANT_BANDS: [(f64, f64); 3] = [(300.0, 900.0), (900.0, 2400.0), (2400.0, 3800.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpeakerSpec {
    pub f0: f64,
    /// `(center, bandwidth)` pairs in Hz.
    pub formants: Vec<(f64, f64)>,
    /// Relative standard deviation of the per-utterance pitch.
    pub jitter: f64,
    pub seed: u64,
}

impl SynthSpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(F0_RANGE.0..=F0_RANGE.1).contains(&self.f0) {
            return Err(Error::InvalidArgument(format!("f0 {} Hz outside [80, 300]", self.f0)));
        }
        if self.formants.iter().any(|&(c, b)| !(c > 0.0 && c < 8000.0 && b > 0.0)) {
            return Err(Error::InvalidArgument("formant centers must lie in (0, 8000) Hz".into()));
        }
        if !(0.0..0.2).contains(&self.jitter) {
            return Err(Error::InvalidArgument(format!("jitter {} outside [0, 0.2)", self.jitter)));
        }
        Ok(())
    }

    /// Speaker `index` of `count`; pitches are stratified over the allowed
    /// range so that speakers stay apart.
    pub fn generate(index: usize, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
        let lo = F0_RANGE.0 + 10.0;
        let span = (F0_RANGE.1 - 20.0 - lo) / count.max(1) as f64;
        let f0 = lo + span * (index as f64 + rng.gen_range(0.2..0.8));
        let formants = FORMANT_BANDS
            .iter()
            .map(|&(a, b)| (rng.gen_range(a..b), rng.gen_range(60.0..160.0)))
            .collect();
        Self {
            f0,
            formants,
            jitter: 0.02,
            seed: rng.gen(),
        }
    }

    /// One utterance of `duration_s` seconds; `utt` selects the
    /// per-utterance variation.
    pub fn utterance(&self, utt: usize, duration_s: f64) -> Result<Waveform<f64>> {
        self.validate()?;
        let fs = SAMPLE_RATE as f64;
        let n = (duration_s * fs).round() as usize;
        if n == 0 {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (utt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let unit = Normal::new(0.0, 1.0).unwrap();
        let f0 = (self.f0 * (1.0 + self.jitter * unit.sample(&mut rng))).clamp(F0_RANGE.0, F0_RANGE.1);
        let vibrato_rate = rng.gen_range(3.0..6.0);
        let vibrato_phase = rng.gen_range(0.0..std::f64::consts::TAU);

        // Pulse train with slow pitch modulation.
        let mut source = vec![0.0; n];
        let mut phase = rng.gen_range(0.0..1.0);
        for (i, s) in source.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let inst = f0 * (1.0 + 0.01 * (std::f64::consts::TAU * vibrato_rate * t + vibrato_phase).sin());
            phase += inst / fs;
            if phase >= 1.0 {
                phase -= 1.0;
                *s = 1.0;
            }
        }

        // Cascade of two-pole resonators.
        let mut y = source;
        for &(center, bw) in &self.formants {
            let r = (-std::f64::consts::PI * bw / fs).exp();
            let theta = std::f64::consts::TAU * center / fs;
            let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
            let gain = 1.0 - r;
            let (mut y1, mut y2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let out = gain * *v + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = out;
                *v = out;
            }
        }

        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let noise = Normal::new(0.0, 0.003).unwrap();
        let samples = y.iter().map(|v| 0.5 * v / peak + noise.sample(&mut rng)).collect();
        Waveform::new(samples, SAMPLE_RATE)
    }
}

/// One generated utterance.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub speaker: usize,
    pub index: usize,
    pub wave: Waveform<f64>,
}

/// `n_speakers × utts_per_speaker` utterances, deterministic in `seed`.
pub fn synth_dataset(n_speakers: usize, utts_per_speaker: usize, duration_s: f64, seed: u64) -> Result<Vec<SynthUtterance>> {
    if n_speakers < 2 {
        return Err(Error::InvalidArgument("need at least two speakers".into()));
    }
    let mut out = Vec::with_capacity(n_speakers * utts_per_speaker);
    for s in 0..n_speakers {
        let spec = SynthSpeakerSpec::generate(s, n_speakers, seed);
        for u in 0..utts_per_speaker {
            out.push(SynthUtterance {
                speaker: s,
                index: u,
                wave: spec.utterance(u, duration_s)?,
            });
        }
    }
    Ok(out)
}
