//! PCM ingestion, sliding-window segmentation and the text manifests that
//! describe a dataset and its verification trials.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE: u32 = 16_000;

/// Scale between 16-bit integer samples and floats.
const PCM_SCALE: f64 = 32768.0;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("waveform contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: T) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// A fixed-length training window cut from a [`Waveform`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub samples: Vec<T>,
    /// Sample index in the source waveform where this segment starts.
    pub source_offset: usize,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a 16 kHz, 16-bit, mono PCM WAV file. Samples are scaled by 1/32768.
pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

/// Parses an in-memory WAV image; see [`read_wav`].
pub fn parse_wav<T: Real>(bytes: &[u8]) -> Result<Waveform<T>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::NotWave("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        let available = bytes.len() - body;
        match id {
            b"fmt " => {
                if size < 16 || available < 16 {
                    return Err(Error::TruncatedChunk {
                        chunk: "fmt ".into(),
                        declared: size,
                        available,
                    });
                }
                let format_tag = le_u16(bytes, body);
                let channels = le_u16(bytes, body + 2);
                let rate = le_u32(bytes, body + 4);
                let bits = le_u16(bytes, body + 14);
                format = Some((format_tag, channels, rate, bits));
            }
            b"data" => {
                let (format_tag, channels, rate, bits) =
                    format.ok_or(Error::MissingChunk("fmt "))?;
                if format_tag != 1 || bits != 16 {
                    return Err(Error::UnsupportedEncoding {
                        format_tag,
                        bits_per_sample: bits,
                    });
                }
                if channels != 1 {
                    return Err(Error::ChannelCount(channels));
                }
                if rate != SAMPLE_RATE {
                    return Err(Error::SampleRate(rate));
                }
                if size > available {
                    return Err(Error::TruncatedChunk {
                        chunk: "data".into(),
                        declared: size,
                        available,
                    });
                }
                let scale = T::lit(1.0 / PCM_SCALE);
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| T::lit(i16::from_le_bytes([c[0], c[1]]) as f64) * scale)
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(Error::MissingChunk("data"))
}

/// Quantizes a sample to 16-bit PCM, saturating at the integer range.
pub fn quantize_sample<T: Real>(s: T) -> i16 {
    let v = (s.to_f64_lossy() * PCM_SCALE).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Encodes a waveform as a canonical 44-byte-header PCM WAV image.
pub fn encode_wav<T: Real>(w: &Waveform<T>) -> Vec<u8> {
    let data_len = (w.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        out.extend_from_slice(&quantize_sample(s).to_le_bytes());
    }
    out
}

pub fn write_wav<T: Real>(path: impl AsRef<Path>, w: &Waveform<T>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_wav(w)).map_err(|e| Error::io(path, e))
}

/// Cuts `w` into windows of `win_s` seconds every `hop_s` seconds.
///
/// A waveform shorter than one window yields a single window filled by
/// repeating the waveform cyclically.
pub fn segment_sliding<T: Real>(w: &Waveform<T>, win_s: f64, hop_s: f64) -> Result<Vec<Segment<T>>> {
    if w.is_empty() {
        return Err(Error::Empty("waveform"));
    }
    let rate = w.sample_rate() as f64;
    let win = (win_s * rate).round() as usize;
    let hop = (hop_s * rate).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::InvalidArgument(format!(
            "window {win_s}s and hop {hop_s}s must both cover at least one sample"
        )));
    }
    let x = w.samples();
    if x.len() < win {
        let samples = x.iter().copied().cycle().take(win).collect();
        return Ok(vec![Segment {
            samples,
            source_offset: 0,
        }]);
    }
    let count = (x.len() - win) / hop + 1;
    Ok((0..count)
        .map(|i| {
            let start = i * hop;
            Segment {
                samples: x[start..start + win].to_vec(),
                source_offset: start,
            }
        })
        .collect())
}

/// Default training segmentation: 3 s windows with a 1 s hop.
pub fn segment_training<T: Real>(w: &Waveform<T>) -> Result<Vec<Segment<T>>> {
    segment_sliding(w, 3.0, 1.0)
}

/// `(speaker_id, utterance_path)` records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub path: String,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Speaker ids in order of first appearance.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.speaker_id.as_str()))
            .map(|e| e.speaker_id.clone())
            .collect()
    }

    /// Class index of every entry, following [`Manifest::speakers`] order.
    pub fn labels(&self) -> Vec<usize> {
        let speakers = self.speakers();
        self.entries
            .iter()
            .map(|e| speakers.iter().position(|s| *s == e.speaker_id).unwrap())
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {}\n", e.speaker_id, e.path))
            .collect()
    }
}

/// Resolves a manifest or trial path relative to the directory of the list
/// file that mentions it.
pub fn resolve_path(list_file: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        list_file.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    parse_manifest_str(&read_text(path)?, &path.display().to_string())
}

pub fn parse_manifest_str(text: &str, origin: &str) -> Result<Manifest> {
    let mut entries = Vec::new();
    let mut paths = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [speaker, utt] = fields.as_slice() else {
            return Err(err(format!("expected `<speaker_id> <path>`, got {} fields", fields.len())));
        };
        if !paths.insert(utt.to_string()) {
            return Err(err(format!("duplicate path {utt}")));
        }
        entries.push(ManifestEntry {
            speaker_id: speaker.to_string(),
            path: utt.to_string(),
        });
    }
    Ok(Manifest { entries })
}

/// Verification trials.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub is_target: bool,
    pub enroll_ref: String,
    pub test_ref: String,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.trials.iter().map(|t| t.is_target).collect()
    }

    pub fn to_text(&self) -> String {
        self.trials
            .iter()
            .map(|t| format!("{} {} {}\n", t.is_target as u8, t.enroll_ref, t.test_ref))
            .collect()
    }
}

pub fn parse_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    parse_trials_str(&read_text(path)?, &path.display().to_string())
}

pub fn parse_trials_str(text: &str, origin: &str) -> Result<TrialList> {
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [flag, enroll, test] = fields.as_slice() else {
            return Err(err(format!(
                "expected `<0|1> <enroll_path> <test_path>`, got {} fields",
                fields.len()
            )));
        };
        let is_target = match *flag {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("target flag must be 0 or 1, got {other:?}"))),
        };
        trials.push(Trial {
            is_target,
            enroll_ref: enroll.to_string(),
            test_ref: test.to_string(),
        });
    }
    Ok(TrialList { trials })
}
