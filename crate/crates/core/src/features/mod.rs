//! Network inputs: 192-dim FBank (log mel + Δ + ΔΔ, CMVN) and 201-dim
//! standardized modified group delay, plus the `MPF1` feature file format.

mod fbank;
mod io;
mod modgd;

pub use fbank::{
    cmvn, compute_fbank, delta, hz_to_mel, mel_to_hz, FbankExtractor, MelFilter, MelFilterbank,
    FBANK_DIM, N_MELS,
};
pub use io::{decode_features, encode_features, read_features, write_features};
pub use modgd::{compute_group_delay, compute_modgd, ModgdExtractor, ModgdParams, MODGD_DIM};

use crate::dsp::FrameSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Horizontal concatenation.
    pub fn hstack(parts: &[&Matrix<T>]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::InvalidArgument("hstack row counts differ".into()));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }
}

impl<T: Real> Matrix<T> {
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Which network input a [`FeatureMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Fbank192,
    Modgd201,
}

impl FeatureKind {
    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Fbank192 => FBANK_DIM,
            FeatureKind::Modgd201 => MODGD_DIM,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::Fbank192 => 1,
            FeatureKind::Modgd201 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(FeatureKind::Fbank192),
            2 => Some(FeatureKind::Modgd201),
            _ => None,
        }
    }

    pub fn frame_spec(self) -> FrameSpec {
        match self {
            FeatureKind::Fbank192 => FrameSpec::fbank(),
            FeatureKind::Modgd201 => FrameSpec::modgd(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Fbank192 => "fbank",
            FeatureKind::Modgd201 => "modgd",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbank" | "fbank192" => Ok(FeatureKind::Fbank192),
            "modgd" | "modgd201" => Ok(FeatureKind::Modgd201),
            other => Err(Error::InvalidArgument(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// `T × F` features of one utterance, frames along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    values: Matrix<T>,
    kind: FeatureKind,
    frame_spec: FrameSpec,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn new(values: Matrix<T>, kind: FeatureKind, frame_spec: FrameSpec) -> Result<Self> {
        if values.cols() != kind.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} features need {} columns, got {}",
                kind.name(),
                kind.dim(),
                values.cols()
            )));
        }
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self {
            values,
            kind,
            frame_spec,
        })
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn frame_spec(&self) -> &FrameSpec {
        &self.frame_spec
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn cast<U: Real>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            values: self.values.cast(),
            kind: self.kind,
            frame_spec: self.frame_spec,
        }
    }

    /// Frames `start..start + len`.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames() || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {start}+{len} outside {} frames",
                self.frames()
            )));
        }
        let cols = self.dim();
        let data = self.values.data()[start * cols..(start + len) * cols].to_vec();
        Ok(Self {
            values: Matrix::new(len, cols, data)?,
            kind: self.kind,
            frame_spec: self.frame_spec,
        })
    }
}
