//! Cosine scoring, score-level fusion and verification / identification
//! metrics.
//!
//! Threshold convention: a trial is accepted when its score is `>= t`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::audio_io::{read_text, TrialList};
use crate::error::{Error, Result};
use crate::Real;

/// `aᵀb / (‖a‖‖b‖)`.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine", &[a.len()], &[b.len()]));
    }
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Enrolled speaker embeddings, one row per speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrollDb<T> {
    ids: Vec<String>,
    rows: Vec<Vec<T>>,
}

impl<T: Real> EnrollDb<T> {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<T>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::shape("enroll_db", &[ids.len()], &[rows.len()]));
        }
        let dim = rows.first().ok_or(Error::Empty("enrollment database"))?.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::shape("enroll_db", &[dim], &[r.len()]));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("enrolled embeddings must be finite".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidArgument(format!("speaker id {dup} enrolled twice")));
        }
        Ok(Self { ids, rows })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Per-speaker scores of one test speaker: the cosine against every
/// enrolled row, averaged over the test speaker's `M` utterances.
pub fn score_identification<T: Real>(test_utts: &[Vec<T>], db: &EnrollDb<T>) -> Result<Vec<T>> {
    if test_utts.is_empty() {
        return Err(Error::Empty("test utterances"));
    }
    let m = T::from_usize_lossy(test_utts.len());
    db.rows
        .iter()
        .map(|row| {
            let total = test_utts.iter().map(|e| cosine(e, row)).sum::<Result<T>>()?;
            Ok(total / m)
        })
        .collect()
}

/// `r·s_g + (1 − r)·s_f`. The endpoints return the corresponding input
/// unchanged.
pub fn decision_fuse<T: Real>(s_g: &[T], s_f: &[T], r: T) -> Result<Vec<T>> {
    if s_g.len() != s_f.len() {
        return Err(Error::shape("decision_fuse", &[s_g.len()], &[s_f.len()]));
    }
    if !(r >= T::zero() && r <= T::one()) {
        return Err(Error::InvalidArgument(format!("fusion ratio must be in [0, 1], got {r}")));
    }
    if r == T::one() {
        return Ok(s_g.to_vec());
    }
    if r == T::zero() {
        return Ok(s_f.to_vec());
    }
    Ok(s_g.iter().zip(s_f).map(|(&g, &f)| r * g + (T::one() - r) * f).collect())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Real>(row: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in row.iter().enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Percentage of rows whose argmax is the true index.
pub fn top1_accuracy<T: Real>(score_matrix: &[Vec<T>], true_ids: &[usize]) -> Result<f64> {
    if score_matrix.is_empty() {
        return Err(Error::Empty("score matrix"));
    }
    if score_matrix.len() != true_ids.len() {
        return Err(Error::shape("top1_accuracy", &[score_matrix.len()], &[true_ids.len()]));
    }
    let hits = score_matrix
        .iter()
        .zip(true_ids)
        .filter(|(row, &id)| argmax(row) == Some(id))
        .count();
    Ok(100.0 * hits as f64 / score_matrix.len() as f64)
}

/// Detection cost weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.05,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// `(FAR, FRR)` at every distinct score used as a threshold, in ascending
/// order, followed by the reject-all point at `+∞`.
fn roc_sweep<T: Real>(scores: &[T], is_target: &[bool]) -> Result<Vec<(T, T)>> {
    if scores.len() != is_target.len() {
        return Err(Error::shape("roc_sweep", &[scores.len()], &[is_target.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let n_tgt = is_target.iter().filter(|&&t| t).count();
    let n_non = is_target.len() - n_tgt;
    if n_tgt == 0 || n_non == 0 {
        return Err(Error::MissingTrialClass);
    }
    let mut pairs: Vec<(T, bool)> = scores.iter().copied().zip(is_target.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (nt, nn) = (T::from_usize_lossy(n_tgt), T::from_usize_lossy(n_non));
    // Walking upward, everything below the current threshold is rejected.
    let (mut tgt_below, mut non_below) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        points.push((
            T::from_usize_lossy(n_non - non_below) / nn,
            T::from_usize_lossy(tgt_below) / nt,
        ));
        let t = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == t {
            if pairs[i].1 {
                tgt_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push((T::zero(), T::one()));
    Ok(points)
}

/// Equal error rate, interpolated linearly between the two sweep points
/// where `FAR − FRR` changes sign.
pub fn eer<T: Real>(scores: &[T], is_target: &[bool]) -> Result<T> {
    let points = roc_sweep(scores, is_target)?;
    let mut prev = points[0];
    for &(far, frr) in &points {
        let d = far - frr;
        if d <= T::zero() {
            let d_prev = prev.0 - prev.1;
            if d == T::zero() || d_prev == d {
                return Ok(far);
            }
            let lambda = d_prev / (d_prev - d);
            return Ok(prev.0 + lambda * (far - prev.0));
        }
        prev = (far, frr);
    }
    unreachable!("sweep ends at FAR = 0, FRR = 1")
}

/// Minimum normalized detection cost over the threshold sweep.
pub fn min_dcf<T: Real>(scores: &[T], is_target: &[bool], params: DcfParams) -> Result<T> {
    let DcfParams { p_target, c_miss, c_fa } = params;
    if !(0.0..=1.0).contains(&p_target) || !(c_miss > 0.0) || !(c_fa > 0.0) {
        return Err(Error::InvalidArgument(format!("bad detection cost parameters {params:?}")));
    }
    let w_miss = T::lit(c_miss * p_target);
    let w_fa = T::lit(c_fa * (1.0 - p_target));
    let norm = w_miss.min(w_fa);
    let points = roc_sweep(scores, is_target)?;
    let best = points
        .iter()
        .map(|&(far, frr)| w_miss * frr + w_fa * far)
        .fold(T::infinity(), T::min);
    Ok(best / norm)
}

/// Trial-list convenience wrappers.
pub fn eer_trials<T: Real>(scores: &ScoreSet<T>, trials: &TrialList) -> Result<T> {
    scores.check_aligned(trials)?;
    eer(&scores.scores, &trials.labels())
}

pub fn min_dcf_trials<T: Real>(scores: &ScoreSet<T>, trials: &TrialList, params: DcfParams) -> Result<T> {
    scores.check_aligned(trials)?;
    min_dcf(&scores.scores, &trials.labels(), params)
}

/// Scores aligned line by line with a trial list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet<T> {
    pub scores: Vec<T>,
}

impl<T: Real> ScoreSet<T> {
    pub fn new(scores: Vec<T>) -> Self {
        Self { scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn check_aligned(&self, trials: &TrialList) -> Result<()> {
        if self.scores.len() != trials.trials.len() {
            return Err(Error::InvalidArgument(format!(
                "{} scores for {} trials",
                self.scores.len(),
                trials.trials.len()
            )));
        }
        Ok(())
    }

    /// One value per line, printed with full round-trip precision.
    pub fn to_text(&self) -> String {
        self.scores.iter().map(|s| format!("{s:?}\n")).collect()
    }
}

impl<T: Real + FromStr> ScoreSet<T> {
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut scores = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            scores.push(parse_value(line, origin, i + 1)?);
        }
        Ok(Self { scores })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse_str(&read_text(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_value<T: FromStr>(token: &str, origin: &str, line: usize) -> Result<T> {
    token.parse().map_err(|_| Error::Parse {
        path: origin.to_string(),
        line,
        message: format!("expected a number, got {token:?}"),
    })
}

/// Whitespace-separated score rows, one test item per line.
pub fn parse_score_matrix<T: Real + FromStr>(text: &str, origin: &str) -> Result<Vec<Vec<T>>> {
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| parse_value(tok, origin, i + 1))
            .collect::<Result<Vec<T>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    message: format!("row has {} columns, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One class index per line.
pub fn parse_labels(text: &str, origin: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_value(l.trim(), origin, i + 1))
        .collect()
}
