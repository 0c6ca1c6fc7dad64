//! Command-line front end. Each subcommand is a plain function so the whole
//! pipeline can also be driven from code and tests.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio_io::{
    parse_manifest, parse_trials, read_text, read_wav, resolve_path, segment_training, write_wav, Manifest, ManifestEntry,
    Trial, TrialList,
};
use crate::error::{Error, Result};
use crate::features::{compute_fbank, compute_modgd, write_features, FeatureKind, FeatureMatrix, ModgdParams};
use crate::model::{predict, train, FusionModel, ModelConfig, TrainItem};
use crate::scoring::{
    cosine, decision_fuse, eer_trials, min_dcf_trials, parse_labels, parse_score_matrix, top1_accuracy, DcfParams,
    ScoreSet,
};
use crate::synth::synth_dataset;
use crate::tensor::{read_checkpoint, write_checkpoint, ParamStore};

#[derive(Debug, Parser)]
#[command(name = "magphase", version, about = "Magnitude and phase speaker features, fusion models and scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic speaker corpus with manifest and trials.
    Synth(SynthArgs),
    /// Compute FBank or MODGD feature files for every manifest entry.
    Extract(ExtractArgs),
    /// Train a model on the utterances of a manifest.
    Train(TrainArgs),
    /// Write one embedding per manifest entry.
    Embed(EmbedArgs),
    /// Cosine-score a trial list.
    Score(ScoreArgs),
    /// Compute EER / minDCF or Top-1 accuracy.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
    #[arg(long, default_value_t = 10)]
    pub utts: usize,
    /// Utterance length in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub kind: FeatureKind,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "lifter-len")]
    pub lifter_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreMode {
    /// One embedding file from a single-feature model.
    Single,
    /// Two embedding files (MODGD first, then FBank) fused at score level.
    DecisionFuse,
    /// One embedding file from a jointly trained fusion model.
    FeatureFuse,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub mode: ScoreMode,
    /// Weight of the MODGD scores in decision fusion.
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding files.
    #[arg(required = true)]
    pub embeddings: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, requires = "scores")]
    pub trials: Option<PathBuf>,
    #[arg(long, requires = "trials")]
    pub scores: Option<PathBuf>,
    #[arg(long = "score-matrix", requires = "labels")]
    pub score_matrix: Option<PathBuf>,
    #[arg(long, requires = "score_matrix")]
    pub labels: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Dispatches a parsed command line, writing progress and reports to `log`.
pub fn run(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let m = cmd_synth(a.speakers, a.utts, a.duration, a.seed, &a.out)?;
            say(log, &format!("wrote {} utterances to {}", m.len(), a.out.display()))
        }
        Command::Extract(a) => {
            let mut params = ModgdParams::default();
            params.alpha = a.alpha.unwrap_or(params.alpha);
            params.gamma = a.gamma.unwrap_or(params.gamma);
            params.lifter_len = a.lifter_len.unwrap_or(params.lifter_len);
            let list = cmd_extract(a.kind, &a.manifest, &a.out, &params)?;
            say(log, &format!("wrote {} {} files, index {}", list.len(), a.kind.name(), a.out.display()))
        }
        Command::Train(a) => {
            let mut config = ModelConfig::load(&a.config)?;
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            let summary = cmd_train(&config, &a.manifest, &a.out, log)?;
            say(log, &format!("final train_top1 {:.2}", summary.final_top1))
        }
        Command::Embed(a) => {
            let config = ModelConfig::load(&a.config)?;
            let table = cmd_embed(&config, &a.checkpoint, &a.manifest)?;
            write_text(&a.out, &table.to_text())?;
            say(log, &format!("wrote {} embeddings to {}", table.entries.len(), a.out.display()))
        }
        Command::Score(a) => {
            let trials = parse_trials(&a.trials)?;
            let tables = a.embeddings.iter().map(EmbeddingTable::read).collect::<Result<Vec<_>>>()?;
            let scores = cmd_score(a.mode, a.ratio, &trials, &tables)?;
            scores.write(&a.out)?;
            say(log, &format!("wrote {} scores to {}", scores.len(), a.out.display()))
        }
        Command::Evaluate(a) => {
            let trial_scores = match (&a.trials, &a.scores) {
                (Some(t), Some(s)) => Some((parse_trials(t)?, ScoreSet::<f64>::read(s)?)),
                _ => None,
            };
            let identification = match (&a.score_matrix, &a.labels) {
                (Some(m), Some(l)) => Some((
                    parse_score_matrix::<f64>(&read_text(m)?, &m.display().to_string())?,
                    parse_labels(&read_text(l)?, &l.display().to_string())?,
                )),
                _ => None,
            };
            if trial_scores.is_none() && identification.is_none() {
                return Err(Error::InvalidArgument(
                    "give --trials with --scores, or --score-matrix with --labels".into(),
                ));
            }
            let report = cmd_evaluate(trial_scores.as_ref(), identification.as_ref())?;
            if let Some(out) = &a.out {
                write_text(out, &report.to_text())?;
            }
            log.write_all(report.to_text().as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn say(log: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(log, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `spkNN/uttNN.wav` files plus `manifest.txt` and `trials.txt` under
/// `out`. Trials pair the first utterance of every speaker with every other
/// utterance in the corpus.
pub fn cmd_synth(n_speakers: usize, utts: usize, duration_s: f64, seed: u64, out: &Path) -> Result<Manifest> {
    let data = synth_dataset(n_speakers, utts, duration_s, seed)?;
    let mut manifest = Manifest::default();
    for u in &data {
        let speaker = format!("spk{:02}", u.speaker);
        let rel = format!("{speaker}/utt{:02}.wav", u.index);
        create_dir(&out.join(&speaker))?;
        write_wav(out.join(&rel), &u.wave)?;
        manifest.entries.push(ManifestEntry {
            speaker_id: speaker,
            path: rel,
        });
    }
    write_text(&out.join("manifest.txt"), &manifest.to_text())?;
    write_text(&out.join("trials.txt"), &enrollment_trials(&manifest).to_text())?;
    Ok(manifest)
}

/// First utterance of each speaker versus every other utterance.
pub fn enrollment_trials(manifest: &Manifest) -> TrialList {
    let mut enrolled: Vec<&ManifestEntry> = Vec::new();
    for e in &manifest.entries {
        if !enrolled.iter().any(|x| x.speaker_id == e.speaker_id) {
            enrolled.push(e);
        }
    }
    let mut trials = Vec::new();
    for enroll in &enrolled {
        for test in manifest.entries.iter().filter(|t| t.path != enroll.path) {
            trials.push(Trial {
                is_target: test.speaker_id == enroll.speaker_id,
                enroll_ref: enroll.path.clone(),
                test_ref: test.path.clone(),
            });
        }
    }
    TrialList { trials }
}

/// Features of one whole utterance.
pub fn extract_one(kind: FeatureKind, samples: &[f64], params: &ModgdParams) -> Result<FeatureMatrix<f64>> {
    match kind {
        FeatureKind::Fbank192 => compute_fbank(samples),
        FeatureKind::Modgd201 => compute_modgd(samples, params),
    }
}

/// Output file of one manifest entry: the entry path flattened into a name.
pub fn feature_file_name(entry_path: &str, kind: FeatureKind) -> String {
    let stem = entry_path.strip_suffix(".wav").unwrap_or(entry_path);
    let flat: String = stem
        .chars()
        .map(|c| if c == '/' || c == '\\' { '_' } else { c })
        .collect();
    format!("{flat}.{}.mpf", kind.name())
}

/// Writes one `MPF1` file per manifest entry and an index
/// `<kind>.list` (`speaker file` lines) into `out`. Utterances are processed
/// on all available cores; output names depend only on the manifest.
pub fn cmd_extract(kind: FeatureKind, manifest_path: &Path, out: &Path, params: &ModgdParams) -> Result<Manifest> {
    params.validate()?;
    let manifest = parse_manifest(manifest_path)?;
    create_dir(out)?;
    let work = |e: &ManifestEntry| -> Result<ManifestEntry> {
        let wave = read_wav::<f64>(resolve_path(manifest_path, &e.path))?;
        let feats = extract_one(kind, wave.samples(), params)?.cast::<f32>();
        let name = feature_file_name(&e.path, kind);
        write_features(out.join(&name), &feats)?;
        Ok(ManifestEntry {
            speaker_id: e.speaker_id.clone(),
            path: name,
        })
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = manifest.entries.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<ManifestEntry>>> = std::thread::scope(|s| {
        let handles: Vec<_> = manifest
            .entries
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(work).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction worker panicked")).collect()
    });
    let mut index = Manifest::default();
    for r in results {
        index.entries.extend(r?);
    }
    write_text(&out.join(format!("{}.list", kind.name())), &index.to_text())?;
    Ok(index)
}

/// Cuts every manifest utterance into training segments and computes the
/// features the configured fusion mode needs.
pub fn load_training_items(config: &ModelConfig, manifest_path: &Path) -> Result<(Vec<TrainItem>, Vec<String>)> {
    let manifest = parse_manifest(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let labels = manifest.labels();
    let mut items = Vec::new();
    for (e, &label) in manifest.entries.iter().zip(&labels) {
        let wave = read_wav::<f64>(resolve_path(manifest_path, &e.path))?;
        for seg in segment_training(&wave)? {
            items.push(segment_item(config, label, &seg.samples)?);
        }
    }
    Ok((items, manifest.speakers()))
}

fn segment_item(config: &ModelConfig, label: usize, samples: &[f64]) -> Result<TrainItem> {
    let feats = |on: bool, kind| -> Result<Option<FeatureMatrix<f32>>> {
        on.then(|| extract_one(kind, samples, &config.modgd).map(|m| m.cast()))
            .transpose()
    };
    Ok(TrainItem {
        label,
        fbank: feats(config.fusion.uses_fbank(), FeatureKind::Fbank192)?,
        modgd: feats(config.fusion.uses_modgd(), FeatureKind::Modgd201)?,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub losses: Vec<f64>,
    /// Worst attention row-sum deviation over all steps.
    pub max_row_deviation: f64,
    /// Train-mode batch accuracy per pass over the data, in percent.
    pub epoch_top1: Vec<f64>,
    /// Eval-mode accuracy on the whole training segments, in percent.
    pub final_top1: f64,
}

/// Trains on pre-computed items, logging `step`/`loss` lines and a
/// `train_top1` line after every pass over the data.
pub fn train_items(model: &mut FusionModel, items: &[TrainItem], log: &mut dyn Write) -> Result<TrainSummary> {
    let steps_per_epoch = items.len().div_ceil(model.config.batch_size.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(1));
    let mut epoch_top1 = Vec::new();
    let (mut correct, mut seen) = (0usize, 0usize);
    let mut io_err = None;
    let batch = model.config.batch_size.min(items.len());
    let reports = train(model, items, &mut rng, |step, r| {
        correct += r.correct;
        seen += batch;
        let mut line = format!("step {} loss {:.6}", step + 1, r.loss);
        if (step + 1) % steps_per_epoch == 0 {
            let pct = 100.0 * correct as f64 / seen as f64;
            epoch_top1.push(pct);
            line.push_str(&format!("\nepoch {} train_top1 {pct:.2}", epoch_top1.len()));
            (correct, seen) = (0, 0);
        }
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io("<stdout>", e));
    }
    let predictions = predict(model, items)?;
    let hits = predictions.iter().zip(items).filter(|(p, it)| **p == it.label).count();
    Ok(TrainSummary {
        losses: reports.iter().map(|r| r.loss).collect(),
        max_row_deviation: reports.iter().map(|r| r.max_row_deviation()).fold(0.0, f64::max),
        epoch_top1,
        final_top1: 100.0 * hits as f64 / items.len() as f64,
    })
}

/// Trains from a WAV manifest and writes the checkpoint.
pub fn cmd_train(config: &ModelConfig, manifest_path: &Path, out: &Path, log: &mut dyn Write) -> Result<TrainSummary> {
    let (items, speakers) = load_training_items(config, manifest_path)?;
    let mut model = FusionModel::new(config, speakers.len())?;
    let summary = train_items(&mut model, &items, log)?;
    write_checkpoint(out, &model.store)?;
    Ok(summary)
}

/// Rebuilds a model from its config and stored weights; the class count
/// comes from the classifier shape.
pub fn load_model(config: &ModelConfig, store: &ParamStore) -> Result<FusionModel> {
    let classes = store
        .expect("cls.weight")?
        .shape()
        .get(1)
        .copied()
        .ok_or_else(|| Error::Checkpoint("cls.weight must be a matrix".into()))?;
    let mut model = FusionModel::new(config, classes)?;
    model.store.load_from(store)?;
    Ok(model)
}

/// Eval-mode embedding of every manifest utterance, unsegmented.
pub fn cmd_embed(config: &ModelConfig, checkpoint: &Path, manifest_path: &Path) -> Result<EmbeddingTable> {
    let model = load_model(config, &read_checkpoint(checkpoint)?)?;
    let manifest = parse_manifest(manifest_path)?;
    let mut table = EmbeddingTable::default();
    for e in &manifest.entries {
        let wave = read_wav::<f64>(resolve_path(manifest_path, &e.path))?;
        let item = segment_item(config, 0, wave.samples())?;
        let vector = model.extract_embedding(item.fbank.as_ref(), item.modgd.as_ref())?;
        table.entries.push(EmbeddingEntry {
            speaker_id: e.speaker_id.clone(),
            key: e.path.clone(),
            vector,
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingEntry {
    pub speaker_id: String,
    /// Manifest path of the utterance; trial lists refer to it.
    pub key: String,
    pub vector: Vec<f64>,
}

/// Text table, one `speaker key v1 … vD` line per utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub entries: Vec<EmbeddingEntry>,
}

impl EmbeddingTable {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&e.speaker_id);
            s.push(' ');
            s.push_str(&e.key);
            for v in &e.vector {
                s.push_str(&format!(" {v:?}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let mut fields = line.split_whitespace();
            let (Some(speaker), Some(key)) = (fields.next(), fields.next()) else {
                return Err(err("expected `speaker key v1 … vD`".into()));
            };
            let vector = fields
                .map(|t| t.parse::<f64>().map_err(|_| err(format!("expected a number, got {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if vector.is_empty() {
                return Err(err("embedding has no components".into()));
            }
            entries.push(EmbeddingEntry {
                speaker_id: speaker.to_string(),
                key: key.to_string(),
                vector,
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse_str(&read_text(path)?, &path.display().to_string())
    }

    pub fn lookup(&self) -> HashMap<&str, &[f64]> {
        self.entries.iter().map(|e| (e.key.as_str(), e.vector.as_slice())).collect()
    }
}

/// Cosine score of every trial against one embedding table.
pub fn score_trials(trials: &TrialList, table: &EmbeddingTable) -> Result<ScoreSet<f64>> {
    let map = table.lookup();
    let get = |key: &str| {
        map.get(key)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no embedding for {key}")))
    };
    let scores = trials
        .trials
        .iter()
        .map(|t| cosine(get(&t.enroll_ref)?, get(&t.test_ref)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreSet::new(scores))
}

/// `single` and `feature-fuse` take one table; `decision-fuse` takes the
/// MODGD table then the FBank table and mixes their scores with `ratio`.
pub fn cmd_score(mode: ScoreMode, ratio: f64, trials: &TrialList, tables: &[EmbeddingTable]) -> Result<ScoreSet<f64>> {
    match (mode, tables) {
        (ScoreMode::Single | ScoreMode::FeatureFuse, [table]) => score_trials(trials, table),
        (ScoreMode::DecisionFuse, [modgd, fbank]) => {
            let s_g = score_trials(trials, modgd)?;
            let s_f = score_trials(trials, fbank)?;
            Ok(ScoreSet::new(decision_fuse(&s_g.scores, &s_f.scores, ratio)?))
        }
        (mode, _) => Err(Error::InvalidArgument(format!(
            "{mode:?} scoring takes {} embedding file(s), got {}",
            if mode == ScoreMode::DecisionFuse { 2 } else { 1 },
            tables.len()
        ))),
    }
}

/// Key-value evaluation report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub eer: Option<f64>,
    pub min_dcf: Option<f64>,
    pub top1: Option<f64>,
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [("eer", self.eer), ("min_dcf", self.min_dcf), ("top1", self.top1)] {
            if let Some(v) = v {
                s.push_str(&format!("{k}={v:.6}\n"));
            }
        }
        s
    }
}

pub fn cmd_evaluate(
    trial_scores: Option<&(TrialList, ScoreSet<f64>)>,
    identification: Option<&(Vec<Vec<f64>>, Vec<usize>)>,
) -> Result<Report> {
    let mut report = Report::default();
    if let Some((trials, scores)) = trial_scores {
        report.eer = Some(eer_trials(scores, trials)?);
        report.min_dcf = Some(min_dcf_trials(scores, trials, DcfParams::default())?);
    }
    if let Some((matrix, labels)) = identification {
        report.top1 = Some(top1_accuracy(matrix, labels)?);
    }
    Ok(report)
}
