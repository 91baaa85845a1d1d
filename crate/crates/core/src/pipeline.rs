//! End-to-end dataset stages: build a manifest from film directories,
//! export finalized clips as training data, and train or evaluate on it.
//!
//! Input layout, one directory per film under `input_root`:
//!
//! ```text
//! <film_id>/film.wav        mixed film audio (or an already separated music stem)
//! <film_id>/film.mp4        optional video, recorded but never decoded
//! <film_id>/tracks/*.wav    candidate soundtrack files
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::wav::{read_wav, write_wav};
use crate::audio::{peak_normalize, resample, truncate, AudioBuffer, ChromaMatrix, ChromaParams};
use crate::error::{invalid, io_err, Error, Result};
use crate::manifest::{ClipRecord, Manifest, ReviewStatus};
use crate::matcher::assign;
use crate::metrics::{self, EvalOptions, EvalReport};
use crate::model::data::{
    synthetic_video_dataset, MuLawTokenizer, PrecomputedVideo, StubVideo, TextEmbeddingTable,
    TrainSample, VideoEncoder,
};
use crate::model::decoder::{DecoderConfig, ToyDecoder, TrainMode};
use crate::model::train::{
    conditioning_fixture, mean_loss, save_checkpoint, train, write_history_csv, TrainConfig,
};
use crate::prompts::{
    build_prompt, segment_captions, summarize_caption, Captioner, RetryPolicy, Summarizer,
};
use crate::segmenter::{
    detect_nonsilent, extract_segments, music_gate, CommandSeparator, ConstantClassifier, Interval,
    MusicEventClassifier, PassThroughSeparator, SourceSeparator, TonalityClassifier,
    DEFAULT_GATE_THRESHOLD, DEFAULT_MAX_GAP, DEFAULT_MIN_LEN, DEFAULT_SILENCE_WEIGHT,
};

pub const FILM_AUDIO: &str = "film.wav";
pub const TRACKS_DIR: &str = "tracks";
const VIDEO_EXTENSIONS: [&str; 4] = ["mp4", "mkv", "webm", "mov"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub silence_weight: f64,
    pub music_gate: f64,
    pub min_len: f64,
    pub max_gap: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            silence_weight: DEFAULT_SILENCE_WEIGHT,
            music_gate: DEFAULT_GATE_THRESHOLD,
            min_len: DEFAULT_MIN_LEN,
            max_gap: DEFAULT_MAX_GAP,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.silence_weight > 0.0 && self.silence_weight < 1.0) {
            return Err(invalid(format!(
                "silence_weight {} must be in (0, 1)",
                self.silence_weight
            )));
        }
        if !(0.0..=1.0).contains(&self.music_gate) {
            return Err(invalid(format!(
                "music_gate {} must be in [0, 1]",
                self.music_gate
            )));
        }
        if !(self.min_len >= 0.0 && self.max_gap >= 0.0) {
            return Err(invalid("min_len and max_gap must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Tonality { window_seconds: f64 },
    Constant { prob: f64, window_seconds: f64 },
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Tonality {
            window_seconds: 1.0,
        }
    }
}

impl ClassifierConfig {
    pub fn instantiate(&self) -> Box<dyn MusicEventClassifier> {
        match *self {
            ClassifierConfig::Tonality { window_seconds } => {
                Box::new(TonalityClassifier { window_seconds })
            }
            ClassifierConfig::Constant {
                prob,
                window_seconds,
            } => Box::new(ConstantClassifier {
                prob,
                window_seconds,
            }),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeparatorConfig {
    #[default]
    PassThrough,
    Command {
        program: String,
        args: Vec<String>,
    },
}

impl SeparatorConfig {
    pub fn instantiate(&self) -> Box<dyn SourceSeparator + Sync> {
        match self {
            SeparatorConfig::PassThrough => Box::new(PassThroughSeparator),
            SeparatorConfig::Command { program, args } => Box::new(CommandSeparator {
                program: program.clone(),
                args: args.clone(),
            }),
        }
    }
}

/// External captioning and summarization services. Keys are read from the
/// named environment variables, never from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub captioner_url: Option<String>,
    pub summarizer_url: Option<String>,
    pub captioner_key_env: Option<String>,
    pub summarizer_key_env: Option<String>,
    pub summarizer_model: Option<String>,
    pub timeout_seconds: u64,
    pub exclude_quality: bool,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            captioner_url: None,
            summarizer_url: None,
            captioner_key_env: None,
            summarizer_key_env: None,
            summarizer_model: None,
            timeout_seconds: 30,
            exclude_quality: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input_root: PathBuf,
    pub manifest: PathBuf,
    pub work_dir: PathBuf,
    pub thresholds: Thresholds,
    pub chroma: ChromaParams,
    pub target_sample_rate: u32,
    pub clip_seconds: f64,
    pub classifier: ClassifierConfig,
    pub separator: SeparatorConfig,
    pub clients: ClientConfig,
    pub seed: u64,
    /// Worker threads for per-film stages; defaults to the number of cores.
    pub threads: Option<usize>,
    pub train: Option<TrainConfig>,
    pub decoder: Option<DecoderConfig>,
    pub eval: EvalOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_root: PathBuf::from("films"),
            manifest: PathBuf::from("manifest.jsonl"),
            work_dir: PathBuf::from("work"),
            thresholds: Thresholds::default(),
            chroma: ChromaParams::default(),
            target_sample_rate: 32_000,
            clip_seconds: 30.0,
            classifier: ClassifierConfig::default(),
            separator: SeparatorConfig::default(),
            clients: ClientConfig::default(),
            seed: 0,
            threads: None,
            train: None,
            decoder: None,
            eval: EvalOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.target_sample_rate == 0 || !(self.clip_seconds > 0.0) {
            return Err(invalid(
                "target_sample_rate and clip_seconds must be positive",
            ));
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        Ok(())
    }

    /// Reads TOML or JSON, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text)
                .or_else(|_| toml::from_str(&text))
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilmFailure {
    pub film_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub films_processed: Vec<String>,
    pub films_skipped: Vec<String>,
    pub clips_written: usize,
    pub manifest_records: usize,
    pub failures: Vec<FilmFailure>,
}

fn film_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Hash of a film's media and every setting that influences its records.
pub fn build_key(film_dir: &Path, cfg: &PipelineConfig) -> Result<String> {
    let mut h = Sha256::new();
    let film = film_dir.join(FILM_AUDIO);
    h.update(fs::read(&film).map_err(io_err(&film))?);
    let tracks = film_dir.join(TRACKS_DIR);
    if tracks.is_dir() {
        for t in wav_files(&tracks)? {
            h.update(file_stem(&t).as_bytes());
            h.update(fs::read(&t).map_err(io_err(&t))?);
        }
    }
    let settings = serde_json::to_vec(&(
        &cfg.thresholds,
        &cfg.chroma,
        &cfg.classifier,
        &cfg.separator,
    ))?;
    h.update(settings);
    Ok(hex::encode(h.finalize()))
}

/// Runs separation, segmentation, gating and matching for one film.
pub fn process_film(
    film_dir: &Path,
    cfg: &PipelineConfig,
    classifier: &dyn MusicEventClassifier,
    separator: &dyn SourceSeparator,
) -> Result<Vec<ClipRecord>> {
    let film_id = film_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| invalid(format!("{} has no directory name", film_dir.display())))?;
    let film_audio = film_dir.join(FILM_AUDIO);
    if !film_audio.is_file() {
        return Err(invalid(format!("{film_id}: missing {FILM_AUDIO}")));
    }
    let tracks_dir = film_dir.join(TRACKS_DIR);
    if !tracks_dir.is_dir() {
        return Err(invalid(format!(
            "{film_id}: missing {TRACKS_DIR}/ directory"
        )));
    }
    let work = cfg.work_dir.join(&film_id);
    let clip_dir = work.join("clips");
    fs::create_dir_all(&clip_dir).map_err(io_err(&clip_dir))?;

    let stem_path = separator.music_stem(&film_audio, &work)?;
    let stem = read_wav(&stem_path)?;
    let th = &cfg.thresholds;
    let segments = extract_segments(
        &detect_nonsilent(&stem, th.silence_weight)?,
        th.min_len,
        th.max_gap,
    )?;
    log::info!("{film_id}: {} candidate segments", segments.len());
    if segments.is_empty() {
        return Ok(Vec::new());
    }

    let mut tracks: Vec<(String, ChromaMatrix)> = Vec::new();
    let mut track_paths = BTreeMap::new();
    for path in wav_files(&tracks_dir)? {
        let id = file_stem(&path);
        tracks.push((id.clone(), cfg.chroma.compute(&read_wav(&path)?)?));
        track_paths.insert(id, path);
    }
    let video = VIDEO_EXTENSIONS
        .iter()
        .map(|ext| film_dir.join(format!("film.{ext}")))
        .find(|p| p.is_file())
        .map(|p| path_string(&p));

    let mut records = Vec::new();
    for iv in segments {
        let clip = stem.slice_seconds(iv.start, iv.end);
        let (passed, prob) = match music_gate(&clip, classifier, th.music_gate) {
            Ok(r) => r,
            Err(Error::TooShort { .. }) => continue,
            Err(e) => return Err(e),
        };
        if !passed {
            log::debug!(
                "{film_id}: [{:.2}, {:.2}] gated out at {prob:.3}",
                iv.start,
                iv.end
            );
            continue;
        }
        let clip_id = ClipRecord::make_id(&film_id, &iv);
        let mut rec = ClipRecord::new(clip_id.clone(), film_id.clone(), iv);
        rec.mean_music_prob = Some(prob);
        match assign(&cfg.chroma.compute(&clip)?, &tracks) {
            Ok(m) => {
                rec.match_offset_seconds = Some(m.offset_frames as f64 * cfg.chroma.hop_seconds());
                rec.media.matched_track_audio =
                    track_paths.get(&m.track_id).map(|p| path_string(p));
                rec.matched_track = Some(m.track_id);
                rec.match_distance = Some(m.distance);
            }
            Err(Error::NoCandidate) => log::warn!("{clip_id}: no soundtrack long enough to match"),
            Err(e) => return Err(e),
        }
        let clip_path = clip_dir.join(format!("{clip_id}.wav"));
        write_wav(&clip_path, &clip)?;
        rec.media.music_stem = Some(path_string(&clip_path));
        rec.media.clip_video = video.clone();
        records.push(rec);
    }
    Ok(records)
}

fn build_keys_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.work_dir.join("build_keys.json")
}

/// Builds or refreshes the manifest. Films whose inputs and settings are
/// unchanged since the last run are skipped; review fields of re-emitted
/// clips are kept.
pub fn build(
    cfg: &PipelineConfig,
    make_classifier: &(dyn Fn() -> Box<dyn MusicEventClassifier> + Sync),
    separator: &(dyn SourceSeparator + Sync),
) -> Result<BuildReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.work_dir).map_err(io_err(&cfg.work_dir))?;
    let mut manifest = Manifest::load(&cfg.manifest)?;
    let keys_path = build_keys_path(cfg);
    let mut keys: BTreeMap<String, String> = if keys_path.is_file() {
        serde_json::from_slice(&fs::read(&keys_path).map_err(io_err(&keys_path))?)?
    } else {
        BTreeMap::new()
    };

    let run = || -> Vec<(String, Result<(String, Option<Vec<ClipRecord>>)>)> {
        film_dirs(&cfg.input_root)
            .unwrap_or_default()
            .par_iter()
            .map(|dir| {
                let film_id = file_stem(dir);
                let outcome = build_key(dir, cfg).and_then(|key| {
                    if keys.get(&film_id) == Some(&key) {
                        return Ok((key, None));
                    }
                    let classifier = make_classifier();
                    process_film(dir, cfg, classifier.as_ref(), separator).map(|r| (key, Some(r)))
                });
                (film_id, outcome)
            })
            .collect()
    };
    if !cfg.input_root.is_dir() {
        return Err(invalid(format!(
            "input root {} is not a directory",
            cfg.input_root.display()
        )));
    }
    let results = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let mut report = BuildReport::default();
    for (film_id, outcome) in results {
        match outcome {
            Ok((_, None)) => report.films_skipped.push(film_id),
            Ok((key, Some(records))) => {
                let fresh: BTreeSet<&str> = records.iter().map(|r| r.clip_id.as_str()).collect();
                let stale: Vec<String> = manifest
                    .film_records(&film_id)
                    .into_iter()
                    .filter(|r| !fresh.contains(r.clip_id.as_str()))
                    .map(|r| r.clip_id.clone())
                    .collect();
                for id in stale {
                    log::info!("{id}: no longer produced, removed from manifest");
                    manifest.remove(&id);
                }
                report.clips_written += records.len();
                for mut rec in records {
                    if let Some(old) = manifest.get(&rec.clip_id) {
                        rec.mood = old.mood;
                        rec.prompt = old.prompt.clone();
                        rec.review_status = old.review_status;
                        rec.needs_adjudication = old.needs_adjudication;
                    }
                    rec.build_key = Some(key.clone());
                    manifest.upsert(rec);
                }
                keys.insert(film_id.clone(), key);
                report.films_processed.push(film_id);
            }
            Err(e) => {
                log::error!("{film_id}: {e}");
                report.failures.push(FilmFailure {
                    film_id,
                    error: e.to_string(),
                });
            }
        }
    }
    manifest.save(&cfg.manifest)?;
    fs::write(&keys_path, serde_json::to_vec_pretty(&keys)?).map_err(io_err(&keys_path))?;
    report.manifest_records = manifest.len();
    Ok(report)
}

/// One line of the exported training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportEntry {
    pub clip_id: String,
    pub film_id: String,
    pub audio: String,
    pub prompt: String,
    pub mood: crate::prompts::MoodLabel,
    pub video: Option<String>,
    pub source_interval: Interval,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportFailure {
    pub clip_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub exported: Vec<String>,
    pub skipped_unfinalized: usize,
    pub failures: Vec<ExportFailure>,
    pub index: String,
}

pub const EXPORT_INDEX: &str = "train.jsonl";

/// Captioning services used to write prompts during export.
pub struct PromptClients<'a> {
    pub captioner: &'a dyn Captioner,
    pub summarizer: &'a dyn Summarizer,
    pub retry: RetryPolicy,
    pub exclude_quality: bool,
}

fn caption_for(
    track: &AudioBuffer,
    offset: f64,
    clip: &AudioBuffer,
    clients: &PromptClients<'_>,
    seconds: f64,
) -> Result<String> {
    let window = track.slice_seconds(offset, offset + seconds);
    match segment_captions(&window, clients.captioner) {
        Ok(captions) => summarize_caption(
            &captions,
            clients.summarizer,
            clients.exclude_quality,
            &clients.retry,
        ),
        Err(Error::TooShort { .. }) => clients.retry.run(|| clients.captioner.caption(clip)),
        Err(e) => Err(e),
    }
}

fn export_one(
    rec: &ClipRecord,
    cfg: &PipelineConfig,
    audio_dir: &Path,
    clients: &PromptClients<'_>,
) -> Result<(ExportEntry, String)> {
    let mood = rec
        .mood
        .ok_or_else(|| invalid("finalized record has no mood"))?;
    let track_path = rec
        .media
        .matched_track_audio
        .as_deref()
        .ok_or_else(|| invalid("finalized record has no matched track audio"))?;
    let offset = rec.match_offset_seconds.unwrap_or(0.0);
    let track = read_wav(track_path)?;
    let length = rec.source_interval.duration().min(cfg.clip_seconds);
    let clip = track.slice_seconds(offset, offset + length);
    if clip.is_empty() {
        return Err(invalid(format!(
            "offset {offset:.2}s lies beyond the end of {track_path}"
        )));
    }
    let at_rate = truncate(
        &resample(&truncate(&clip, cfg.clip_seconds)?, cfg.target_sample_rate)?,
        cfg.clip_seconds,
    )?;
    let audio = peak_normalize(&at_rate)?;
    let out = audio_dir.join(format!("{}.wav", rec.clip_id));
    write_wav(&out, &audio)?;
    let prompt = match &rec.prompt {
        Some(p) => p.clone(),
        None => build_prompt(
            mood,
            &caption_for(&track, offset, &clip, clients, cfg.clip_seconds)?,
        )?,
    };
    let entry = ExportEntry {
        clip_id: rec.clip_id.clone(),
        film_id: rec.film_id.clone(),
        audio: path_string(&out),
        prompt: prompt.clone(),
        mood,
        video: rec.media.clip_video.clone(),
        source_interval: rec.source_interval,
    };
    Ok((entry, prompt))
}

/// Writes every finalized clip as 32 kHz float WAV plus an index of prompts.
/// Returns the report and the prompts generated for the manifest.
pub fn export(
    manifest: &Manifest,
    cfg: &PipelineConfig,
    out_dir: &Path,
    clients: &PromptClients<'_>,
) -> Result<(ExportReport, BTreeMap<String, String>)> {
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(io_err(&audio_dir))?;
    let mut report = ExportReport::default();
    let mut prompts = BTreeMap::new();
    let index_path = out_dir.join(EXPORT_INDEX);
    let mut index = fs::File::create(&index_path).map_err(io_err(&index_path))?;
    for rec in manifest.records() {
        if rec.review_status != ReviewStatus::Finalized {
            report.skipped_unfinalized += 1;
            continue;
        }
        match export_one(rec, cfg, &audio_dir, clients) {
            Ok((entry, prompt)) => {
                writeln!(index, "{}", serde_json::to_string(&entry)?)
                    .map_err(io_err(&index_path))?;
                prompts.insert(rec.clip_id.clone(), prompt);
                report.exported.push(rec.clip_id.clone());
            }
            Err(e) => {
                log::warn!("{}: export skipped: {e}", rec.clip_id);
                report.failures.push(ExportFailure {
                    clip_id: rec.clip_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    report.index = path_string(&index_path);
    Ok((report, prompts))
}

/// Loads an exported manifest and writes the generated prompts back into it.
pub fn export_manifest_file(
    cfg: &PipelineConfig,
    out_dir: &Path,
    clients: &PromptClients<'_>,
) -> Result<ExportReport> {
    let mut manifest = Manifest::load(&cfg.manifest)?;
    let (report, prompts) = export(&manifest, cfg, out_dir, clients)?;
    for (id, p) in prompts {
        if let Some(r) = manifest.get_mut(&id) {
            r.prompt = Some(p);
        }
    }
    manifest.save(&cfg.manifest)?;
    Ok(report)
}

pub fn read_export_index(dir: &Path) -> Result<Vec<ExportEntry>> {
    let path = dir.join(EXPORT_INDEX);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Tokenizes exported audio and encodes prompts and video for training.
pub fn load_training_set(
    export_dir: &Path,
    tokenizer: &MuLawTokenizer,
    text: &TextEmbeddingTable,
    video: &dyn VideoEncoder,
) -> Result<Vec<TrainSample>> {
    read_export_index(export_dir)?
        .into_iter()
        .map(|e| {
            let tokens = tokenizer.encode(&read_wav(&e.audio)?)?;
            if tokens.is_empty() {
                return Err(invalid(format!("{}: audio produced no tokens", e.clip_id)));
            }
            Ok(TrainSample {
                text: text.encode(&e.prompt),
                video: Some(video.encode(&e.clip_id)?),
                tokens,
                id: e.clip_id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainData {
    /// An export directory; video embeddings come from `video_dir` when given,
    /// otherwise from seeded stand-ins.
    Export {
        dir: PathBuf,
        video_dir: Option<PathBuf>,
    },
    /// The built-in video-conditioning fixture.
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub data: TrainData,
    pub out_dir: PathBuf,
    pub mode: TrainMode,
    #[serde(default)]
    pub decoder: Option<DecoderConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub samples: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub final_val_loss: f64,
    pub checkpoint: String,
    pub history: String,
}

pub fn run_train_job(job: &TrainJob) -> Result<TrainSummary> {
    let (fixture_decoder, fixture_spec, fixture_train) = conditioning_fixture();
    let (samples, default_decoder, default_train) = match &job.data {
        TrainData::Synthetic { seed } => (
            synthetic_video_dataset(&fixture_spec, *seed),
            DecoderConfig {
                seed: *seed,
                ..fixture_decoder
            },
            TrainConfig {
                seed: *seed,
                ..fixture_train
            },
        ),
        TrainData::Export { dir, video_dir } => {
            let decoder = job.decoder.clone().unwrap_or_default();
            let tokenizer = MuLawTokenizer {
                levels: decoder.vocab_size.saturating_sub(1).max(2),
                max_tokens: decoder.max_len,
                ..Default::default()
            };
            let text = TextEmbeddingTable::new(1024, decoder.d_model, decoder.seed);
            let samples = match video_dir {
                Some(d) => {
                    load_training_set(dir, &tokenizer, &text, &PrecomputedVideo { dir: d.clone() })?
                }
                None => {
                    let stub = StubVideo {
                        seed: decoder.seed,
                        tokens: 4,
                        dim: decoder.video_dim,
                    };
                    load_training_set(dir, &tokenizer, &text, &stub)?
                }
            };
            (samples, decoder, TrainConfig::default())
        }
    };
    let decoder = job.decoder.clone().unwrap_or(default_decoder);
    let tcfg = job.train.clone().unwrap_or(default_train);
    let mut model = ToyDecoder::new(decoder)?;
    let report = train(&mut model, &samples, &tcfg, job.mode)?;
    fs::create_dir_all(&job.out_dir).map_err(io_err(&job.out_dir))?;
    let history = job.out_dir.join("history.csv");
    write_history_csv(&history, &report.history)?;
    let checkpoint = job.out_dir.join("checkpoint");
    save_checkpoint(&model, &checkpoint)?;
    let (_, val) = crate::model::train::split_dataset(&samples, tcfg.val_fraction, tcfg.seed)?;
    Ok(TrainSummary {
        samples: samples.len(),
        epochs: report.history.len(),
        best_epoch: report.best_epoch,
        initial_val_loss: report.initial_val_loss,
        best_val_loss: report.best_val_loss,
        final_val_loss: mean_loss(&model, &val)?,
        checkpoint: path_string(&checkpoint),
        history: path_string(&history),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub reference_dir: PathBuf,
    pub generated_dir: PathBuf,
    #[serde(default)]
    pub reference_probs_dir: Option<PathBuf>,
    #[serde(default)]
    pub generated_probs_dir: Option<PathBuf>,
    #[serde(default)]
    pub options: EvalOptions,
}

pub fn run_eval_job(job: &EvalJob) -> Result<EvalReport> {
    let reference = metrics::load_embedding_dir(&job.reference_dir)?;
    let generated = metrics::load_embedding_dir(&job.generated_dir)?;
    let dists = match (&job.reference_probs_dir, &job.generated_probs_dir) {
        (Some(r), Some(g)) => Some((
            metrics::load_distribution_dir(r)?,
            metrics::load_distribution_dir(g)?,
        )),
        (None, None) => None,
        _ => {
            return Err(invalid(
                "class distributions need both a reference and a generated directory",
            ))
        }
    };
    metrics::evaluate(&reference, &generated, dists.as_ref(), &job.options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyJob {
    pub embeddings_dir: PathBuf,
    #[serde(default = "default_survey_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_survey_k() -> usize {
    metrics::DEFAULT_SURVEY_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySelection {
    pub ids: Vec<String>,
    pub k: usize,
    pub seed: u64,
}

pub fn run_survey_job(job: &SurveyJob) -> Result<SurveySelection> {
    let set = metrics::load_embedding_dir(&job.embeddings_dir)?;
    Ok(SurveySelection {
        ids: metrics::kmeans_select(&set, job.k, job.seed)?,
        k: job.k,
        seed: job.seed,
    })
}

/// Convenience for the default build: classifier and separator from config.
pub fn build_from_config(cfg: &PipelineConfig) -> Result<BuildReport> {
    let classifier = cfg.classifier.clone();
    let separator = cfg.separator.instantiate();
    build(cfg, &move || classifier.instantiate(), separator.as_ref())
}
