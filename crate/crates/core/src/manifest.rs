//! The dataset manifest: one JSON clip record per line, keyed by clip id.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Result};
use crate::prompts::MoodLabel;
use crate::segmenter::Interval;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    #[default]
    Pending,
    MappingRejected,
    Annotated,
    Finalized,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MediaPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_video: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub music_stem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_track_audio: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub film_id: String,
    pub source_interval: Interval,
    pub matched_track: Option<String>,
    pub match_distance: Option<f64>,
    /// Where the clip starts inside the matched track.
    #[serde(default)]
    pub match_offset_seconds: Option<f64>,
    pub mean_music_prob: Option<f64>,
    pub mood: Option<MoodLabel>,
    pub prompt: Option<String>,
    pub review_status: ReviewStatus,
    #[serde(default)]
    pub needs_adjudication: bool,
    #[serde(default)]
    pub media: MediaPaths,
    /// Content hash of the inputs and settings that produced this record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build_key: Option<String>,
}

impl ClipRecord {
    pub fn new(
        clip_id: impl Into<String>,
        film_id: impl Into<String>,
        source_interval: Interval,
    ) -> Self {
        Self {
            clip_id: clip_id.into(),
            film_id: film_id.into(),
            source_interval,
            matched_track: None,
            match_distance: None,
            match_offset_seconds: None,
            mean_music_prob: None,
            mood: None,
            prompt: None,
            review_status: ReviewStatus::Pending,
            needs_adjudication: false,
            media: MediaPaths::default(),
            build_key: None,
        }
    }

    /// Stable id derived from the film and the clip's start time in milliseconds.
    pub fn make_id(film_id: &str, interval: &Interval) -> String {
        format!("{film_id}_{:08}", (interval.start * 1000.0).round() as u64)
    }

    pub fn clear_review(&mut self) {
        self.review_status = ReviewStatus::Pending;
        self.mood = None;
        self.needs_adjudication = false;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    records: BTreeMap<String, ClipRecord>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads a JSONL manifest; a missing file is an empty manifest.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new());
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ClipRecord = serde_json::from_str(line)
                .map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            m.upsert(rec);
        }
        Ok(m)
    }

    /// Writes to a sibling temporary file and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            for rec in self.records.values() {
                let line = serde_json::to_string(rec)?;
                writeln!(f, "{line}").map_err(io_err(&tmp))?;
            }
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn upsert(&mut self, record: ClipRecord) -> Option<ClipRecord> {
        self.records.insert(record.clip_id.clone(), record)
    }

    pub fn get(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.records.get(clip_id)
    }

    pub fn get_mut(&mut self, clip_id: &str) -> Option<&mut ClipRecord> {
        self.records.get_mut(clip_id)
    }

    pub fn remove(&mut self, clip_id: &str) -> Option<ClipRecord> {
        self.records.remove(clip_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ClipRecord> {
        self.records.values()
    }

    pub fn records_mut(&mut self) -> impl Iterator<Item = &mut ClipRecord> {
        self.records.values_mut()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn film_records(&self, film_id: &str) -> Vec<&ClipRecord> {
        self.records
            .values()
            .filter(|r| r.film_id == film_id)
            .collect()
    }

    pub fn finalized(&self) -> Vec<&ClipRecord> {
        self.records
            .values()
            .filter(|r| r.review_status == ReviewStatus::Finalized)
            .collect()
    }
}
