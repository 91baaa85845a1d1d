//! Review state behind a single writer. Readers take an immutable snapshot;
//! each accepted event is appended to the write-ahead log before the new
//! state becomes visible.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arc_swap::ArcSwap;
use cinetrack_core::manifest::Manifest;
use cinetrack_core::review::{Applied, ReviewError, ReviewEvent, ReviewState};
use parking_lot::Mutex;

use crate::error::ServiceError;

#[derive(Debug, Clone)]
pub struct ReviewConfig {
    pub manifest: PathBuf,
    pub wal: PathBuf,
    pub annotators: [String; 2],
}

impl ReviewConfig {
    /// The log sits next to the manifest unless configured otherwise.
    pub fn default_wal(manifest: &Path) -> PathBuf {
        manifest.with_extension("reviews.jsonl")
    }
}

pub struct ReviewStore {
    config: ReviewConfig,
    snapshot: ArcSwap<ReviewState>,
    writer: Mutex<File>,
}

fn io(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Internal(format!("{}: {e}", path.display()))
}

impl ReviewStore {
    /// Loads the manifest, replays the log over it and rewrites the manifest
    /// so that it reflects the replayed state.
    pub fn open(config: ReviewConfig) -> Result<Self, ServiceError> {
        let state = replay(&config)?;
        if let Some(dir) = config.wal.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        let wal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.wal)
            .map_err(|e| io(&config.wal, e))?;
        Ok(Self {
            config,
            snapshot: ArcSwap::from_pointee(state),
            writer: Mutex::new(wal),
        })
    }

    /// Picks up a manifest rewritten by another stage, such as a rebuild.
    pub fn reload(&self) -> Result<(), ServiceError> {
        let _wal = self.writer.lock();
        self.snapshot.store(Arc::new(replay(&self.config)?));
        Ok(())
    }

    pub fn config(&self) -> &ReviewConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<ReviewState> {
        self.snapshot.load_full()
    }

    pub fn apply(&self, event: ReviewEvent) -> Result<Arc<ReviewState>, ServiceError> {
        let mut wal = self.writer.lock();
        let mut next = ReviewState::clone(&self.snapshot.load());
        if next.apply(event.clone())? == Applied::Unchanged {
            return Ok(self.snapshot.load_full());
        }
        let line =
            serde_json::to_string(&event).map_err(|e| ServiceError::Internal(e.to_string()))?;
        writeln!(wal, "{line}").map_err(|e| io(&self.config.wal, e))?;
        wal.sync_data().map_err(|e| io(&self.config.wal, e))?;
        next.manifest().save(&self.config.manifest)?;
        let next = Arc::new(next);
        self.snapshot.store(next.clone());
        Ok(next)
    }

    pub fn set_prompts(&self, prompts: &BTreeMap<String, String>) -> Result<(), ServiceError> {
        let _wal = self.writer.lock();
        let mut next = ReviewState::clone(&self.snapshot.load());
        for (id, p) in prompts {
            next.set_prompt(id, p.clone());
        }
        next.manifest().save(&self.config.manifest)?;
        self.snapshot.store(Arc::new(next));
        Ok(())
    }
}

fn replay(config: &ReviewConfig) -> Result<ReviewState, ServiceError> {
    let manifest = Manifest::load(&config.manifest)?;
    let mut state = ReviewState::new(config.annotators.clone(), manifest)?;
    if config.wal.exists() {
        let f = File::open(&config.wal).map_err(|e| io(&config.wal, e))?;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| io(&config.wal, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: ReviewEvent = serde_json::from_str(&line).map_err(|e| {
                ServiceError::Internal(format!("{}:{}: {e}", config.wal.display(), i + 1))
            })?;
            if let Err(e) = state.apply(event) {
                tracing::warn!(
                    "{}:{}: event no longer applies: {e}",
                    config.wal.display(),
                    i + 1
                );
            }
        }
    }
    state.manifest().save(&config.manifest)?;
    Ok(state)
}

impl From<ReviewError> for ServiceError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::UnknownClip(_) => ServiceError::NotFound(e.to_string()),
            ReviewError::Conflict(_) => ServiceError::Conflict(e.to_string()),
            ReviewError::UnknownAnnotator(_) | ReviewError::Invalid(_) => {
                ServiceError::Unprocessable(e.to_string())
            }
        }
    }
}
