//! Two-annotator review: mapping inspection and mood labeling in a single
//! submission, with adjudication of disagreements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{ClipRecord, Manifest, ReviewStatus};
use crate::prompts::MoodLabel;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReviewError {
    #[error("unknown clip {0}")]
    UnknownClip(String),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub clip_id: String,
    pub annotator_id: String,
    /// Required when the mapping is accepted.
    pub mood: Option<MoodLabel>,
    pub mapping_ok: bool,
    pub timestamp: String,
}

impl Annotation {
    fn same_judgement(&self, other: &Annotation) -> bool {
        self.mood == other.mood && self.mapping_ok == other.mapping_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub clip_id: String,
    pub final_mood: MoodLabel,
    pub resolved_by: Vec<String>,
    pub timestamp: String,
}

/// A replayable state change, one per log line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReviewEvent {
    Annotation(Annotation),
    Adjudication(Adjudication),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_both_annotated: usize,
    pub n_agree: usize,
    pub rate: Option<f64>,
    pub disagreement_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewState {
    annotators: [String; 2],
    manifest: Manifest,
    annotations: BTreeMap<String, BTreeMap<String, Annotation>>,
    adjudications: BTreeMap<String, Adjudication>,
}

/// Whether applying an event changed anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Changed,
    Unchanged,
}

impl ReviewState {
    /// Starts from `manifest` with every review field reset; state is then
    /// rebuilt by replaying events.
    pub fn new(annotators: [String; 2], mut manifest: Manifest) -> Result<Self, ReviewError> {
        if annotators[0] == annotators[1] {
            return Err(ReviewError::Invalid(
                "the two annotator ids must differ".into(),
            ));
        }
        manifest.records_mut().for_each(ClipRecord::clear_review);
        Ok(Self {
            annotators,
            manifest,
            annotations: BTreeMap::new(),
            adjudications: BTreeMap::new(),
        })
    }

    pub fn annotators(&self) -> &[String; 2] {
        &self.annotators
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Prompts are not part of review, so they can be updated at any time.
    pub fn set_prompt(&mut self, clip_id: &str, prompt: String) -> bool {
        match self.manifest.get_mut(clip_id) {
            Some(r) => {
                r.prompt = Some(prompt);
                true
            }
            None => false,
        }
    }

    pub fn clip(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.manifest.get(clip_id)
    }

    pub fn annotations(&self, clip_id: &str) -> Vec<&Annotation> {
        self.annotations
            .get(clip_id)
            .map(|m| m.values().collect())
            .unwrap_or_default()
    }

    pub fn adjudication(&self, clip_id: &str) -> Option<&Adjudication> {
        self.adjudications.get(clip_id)
    }

    fn check_annotator(&self, id: &str) -> Result<(), ReviewError> {
        if self.annotators.iter().any(|a| a == id) {
            Ok(())
        } else {
            Err(ReviewError::UnknownAnnotator(id.to_string()))
        }
    }

    pub fn apply(&mut self, event: ReviewEvent) -> Result<Applied, ReviewError> {
        match event {
            ReviewEvent::Annotation(a) => self.submit_annotation(a),
            ReviewEvent::Adjudication(a) => self.submit_adjudication(a),
        }
    }

    pub fn submit_annotation(&mut self, ann: Annotation) -> Result<Applied, ReviewError> {
        self.check_annotator(&ann.annotator_id)?;
        let record = self
            .manifest
            .get(&ann.clip_id)
            .ok_or_else(|| ReviewError::UnknownClip(ann.clip_id.clone()))?;
        if ann.mapping_ok && ann.mood.is_none() {
            return Err(ReviewError::Invalid(
                "mood is required when the mapping is accepted".into(),
            ));
        }
        let existing = self.annotations.get(&ann.clip_id);
        let previous = existing.and_then(|m| m.get(&ann.annotator_id));
        if previous.is_some_and(|p| p.same_judgement(&ann)) {
            return Ok(Applied::Unchanged);
        }
        let closed = matches!(
            record.review_status,
            ReviewStatus::MappingRejected | ReviewStatus::Finalized
        );
        let both_in = existing.is_some_and(|m| m.len() == 2);
        if closed || both_in {
            return Err(ReviewError::Conflict(format!(
                "clip {} is {} and no longer accepts changed annotations",
                ann.clip_id,
                status_name(record)
            )));
        }

        let clip_id = ann.clip_id.clone();
        self.annotations
            .entry(clip_id.clone())
            .or_default()
            .insert(ann.annotator_id.clone(), ann);
        self.recompute(&clip_id);
        Ok(Applied::Changed)
    }

    fn recompute(&mut self, clip_id: &str) {
        let anns: Vec<Annotation> = self.annotations(clip_id).into_iter().cloned().collect();
        let rec = self
            .manifest
            .get_mut(clip_id)
            .expect("clip checked by caller");
        if anns.iter().any(|a| !a.mapping_ok) {
            rec.review_status = ReviewStatus::MappingRejected;
            rec.mood = None;
            rec.needs_adjudication = false;
            return;
        }
        match anns.as_slice() {
            [a, b] if a.mood == b.mood => {
                rec.review_status = ReviewStatus::Finalized;
                rec.mood = a.mood;
                rec.needs_adjudication = false;
            }
            [_, _] => {
                rec.review_status = ReviewStatus::Annotated;
                rec.needs_adjudication = true;
            }
            [_] => rec.review_status = ReviewStatus::Annotated,
            _ => rec.clear_review(),
        }
    }

    pub fn submit_adjudication(&mut self, adj: Adjudication) -> Result<Applied, ReviewError> {
        let record = self
            .manifest
            .get(&adj.clip_id)
            .ok_or_else(|| ReviewError::UnknownClip(adj.clip_id.clone()))?;
        if let Some(prev) = self.adjudications.get(&adj.clip_id) {
            if prev.final_mood == adj.final_mood {
                return Ok(Applied::Unchanged);
            }
        }
        if !record.needs_adjudication {
            return Err(ReviewError::Conflict(format!(
                "clip {} is {} and does not need adjudication",
                adj.clip_id,
                status_name(record)
            )));
        }
        let rec = self.manifest.get_mut(&adj.clip_id).expect("checked above");
        rec.review_status = ReviewStatus::Finalized;
        rec.mood = Some(adj.final_mood);
        rec.needs_adjudication = false;
        self.adjudications.insert(adj.clip_id.clone(), adj);
        Ok(Applied::Changed)
    }

    /// Clips this annotator has not yet judged and that are still open.
    pub fn queue(&self, annotator_id: &str) -> Result<Vec<&ClipRecord>, ReviewError> {
        self.check_annotator(annotator_id)?;
        Ok(self
            .manifest
            .records()
            .filter(|r| {
                matches!(
                    r.review_status,
                    ReviewStatus::Pending | ReviewStatus::Annotated
                )
            })
            .filter(|r| {
                !self
                    .annotations
                    .get(&r.clip_id)
                    .is_some_and(|m| m.contains_key(annotator_id))
            })
            .collect())
    }

    pub fn needing_adjudication(&self) -> Vec<&ClipRecord> {
        self.manifest
            .records()
            .filter(|r| r.needs_adjudication)
            .collect()
    }

    /// Agreement over clips where both annotators supplied a mood.
    pub fn agreement_report(&self) -> AgreementReport {
        let mut n_both = 0;
        let mut n_agree = 0;
        let mut disagreement_ids = Vec::new();
        for (clip_id, anns) in &self.annotations {
            let moods: Vec<MoodLabel> = anns.values().filter_map(|a| a.mood).collect();
            if anns.len() != 2 || moods.len() != 2 {
                continue;
            }
            n_both += 1;
            if moods[0] == moods[1] {
                n_agree += 1;
            } else {
                disagreement_ids.push(clip_id.clone());
            }
        }
        AgreementReport {
            n_both_annotated: n_both,
            n_agree,
            rate: (n_both > 0).then(|| n_agree as f64 / n_both as f64),
            disagreement_ids,
        }
    }
}

fn status_name(r: &ClipRecord) -> &'static str {
    if r.needs_adjudication {
        return "awaiting adjudication";
    }
    match r.review_status {
        ReviewStatus::Pending => "pending",
        ReviewStatus::MappingRejected => "mapping_rejected",
        ReviewStatus::Annotated => "annotated",
        ReviewStatus::Finalized => "finalized",
    }
}
