//! Request and response bodies shared by the HTTP service and its client.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::manifest::ClipRecord;
use crate::pipeline::PipelineConfig;
use crate::prompts::MoodLabel;
use crate::review::{Adjudication, Annotation};

/// Header naming the annotator when the body leaves `annotator_id` out.
pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_id: Option<String>,
    #[serde(default)]
    pub mood: Option<MoodLabel>,
    pub mapping_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationRequest {
    pub final_mood: MoodLabel,
    /// Defaults to both configured annotators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_by: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaUrls {
    pub clip_video: Option<String>,
    pub music_stem: Option<String>,
    pub matched_track_audio: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipView {
    pub record: ClipRecord,
    pub media_urls: MediaUrls,
    /// Hidden until both annotators have submitted, so judgements stay
    /// independent.
    pub annotations: Vec<Annotation>,
    pub adjudication: Option<Adjudication>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub clip_id: String,
    pub film_id: String,
    pub matched_track: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueResponse {
    pub annotator_id: String,
    pub clips: Vec<QueueItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildRequest {
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRequest {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
}
