//! Typed async client for the cinetrack HTTP service.

use std::time::Duration;

use cinetrack_core::api::{
    AdjudicationRequest, AnnotationRequest, BuildRequest, ClipView, ErrorBody, ExportRequest,
    QueueItem, QueueResponse,
};
use cinetrack_core::metrics::EvalReport;
use cinetrack_core::pipeline::{
    BuildReport, EvalJob, ExportReport, PipelineConfig, SurveyJob, SurveySelection, TrainJob,
    TrainSummary,
};
use cinetrack_core::prompts::{MoodEntry, MoodLabel};
use cinetrack_core::review::AgreementReport;
use reqwest::{RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("server answered {status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error(transparent)]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Result<Self> {
        Self::with_timeout(base_url, None)
    }

    /// Long jobs such as training can exceed any sensible default, so the
    /// timeout is opt-in.
    pub fn with_timeout(base_url: impl Into<String>, timeout: Option<Duration>) -> Result<Self> {
        let mut builder = reqwest::Client::builder();
        if let Some(t) = timeout {
            builder = builder.timeout(t);
        }
        Ok(Self {
            http: builder.build()?,
            base: base_url.into().trim_end_matches('/').to_string(),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send<T: DeserializeOwned>(req: RequestBuilder) -> Result<T> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(text);
        Err(ClientError::Api { status, message })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::send(self.http.get(self.url(path))).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T> {
        Self::send(self.http.post(self.url(path)).json(body)).await
    }

    pub async fn health(&self) -> Result<serde_json::Value> {
        self.get("/api/health").await
    }

    pub async fn moods(&self) -> Result<Vec<MoodEntry>> {
        self.get("/api/moods").await
    }

    pub async fn queue(&self, annotator: &str) -> Result<QueueResponse> {
        Self::send(
            self.http
                .get(self.url("/api/queue"))
                .query(&[("annotator", annotator)]),
        )
        .await
    }

    pub async fn clip(&self, clip_id: &str) -> Result<ClipView> {
        self.get(&format!("/api/clips/{clip_id}")).await
    }

    pub async fn annotate(
        &self,
        clip_id: &str,
        annotator: &str,
        mood: Option<MoodLabel>,
        mapping_ok: bool,
    ) -> Result<ClipView> {
        let body = AnnotationRequest {
            annotator_id: Some(annotator.to_string()),
            mood,
            mapping_ok,
        };
        self.post(&format!("/api/clips/{clip_id}/annotations"), &body)
            .await
    }

    pub async fn adjudicate(&self, clip_id: &str, final_mood: MoodLabel) -> Result<ClipView> {
        let body = AdjudicationRequest {
            final_mood,
            resolved_by: None,
        };
        self.post(&format!("/api/clips/{clip_id}/adjudication"), &body)
            .await
    }

    pub async fn adjudications(&self) -> Result<Vec<QueueItem>> {
        self.get("/api/adjudications").await
    }

    pub async fn report(&self) -> Result<AgreementReport> {
        self.get("/api/report").await
    }

    pub async fn build(&self, config: &PipelineConfig) -> Result<BuildReport> {
        self.post(
            "/api/build",
            &BuildRequest {
                config: config.clone(),
            },
        )
        .await
    }

    pub async fn export(
        &self,
        config: &PipelineConfig,
        out_dir: impl Into<std::path::PathBuf>,
    ) -> Result<ExportReport> {
        let body = ExportRequest {
            config: config.clone(),
            out_dir: out_dir.into(),
        };
        self.post("/api/export", &body).await
    }

    pub async fn train(&self, job: &TrainJob) -> Result<TrainSummary> {
        self.post("/api/train", job).await
    }

    pub async fn eval(&self, job: &EvalJob) -> Result<EvalReport> {
        self.post("/api/eval", job).await
    }

    pub async fn select_survey(&self, job: &SurveyJob) -> Result<SurveySelection> {
        self.post("/api/select-survey", job).await
    }
}
