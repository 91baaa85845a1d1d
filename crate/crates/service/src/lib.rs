//! HTTP/JSON service: two-annotator review plus the dataset and model
//! stages as blocking jobs.

mod error;
pub mod remote;
mod store;

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::HeaderMap;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use cinetrack_core::api::{
    AdjudicationRequest, AnnotationRequest, BuildRequest, ClipView, ExportRequest, MediaUrls,
    QueueItem, QueueResponse, ANNOTATOR_HEADER,
};
use cinetrack_core::manifest::ClipRecord;
use cinetrack_core::metrics::EvalReport;
use cinetrack_core::pipeline::{
    self, BuildReport, EvalJob, ExportReport, PromptClients, SurveyJob, SurveySelection, TrainJob,
    TrainSummary,
};
use cinetrack_core::prompts::{mood_table, MoodEntry, RetryPolicy};
use cinetrack_core::review::{Adjudication, AgreementReport, Annotation, ReviewEvent, ReviewState};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

pub use error::ServiceError;
pub use store::{ReviewConfig, ReviewStore};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub review: Option<ReviewConfig>,
    pub media_root: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
}

struct Inner {
    review: Option<ReviewStore>,
    media_root: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    fn review(&self) -> Result<&ReviewStore, ServiceError> {
        self.0.review.as_ref().ok_or_else(|| {
            ServiceError::Unavailable("this server was started without a review project".into())
        })
    }

    fn snapshot(&self) -> Result<Arc<ReviewState>, ServiceError> {
        Ok(self.review()?.snapshot())
    }

    /// The review store, when it owns the manifest at `path`.
    fn review_owning(&self, path: &Path) -> Option<&ReviewStore> {
        self.0
            .review
            .as_ref()
            .filter(|r| same_file(&r.config().manifest, path))
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

pub fn router(config: ServiceConfig) -> Result<Router, ServiceError> {
    let review = config.review.map(ReviewStore::open).transpose()?;
    let media_root = config.media_root.map(|p| p.canonicalize().unwrap_or(p));
    let state = AppState(Arc::new(Inner {
        review,
        media_root: media_root.clone(),
    }));
    let mut app = Router::new()
        .route("/api/health", get(health))
        .route("/api/moods", get(moods))
        .route("/api/queue", get(queue))
        .route("/api/clips/{id}", get(clip))
        .route("/api/clips/{id}/annotations", post(annotate))
        .route("/api/clips/{id}/adjudication", post(adjudicate))
        .route("/api/adjudications", get(adjudications))
        .route("/api/report", get(report))
        .route("/api/build", post(build))
        .route("/api/export", post(export))
        .route("/api/train", post(train))
        .route("/api/eval", post(eval))
        .route("/api/select-survey", post(select_survey))
        .with_state(state);
    if let Some(root) = media_root {
        app = app.nest_service("/media", ServeDir::new(root));
    }
    if let Some(ui) = config.ui_dir {
        app = app.fallback_service(ServeDir::new(ui).append_index_html_on_directories(true));
    }
    Ok(app.layer(TraceLayer::new_for_http()))
}

pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub async fn spawn(
    config: ServiceConfig,
    addr: SocketAddr,
) -> Result<(SocketAddr, JoinHandle<()>), ServiceError> {
    let app = router(config)?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Internal(format!("bind {addr}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let handle = tokio::spawn(async move {
        if let Err(e) = serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::Unprocessable(e.body_text()))
}

async fn blocking<T, F>(f: F) -> Result<Json<T>, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("job panicked: {e}")))?
        .map(Json)
}

fn now() -> String {
    Utc::now().to_rfc3339()
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn moods() -> Json<Vec<MoodEntry>> {
    Json(mood_table())
}

#[derive(Deserialize)]
struct QueueQuery {
    annotator: Option<String>,
}

fn annotator_from(explicit: Option<String>, headers: &HeaderMap) -> Result<String, ServiceError> {
    explicit
        .or_else(|| {
            headers
                .get(ANNOTATOR_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .ok_or_else(|| ServiceError::Unprocessable("annotator id is required".into()))
}

fn queue_item(r: &ClipRecord) -> QueueItem {
    QueueItem {
        clip_id: r.clip_id.clone(),
        film_id: r.film_id.clone(),
        matched_track: r.matched_track.clone(),
    }
}

async fn queue(
    State(state): State<AppState>,
    Query(q): Query<QueueQuery>,
    headers: HeaderMap,
) -> Result<Json<QueueResponse>, ServiceError> {
    let annotator_id = annotator_from(q.annotator, &headers)?;
    let snap = state.snapshot()?;
    let clips = snap
        .queue(&annotator_id)?
        .into_iter()
        .map(queue_item)
        .collect();
    Ok(Json(QueueResponse {
        annotator_id,
        clips,
    }))
}

fn media_url(root: &Path, path: &str) -> Option<String> {
    let p = Path::new(path);
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    };
    let abs = abs.canonicalize().ok()?;
    let rel = abs.strip_prefix(root).ok()?;
    let parts: Vec<String> = rel
        .components()
        .map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect::<Option<_>>()?;
    Some(format!("/media/{}", parts.join("/")))
}

fn clip_view(state: &AppState, snap: &ReviewState, id: &str) -> Result<ClipView, ServiceError> {
    let record = snap
        .clip(id)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown clip {id}")))?
        .clone();
    let url = |p: &Option<String>| {
        let root = state.0.media_root.as_deref()?;
        media_url(root, p.as_deref()?)
    };
    let media_urls = MediaUrls {
        clip_video: url(&record.media.clip_video),
        music_stem: url(&record.media.music_stem),
        matched_track_audio: url(&record.media.matched_track_audio),
    };
    let annotations: Vec<Annotation> = snap.annotations(id).into_iter().cloned().collect();
    Ok(ClipView {
        record,
        media_urls,
        annotations: if annotations.len() == 2 {
            annotations
        } else {
            Vec::new()
        },
        adjudication: snap.adjudication(id).cloned(),
    })
}

async fn clip(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ClipView>, ServiceError> {
    let snap = state.snapshot()?;
    clip_view(&state, &snap, &id).map(Json)
}

async fn annotate(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    payload: Result<Json<AnnotationRequest>, JsonRejection>,
) -> Result<Json<ClipView>, ServiceError> {
    let req = body(payload)?;
    let annotator_id = annotator_from(req.annotator_id, &headers)?;
    let event = ReviewEvent::Annotation(Annotation {
        clip_id: id.clone(),
        annotator_id,
        mood: req.mood,
        mapping_ok: req.mapping_ok,
        timestamp: now(),
    });
    let snap = state.review()?.apply(event)?;
    clip_view(&state, &snap, &id).map(Json)
}

async fn adjudicate(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<AdjudicationRequest>, JsonRejection>,
) -> Result<Json<ClipView>, ServiceError> {
    let req = body(payload)?;
    let store = state.review()?;
    let resolved_by = req
        .resolved_by
        .unwrap_or_else(|| store.config().annotators.to_vec());
    let event = ReviewEvent::Adjudication(Adjudication {
        clip_id: id.clone(),
        final_mood: req.final_mood,
        resolved_by,
        timestamp: now(),
    });
    let snap = store.apply(event)?;
    clip_view(&state, &snap, &id).map(Json)
}

async fn adjudications(
    State(state): State<AppState>,
) -> Result<Json<Vec<QueueItem>>, ServiceError> {
    let snap = state.snapshot()?;
    Ok(Json(
        snap.needing_adjudication()
            .into_iter()
            .map(queue_item)
            .collect(),
    ))
}

async fn report(State(state): State<AppState>) -> Result<Json<AgreementReport>, ServiceError> {
    Ok(Json(state.snapshot()?.agreement_report()))
}

async fn build(
    State(state): State<AppState>,
    payload: Result<Json<BuildRequest>, JsonRejection>,
) -> Result<Json<BuildReport>, ServiceError> {
    let req = body(payload)?;
    req.config.validate()?;
    blocking(move || {
        let report = pipeline::build_from_config(&req.config)?;
        if let Some(store) = state.review_owning(&req.config.manifest) {
            store.reload()?;
        }
        Ok(report)
    })
    .await
}

async fn export(
    State(state): State<AppState>,
    payload: Result<Json<ExportRequest>, JsonRejection>,
) -> Result<Json<ExportReport>, ServiceError> {
    let req = body(payload)?;
    req.config.validate()?;
    blocking(move || {
        let (captioner, summarizer) = remote::prompt_services(&req.config.clients)?;
        let clients = PromptClients {
            captioner: captioner.as_ref(),
            summarizer: summarizer.as_ref(),
            retry: RetryPolicy::default(),
            exclude_quality: req.config.clients.exclude_quality,
        };
        match state.review_owning(&req.config.manifest) {
            Some(store) => {
                let snap = store.snapshot();
                let (report, prompts) =
                    pipeline::export(snap.manifest(), &req.config, &req.out_dir, &clients)?;
                store.set_prompts(&prompts)?;
                Ok(report)
            }
            None => Ok(pipeline::export_manifest_file(
                &req.config,
                &req.out_dir,
                &clients,
            )?),
        }
    })
    .await
}

async fn train(
    payload: Result<Json<TrainJob>, JsonRejection>,
) -> Result<Json<TrainSummary>, ServiceError> {
    let job = body(payload)?;
    blocking(move || Ok(pipeline::run_train_job(&job)?)).await
}

async fn eval(
    payload: Result<Json<EvalJob>, JsonRejection>,
) -> Result<Json<EvalReport>, ServiceError> {
    let job = body(payload)?;
    blocking(move || Ok(pipeline::run_eval_job(&job)?)).await
}

async fn select_survey(
    payload: Result<Json<SurveyJob>, JsonRejection>,
) -> Result<Json<SurveySelection>, ServiceError> {
    let job = body(payload)?;
    blocking(move || Ok(pipeline::run_survey_job(&job)?)).await
}
