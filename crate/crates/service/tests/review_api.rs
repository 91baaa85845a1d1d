use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use cinetrack_client::Client;
use cinetrack_core::manifest::{ClipRecord, Manifest, ReviewStatus};
use cinetrack_core::prompts::MoodLabel::{self, *};
use cinetrack_core::segmenter::Interval;
use cinetrack_service::{spawn, ReviewConfig, ServiceConfig};
use reqwest::StatusCode;

const A: &str = "ann_a";
const B: &str = "ann_b";

fn write_manifest(dir: &Path, n: usize) -> PathBuf {
    let mut m = Manifest::new();
    for i in 0..n {
        let iv = Interval::new(i as f64 * 20.0, i as f64 * 20.0 + 12.0).unwrap();
        let mut r = ClipRecord::new(ClipRecord::make_id("film", &iv), "film", iv);
        r.matched_track = Some("track".into());
        m.upsert(r);
    }
    let path = dir.join("manifest.jsonl");
    m.save(&path).unwrap();
    path
}

fn review_config(manifest: &Path) -> ServiceConfig {
    ServiceConfig {
        review: Some(ReviewConfig {
            manifest: manifest.to_path_buf(),
            wal: ReviewConfig::default_wal(manifest),
            annotators: [A.to_string(), B.to_string()],
        }),
        media_root: manifest.parent().map(Path::to_path_buf),
        ui_dir: None,
    }
}

async fn start(config: ServiceConfig) -> (Client, SocketAddr) {
    let (addr, _) = spawn(config, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    (Client::new(format!("http://{addr}")).unwrap(), addr)
}

async fn ids(client: &Client) -> Vec<String> {
    client
        .queue(A)
        .await
        .unwrap()
        .clips
        .into_iter()
        .map(|c| c.clip_id)
        .collect()
}

#[tokio::test]
async fn agreement_finalizes_with_that_mood() {
    let tmp = tempfile::tempdir().unwrap();
    let (client, _) = start(review_config(&write_manifest(tmp.path(), 1))).await;
    let id = ids(&client).await.remove(0);

    let first = client.annotate(&id, A, Some(Happy), true).await.unwrap();
    assert_eq!(first.record.review_status, ReviewStatus::Annotated);
    assert!(first.annotations.is_empty(), "first judgement stays hidden");
    assert!(client.queue(A).await.unwrap().clips.is_empty());
    assert_eq!(client.queue(B).await.unwrap().clips.len(), 1);

    let done = client.annotate(&id, B, Some(Happy), true).await.unwrap();
    assert_eq!(done.record.review_status, ReviewStatus::Finalized);
    assert_eq!(done.record.mood, Some(Happy));
    assert_eq!(done.annotations.len(), 2);

    // Same judgement again is a no-op; a different one is refused.
    let again = client.annotate(&id, B, Some(Happy), true).await.unwrap();
    assert_eq!(again.record, done.record);
    let err = client.annotate(&id, B, Some(Sad), true).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::CONFLICT));
}

#[tokio::test]
async fn rejection_is_absorbing() {
    let tmp = tempfile::tempdir().unwrap();
    let (client, _) = start(review_config(&write_manifest(tmp.path(), 1))).await;
    let id = ids(&client).await.remove(0);

    let rejected = client.annotate(&id, A, Some(Happy), false).await.unwrap();
    assert_eq!(rejected.record.review_status, ReviewStatus::MappingRejected);
    assert_eq!(rejected.record.mood, None);
    let err = client
        .annotate(&id, B, Some(Happy), true)
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::CONFLICT));
    let err = client
        .annotate(&id, A, Some(Happy), true)
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::CONFLICT));
    assert_eq!(
        client.clip(&id).await.unwrap().record.review_status,
        ReviewStatus::MappingRejected
    );
    assert!(client.queue(B).await.unwrap().clips.is_empty());
    let err = client.adjudicate(&id, Happy).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::CONFLICT));
}

#[tokio::test]
async fn disagreement_needs_adjudication() {
    let tmp = tempfile::tempdir().unwrap();
    let (client, _) = start(review_config(&write_manifest(tmp.path(), 1))).await;
    let id = ids(&client).await.remove(0);

    client.annotate(&id, A, Some(Happy), true).await.unwrap();
    let split = client.annotate(&id, B, Some(Peaceful), true).await.unwrap();
    assert!(split.record.needs_adjudication);
    assert_ne!(split.record.review_status, ReviewStatus::Finalized);
    assert_eq!(split.record.mood, None);
    let pending: Vec<String> = client
        .adjudications()
        .await
        .unwrap()
        .into_iter()
        .map(|c| c.clip_id)
        .collect();
    assert_eq!(pending, vec![id.clone()]);

    let fin = client.adjudicate(&id, Nervous).await.unwrap();
    assert_eq!(fin.record.review_status, ReviewStatus::Finalized);
    assert_eq!(fin.record.mood, Some(Nervous));
    assert_eq!(fin.adjudication.unwrap().resolved_by, vec![A, B]);
    assert!(client.adjudications().await.unwrap().is_empty());

    let err = client.adjudicate(&id, Sad).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::CONFLICT));
    let err = client.adjudicate("no_such_clip", Sad).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::NOT_FOUND));
}

#[tokio::test]
async fn agreement_report_over_ten_clips() {
    let tmp = tempfile::tempdir().unwrap();
    let (client, _) = start(review_config(&write_manifest(tmp.path(), 12))).await;
    assert_eq!(client.report().await.unwrap().rate, None);

    let all = ids(&client).await;
    let moods: [MoodLabel; 4] = [Happy, Sad, Nervous, Peaceful];
    for (i, id) in all.iter().take(10).enumerate() {
        let m = moods[i % 4];
        client.annotate(id, A, Some(m), true).await.unwrap();
        let other = if i == 7 { moods[(i + 1) % 4] } else { m };
        client.annotate(id, B, Some(other), true).await.unwrap();
    }
    // Singly annotated clips do not count.
    client.annotate(&all[10], A, Some(Sad), true).await.unwrap();

    let report = client.report().await.unwrap();
    assert_eq!(report.n_both_annotated, 10);
    assert_eq!(report.n_agree, 9);
    assert_eq!(report.rate, Some(0.9));
    assert_eq!(report.disagreement_ids, vec![all[7].clone()]);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (client, addr) = start(review_config(&write_manifest(tmp.path(), 1))).await;
    let id = ids(&client).await.remove(0);
    let http = reqwest::Client::new();
    let url = format!("http://{addr}/api/clips/{id}/annotations");

    for body in [
        r#"{"annotator_id": "ann_a", "mood": "ecstatic", "mapping_ok": true}"#,
        r#"{"annotator_id": "ann_a", "mood": "happy"}"#,
        r#"not json"#,
    ] {
        let resp = http
            .post(&url)
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }
    let err = client
        .annotate(&id, "ann_c", Some(Happy), true)
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::UNPROCESSABLE_ENTITY));
    let err = client.annotate(&id, A, None, true).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::UNPROCESSABLE_ENTITY));
    let err = client
        .annotate("missing", A, Some(Happy), true)
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::NOT_FOUND));
    let err = client.queue("ann_c").await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::UNPROCESSABLE_ENTITY));

    // The annotator may come from a header instead of the body.
    let resp = http
        .post(&url)
        .header("x-annotator-id", B)
        .json(&serde_json::json!({"mood": "sad", "mapping_ok": true}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

#[tokio::test]
async fn state_survives_restart_via_log_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(tmp.path(), 3);
    let (client, _) = start(review_config(&manifest)).await;
    let all = ids(&client).await;
    client.annotate(&all[0], A, Some(Sad), true).await.unwrap();
    client.annotate(&all[0], B, Some(Sad), true).await.unwrap();
    client
        .annotate(&all[1], A, Some(Happy), true)
        .await
        .unwrap();
    client
        .annotate(&all[1], B, Some(Nervous), true)
        .await
        .unwrap();
    client.adjudicate(&all[1], Happy).await.unwrap();
    client.annotate(&all[2], B, None, false).await.unwrap();
    let before: Vec<_> = records(&client, &all).await;

    let on_disk = Manifest::load(&manifest).unwrap();
    assert_eq!(on_disk.finalized().len(), 2);

    let (restarted, _) = start(review_config(&manifest)).await;
    assert_eq!(records(&restarted, &all).await, before);
    assert_eq!(
        restarted.report().await.unwrap(),
        client.report().await.unwrap()
    );
}

async fn records(client: &Client, ids: &[String]) -> Vec<ClipRecord> {
    let mut out = Vec::new();
    for id in ids {
        out.push(client.clip(id).await.unwrap().record);
    }
    out
}

#[tokio::test]
async fn media_supports_byte_ranges() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = write_manifest(tmp.path(), 1);
    let media = tmp.path().join("clips");
    std::fs::create_dir_all(&media).unwrap();
    std::fs::write(media.join("a.wav"), b"0123456789").unwrap();
    let mut m = Manifest::load(&manifest).unwrap();
    let id = m.records().next().unwrap().clip_id.clone();
    m.get_mut(&id).unwrap().media.music_stem =
        Some(media.join("a.wav").to_string_lossy().into_owned());
    m.save(&manifest).unwrap();

    let (client, addr) = start(review_config(&manifest)).await;
    let view = client.clip(&id).await.unwrap();
    let url = view
        .media_urls
        .music_stem
        .expect("stem is under the media root");
    assert_eq!(url, "/media/clips/a.wav");
    let resp = reqwest::Client::new()
        .get(format!("http://{addr}{url}"))
        .header("range", "bytes=2-5")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::PARTIAL_CONTENT);
    assert_eq!(resp.bytes().await.unwrap().as_ref(), b"2345");
}

#[tokio::test]
async fn review_routes_need_a_project() {
    let (client, _) = start(ServiceConfig::default()).await;
    assert_eq!(client.health().await.unwrap()["status"], "ok");
    assert_eq!(client.moods().await.unwrap().len(), 4);
    let err = client.report().await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::SERVICE_UNAVAILABLE));
}
