use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use cinetrack_core::manifest::{Manifest, ReviewStatus};
use cinetrack_core::model::train::read_history_csv;
use cinetrack_core::synth::write_film_fixture;
use cinetrack_core::tensor_io::write_tensor;
use serde_json::Value;

fn cinetrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cinetrack"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_config(dir: &Path) {
    fs::write(
        dir.join("cinetrack.toml"),
        "input_root = \"films\"\nmanifest = \"manifest.jsonl\"\nwork_dir = \"work\"\n",
    )
    .unwrap();
}

#[test]
fn build_with_threshold_override_and_failures() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path());
    fs::create_dir_all(tmp.path().join("films")).unwrap();

    let empty = json(&cinetrack(
        tmp.path(),
        &["build", "--config", "cinetrack.toml"],
    ));
    assert_eq!(empty["manifest_records"], 0);
    assert!(tmp.path().join("manifest.jsonl").is_file());

    write_film_fixture(&tmp.path().join("films"), "film1", 0).unwrap();
    // Only the 14 s region survives a 13 s minimum length.
    let report = json(&cinetrack(
        tmp.path(),
        &[
            "build",
            "--config",
            "cinetrack.toml",
            "--threshold-min-len",
            "13",
        ],
    ));
    assert_eq!(report["manifest_records"], 1);
    let m = Manifest::load(&tmp.path().join("manifest.jsonl")).unwrap();
    assert_eq!(
        m.records().next().unwrap().matched_track.as_deref(),
        Some("track_b")
    );

    fs::create_dir_all(tmp.path().join("films/broken")).unwrap();
    let out = cinetrack(tmp.path(), &["build", "--config", "cinetrack.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["failures"][0]["film_id"], "broken");
    assert_eq!(report["manifest_records"], 2);
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cinetrack(tmp.path(), &["train", "--out", "x"]);
    assert!(!out.status.success());
    let out = cinetrack(tmp.path(), &["build", "--config", "missing.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
    let out = cinetrack(tmp.path(), &["build", "--threshold-silence-weight", "2"]);
    assert!(!out.status.success());
}

fn write_embeddings(dir: &Path, n: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let row: Vec<f32> = (0..4)
            .map(|j| ((i * 7 + j * 3) as f32 * 0.37 + seed as f32).sin())
            .collect();
        write_tensor(&dir.join(format!("clip{i:02}")), &[1, 4], &row).unwrap();
    }
}

#[test]
fn eval_on_identical_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    write_embeddings(&tmp.path().join("ref"), 12, 0);
    let report = json(&cinetrack(
        tmp.path(),
        &[
            "eval",
            "--reference",
            "ref",
            "--generated",
            "ref",
            "--out",
            "report.json",
        ],
    ));
    assert!(report["fad"].as_f64().unwrap().abs() < 1e-8);
    assert_eq!(report["similarity"].as_f64(), Some(1.0));
    assert_eq!(report["precision"].as_f64(), Some(1.0));
    assert_eq!(report["recall"].as_f64(), Some(1.0));
    assert!(tmp.path().join("report.json").is_file());
}

#[test]
fn select_survey_with_k_equal_to_n_returns_every_id() {
    let tmp = tempfile::tempdir().unwrap();
    write_embeddings(&tmp.path().join("emb"), 10, 1);
    let sel = json(&cinetrack(
        tmp.path(),
        &[
            "select-survey",
            "--embeddings",
            "emb",
            "--k",
            "10",
            "--seed",
            "3",
        ],
    ));
    let mut ids: Vec<String> = sel["ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    ids.sort();
    let expected: Vec<String> = (0..10).map(|i| format!("clip{i:02}")).collect();
    assert_eq!(ids, expected);
}

#[test]
fn train_on_synthetic_fixture_reduces_validation_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = json(&cinetrack(
        tmp.path(),
        &["train", "--synthetic", "--out", "run", "--seed", "0"],
    ));
    let history = read_history_csv(&tmp.path().join("run/history.csv")).unwrap();
    assert!(!history.is_empty());
    assert!(
        summary["final_val_loss"].as_f64().unwrap() < summary["initial_val_loss"].as_f64().unwrap()
    );
    assert!(tmp.path().join("run/checkpoint/config.json").is_file());
}

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(dir: &Path) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cinetrack"))
        .current_dir(dir)
        .args([
            "serve",
            "--config",
            "cinetrack.toml",
            "--listen",
            "127.0.0.1:0",
            "--annotators",
            "alice,bob",
        ])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line
        .trim()
        .strip_prefix("serving on ")
        .expect("startup line")
        .to_string();
    Server(child, url)
}

#[test]
fn serve_then_drive_it_as_a_remote_client() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path());
    write_film_fixture(&tmp.path().join("films"), "film1", 5).unwrap();
    let server = serve(tmp.path());
    let remote = ["--config", "cinetrack.toml", "--server", server.1.as_str()];

    let built = json(&cinetrack(tmp.path(), &[&["build"], &remote[..]].concat()));
    assert_eq!(built["manifest_records"], 2);

    let http = reqwest::blocking::Client::new();
    let queue: Value = http
        .get(format!("{}/api/queue?annotator=alice", server.1))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let ids: Vec<&str> = queue["clips"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["clip_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids.len(), 2);
    for who in ["alice", "bob"] {
        let resp = http
            .post(format!("{}/api/clips/{}/annotations", server.1, ids[0]))
            .json(&serde_json::json!({"annotator_id": who, "mood": "peaceful", "mapping_ok": true}))
            .send()
            .unwrap();
        assert!(resp.status().is_success());
    }
    let clip: Value = http
        .get(format!("{}/api/clips/{}", server.1, ids[0]))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let stem_url = clip["media_urls"]["music_stem"].as_str().unwrap();
    assert!(http
        .get(format!("{}{stem_url}", server.1))
        .send()
        .unwrap()
        .status()
        .is_success());

    let exported = json(&cinetrack(
        tmp.path(),
        &[&["export", "--out", "export"], &remote[..]].concat(),
    ));
    assert_eq!(exported["exported"].as_array().unwrap().len(), 1);
    assert_eq!(exported["skipped_unfinalized"], 1);

    // The running server owns the manifest; prompts and review state agree on disk.
    let m = Manifest::load(&tmp.path().join("manifest.jsonl")).unwrap();
    let rec = m.get(ids[0]).unwrap();
    assert_eq!(rec.review_status, ReviewStatus::Finalized);
    assert!(rec
        .prompt
        .as_deref()
        .unwrap()
        .starts_with("A film soundtrack for a peaceful scene."));
}
