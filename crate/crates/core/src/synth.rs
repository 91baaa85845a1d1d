//! Deterministic synthetic audio for fixtures and smoke runs.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::wav::write_wav;
use crate::audio::AudioBuffer;
use crate::error::{io_err, Result};
use crate::pipeline::{FILM_AUDIO, TRACKS_DIR};
use crate::segmenter::Interval;

pub fn tone(freq: f64, seconds: f64, rate: u32, amp: f32) -> AudioBuffer {
    let n = (seconds * rate as f64).round() as usize;
    let samples = (0..n)
        .map(|i| amp * (TAU * freq * i as f64 / rate as f64).sin() as f32)
        .collect();
    AudioBuffer::new(samples, rate).expect("positive rate")
}

/// A sequence of random pitched notes, each a fundamental plus a softer
/// octave, with no gaps between notes.
pub fn melody(seed: u64, seconds: f64, rate: u32, note_seconds: f64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * rate as f64).round() as usize;
    let per_note = ((note_seconds * rate as f64).round() as usize).max(1);
    let mut samples = Vec::with_capacity(n);
    let mut freq = 0.0;
    for i in 0..n {
        if i % per_note == 0 {
            let midi: f64 = rng.random_range(48..84) as f64;
            freq = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
        }
        let t = i as f64 / rate as f64;
        samples.push((0.4 * (TAU * freq * t).sin() + 0.15 * (2.0 * TAU * freq * t).sin()) as f32);
    }
    AudioBuffer::new(samples, rate).expect("positive rate")
}

/// Adds white Gaussian noise at the given signal-to-noise ratio.
pub fn add_noise(buf: &AudioBuffer, snr_db: f64, seed: u64) -> AudioBuffer {
    let power = buf
        .samples()
        .iter()
        .map(|&x| (x as f64).powi(2))
        .sum::<f64>()
        / buf.len().max(1) as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = buf
        .samples()
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + (sigma * z) as f32
        })
        .collect();
    AudioBuffer::new(samples, buf.sample_rate()).expect("rate unchanged")
}

/// Joins buffers that share a sample rate.
pub fn concat(parts: &[AudioBuffer]) -> AudioBuffer {
    let rate = parts.first().map_or(22_050, |p| p.sample_rate());
    let samples = parts
        .iter()
        .flat_map(|p| p.samples().iter().copied())
        .collect();
    AudioBuffer::new(samples, rate).expect("positive rate")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedClip {
    pub interval: Interval,
    pub track_id: String,
    pub offset_seconds: f64,
}

/// Writes a film with two musical regions lifted from two distinct tracks,
/// separated by digital silence, and returns what a build should find.
pub fn write_film_fixture(root: &Path, film_id: &str, seed: u64) -> Result<Vec<ExpectedClip>> {
    let rate = 22_050;
    let dir = root.join(film_id);
    let tracks_dir = dir.join(TRACKS_DIR);
    fs::create_dir_all(&tracks_dir).map_err(io_err(&tracks_dir))?;

    let a = melody(seed * 2 + 1, 30.0, rate, 0.5);
    let b = melody(seed * 2 + 2, 30.0, rate, 0.5);
    write_wav(tracks_dir.join("track_a.wav"), &a)?;
    write_wav(tracks_dir.join("track_b.wav"), &b)?;

    let silence = |s: f64| AudioBuffer::silence(s, rate).expect("positive rate");
    let film = concat(&[
        silence(3.0),
        a.slice_seconds(5.0, 17.0),
        silence(4.0),
        b.slice_seconds(10.0, 24.0),
        silence(3.0),
    ]);
    write_wav(dir.join(FILM_AUDIO), &film)?;
    Ok(vec![
        ExpectedClip {
            interval: Interval::new(3.0, 15.0)?,
            track_id: "track_a".into(),
            offset_seconds: 5.0,
        },
        ExpectedClip {
            interval: Interval::new(19.0, 33.0)?,
            track_id: "track_b".into(),
            offset_seconds: 10.0,
        },
    ])
}
