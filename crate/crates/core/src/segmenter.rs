//! Musical segment identification: energy-based silence detection on a music
//! stem, gap merging and length filtering, then a music-event gate.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::audio::{frame, rms_energy, AudioBuffer};
use crate::error::{invalid, io_err, Error, Result};

pub const FRAME_MS: f64 = 20.0;
pub const DEFAULT_SILENCE_WEIGHT: f64 = 0.2;
pub const DEFAULT_MIN_LEN: f64 = 10.0;
pub const DEFAULT_MAX_GAP: f64 = 1.0;
pub const DEFAULT_GATE_THRESHOLD: f64 = 0.3;

const HISTOGRAM_BINS: usize = 32;
/// Time comparisons treat values within a nanosecond as equal, so decimal
/// boundaries like 8.8 - 7.8 compare as exactly one second.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && start < end && end.is_finite()) {
            return Err(invalid(format!("invalid interval [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(flatten)]
    pub interval: Interval,
    #[serde(rename = "music_prob")]
    pub mean_music_prob: Option<f64>,
}

/// On-disk segment list for one film.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentList {
    pub film_id: String,
    pub segments: Vec<Segment>,
}

/// Scores fixed-length windows for the presence of music.
pub trait MusicEventClassifier {
    fn window_seconds(&self) -> f64;

    /// Probability in [0, 1] that `window` contains a musical event.
    fn score(&self, window: &AudioBuffer) -> Result<f64>;
}

/// Returns the same probability for every window.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier {
    pub prob: f64,
    pub window_seconds: f64,
}

impl MusicEventClassifier for ConstantClassifier {
    fn window_seconds(&self) -> f64 {
        self.window_seconds
    }

    fn score(&self, _window: &AudioBuffer) -> Result<f64> {
        Ok(self.prob)
    }
}

/// Replays a fixed score sequence, one entry per window, cycling if needed.
#[derive(Debug, Clone)]
pub struct ScriptedClassifier {
    pub scores: Vec<f64>,
    pub window_seconds: f64,
    cursor: std::cell::Cell<usize>,
}

impl ScriptedClassifier {
    pub fn new(scores: Vec<f64>, window_seconds: f64) -> Self {
        Self {
            scores,
            window_seconds,
            cursor: std::cell::Cell::new(0),
        }
    }
}

impl MusicEventClassifier for ScriptedClassifier {
    fn window_seconds(&self) -> f64 {
        self.window_seconds
    }

    fn score(&self, _window: &AudioBuffer) -> Result<f64> {
        let i = self.cursor.get();
        self.cursor.set(i + 1);
        self.scores
            .get(i % self.scores.len().max(1))
            .copied()
            .ok_or_else(|| invalid("scripted classifier has no scores"))
    }
}

/// Offline heuristic: tonal content (one minus spectral flatness of a
/// Hann-windowed frame) scaled into [0, 1]. Digital silence scores 0.
#[derive(Debug, Clone, Copy)]
pub struct TonalityClassifier {
    pub window_seconds: f64,
}

impl Default for TonalityClassifier {
    fn default() -> Self {
        Self {
            window_seconds: 1.0,
        }
    }
}

impl MusicEventClassifier for TonalityClassifier {
    fn window_seconds(&self) -> f64 {
        self.window_seconds
    }

    fn score(&self, window: &AudioBuffer) -> Result<f64> {
        use rustfft::{num_complex::Complex, FftPlanner};
        let x = window.samples();
        if x.iter().all(|&s| s == 0.0) {
            return Ok(0.0);
        }
        let n = x.len().next_power_of_two().min(1 << 15);
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
                Complex::new(x.get(i).copied().unwrap_or(0.0) as f64 * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let power: Vec<f64> = buf[1..n / 2].iter().map(|c| c.norm_sqr() + 1e-20).collect();
        let geo = (power.iter().map(|p| p.ln()).sum::<f64>() / power.len() as f64).exp();
        let arith = power.iter().sum::<f64>() / power.len() as f64;
        Ok((1.0 - geo / arith).clamp(0.0, 1.0))
    }
}

/// Splits film audio into stems; only the music stem is used downstream.
pub trait SourceSeparator {
    fn music_stem(&self, film_audio: &Path, work_dir: &Path) -> Result<PathBuf>;
}

/// Treats the input as an already separated music stem.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThroughSeparator;

impl SourceSeparator for PassThroughSeparator {
    fn music_stem(&self, film_audio: &Path, _work_dir: &Path) -> Result<PathBuf> {
        Ok(film_audio.to_path_buf())
    }
}

/// Runs a user-configured command. `{input}` and `{output}` in the argument
/// list are replaced by the film audio path and the music stem path to write.
#[derive(Debug, Clone)]
pub struct CommandSeparator {
    pub program: String,
    pub args: Vec<String>,
}

impl SourceSeparator for CommandSeparator {
    fn music_stem(&self, film_audio: &Path, work_dir: &Path) -> Result<PathBuf> {
        let stem_name = film_audio
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("film");
        let out = work_dir.join(format!("{stem_name}.music.wav"));
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{input}", &film_audio.to_string_lossy())
                    .replace("{output}", &out.to_string_lossy())
            })
            .collect();
        let status = Command::new(&self.program)
            .args(&args)
            .status()
            .map_err(io_err(&self.program))?;
        if !status.success() {
            return Err(Error::Client(format!(
                "separator `{}` exited with {status}",
                self.program
            )));
        }
        if !out.exists() {
            return Err(Error::Client(format!(
                "separator did not write {}",
                out.display()
            )));
        }
        Ok(out)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Low and high energy levels: the two most populated local maxima of the
/// energy histogram, each represented by the mean energy inside its bin.
/// Falls back to the 10th/90th percentiles when fewer than two modes exist.
fn energy_modes(energies: &[f64]) -> (f64, f64) {
    let mut sorted = energies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        return (lo, hi);
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let bin_of = |e: f64| (((e - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
    let mut counts = [0usize; HISTOGRAM_BINS];
    let mut sums = [0.0f64; HISTOGRAM_BINS];
    for &e in energies {
        let b = bin_of(e);
        counts[b] += 1;
        sums[b] += e;
    }
    let mut peaks: Vec<usize> = (0..HISTOGRAM_BINS)
        .filter(|&i| {
            let left = if i == 0 { 0 } else { counts[i - 1] };
            let right = if i + 1 == HISTOGRAM_BINS {
                0
            } else {
                counts[i + 1]
            };
            counts[i] > 0 && counts[i] >= left && counts[i] > right
        })
        .collect();
    if peaks.len() < 2 {
        return (percentile(&sorted, 0.1), percentile(&sorted, 0.9));
    }
    // Most populated first; ties resolved toward the lower bin.
    peaks.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let (a, b) = (peaks[0].min(peaks[1]), peaks[0].max(peaks[1]));
    (sums[a] / counts[a] as f64, sums[b] / counts[b] as f64)
}

/// Frame-aligned intervals whose 20 ms RMS energy reaches the threshold
/// `E_low + weight * (E_high - E_low)`.
pub fn detect_nonsilent(buf: &AudioBuffer, weight: f64) -> Result<Vec<Interval>> {
    if !(weight > 0.0 && weight < 1.0) {
        return Err(invalid(format!(
            "silence weight must lie in (0, 1), got {weight}"
        )));
    }
    let frames = frame(buf, FRAME_MS, FRAME_MS)?;
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let energies = rms_energy(&frames);
    if energies.iter().all(|&e| e == 0.0) {
        return Ok(Vec::new());
    }
    let (low, high) = energy_modes(&energies);
    let threshold = low + weight * (high - low);

    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, &e) in energies.iter().enumerate() {
        let loud = e >= threshold && e > 0.0;
        match (loud, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                out.push(Interval::new(
                    frames.frame_start(s),
                    frames.frame_end(i - 1),
                )?);
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        out.push(Interval::new(
            frames.frame_start(s),
            frames.frame_end(energies.len() - 1),
        )?);
    }
    Ok(out)
}

/// Merges intervals separated by at most `max_gap` seconds and keeps merged
/// intervals strictly longer than `min_len` seconds.
pub fn extract_segments(
    intervals: &[Interval],
    min_len: f64,
    max_gap: f64,
) -> Result<Vec<Interval>> {
    if min_len < 0.0 || max_gap < 0.0 {
        return Err(invalid("min_len and max_gap must be non-negative"));
    }
    for w in intervals.windows(2) {
        if w[1].start < w[0].end {
            return Err(invalid(format!(
                "intervals unsorted or overlapping at [{}, {}) / [{}, {})",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    let mut merged: Vec<Interval> = Vec::new();
    for iv in intervals {
        if iv.start >= iv.end {
            return Err(invalid(format!(
                "empty interval [{}, {})",
                iv.start, iv.end
            )));
        }
        match merged.last_mut() {
            Some(last) if iv.start - last.end <= max_gap + TIME_EPS => last.end = iv.end,
            _ => merged.push(*iv),
        }
    }
    merged.retain(|iv| iv.duration() > min_len + TIME_EPS);
    Ok(merged)
}

/// Scores `clip` in consecutive non-overlapping windows and passes it when the
/// mean probability is strictly above `threshold`. A trailing partial window is ignored.
pub fn music_gate(
    clip: &AudioBuffer,
    classifier: &dyn MusicEventClassifier,
    threshold: f64,
) -> Result<(bool, f64)> {
    let window = classifier.window_seconds();
    if !(window > 0.0) {
        return Err(invalid("classifier window must be positive"));
    }
    let win_samples = (window * clip.sample_rate() as f64).round() as usize;
    let n_windows = if win_samples == 0 {
        0
    } else {
        clip.len() / win_samples
    };
    if n_windows == 0 {
        return Err(Error::TooShort {
            duration: clip.duration(),
            required: window,
        });
    }
    let mut total = 0.0;
    for w in 0..n_windows {
        let piece = AudioBuffer::new(
            clip.samples()[w * win_samples..(w + 1) * win_samples].to_vec(),
            clip.sample_rate(),
        )?;
        let p = classifier.score(&piece)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("classifier returned {p}, outside [0, 1]")));
        }
        total += p;
    }
    let mean = total / n_windows as f64;
    Ok((mean > threshold, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    /// `silence_s` of zeros, `tone_s` of a 0.8-amplitude 440 Hz tone, `silence_s` of zeros.
    fn flanked_tone(silence_s: f64, tone_s: f64, rate: u32) -> AudioBuffer {
        let ns = (silence_s * rate as f64) as usize;
        let nt = (tone_s * rate as f64) as usize;
        let mut x = vec![0.0f32; ns];
        x.extend((0..nt).map(|i| {
            0.8 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / rate as f64).sin() as f32
        }));
        x.extend(vec![0.0f32; ns]);
        AudioBuffer::new(x, rate).unwrap()
    }

    #[test]
    fn finds_tone_between_silences() {
        let b = flanked_tone(1.0, 2.0, 16_000);
        let found = detect_nonsilent(&b, 0.2).unwrap();
        assert_eq!(found.len(), 1);
        assert!((found[0].start - 1.0).abs() <= 0.02);
        assert!((found[0].end - 3.0).abs() <= 0.02);
    }

    #[test]
    fn silent_and_constant_inputs() {
        let s = AudioBuffer::silence(2.0, 8000).unwrap();
        assert!(detect_nonsilent(&s, 0.2).unwrap().is_empty());

        let loud = AudioBuffer::new(vec![0.5; 16_000], 8000).unwrap();
        let found = detect_nonsilent(&loud, 0.2).unwrap();
        assert_eq!(found, vec![iv(0.0, 2.0)]);

        let tiny = AudioBuffer::new(vec![0.5; 10], 8000).unwrap();
        assert!(detect_nonsilent(&tiny, 0.2).unwrap().is_empty());
        assert!(detect_nonsilent(&loud, 1.5).is_err());
    }

    #[test]
    fn threshold_is_gain_invariant() {
        let mut x = flanked_tone(0.5, 1.0, 8000).into_samples();
        // a quieter tail that is partially above threshold
        x.extend((0..8000).map(|i| 0.2 * ((i as f32) * 0.3).sin()));
        let b = AudioBuffer::new(x, 8000).unwrap();
        let base = detect_nonsilent(&b, 0.2).unwrap();
        for g in [0.25f32, 0.5, 2.0, 0.125] {
            assert_eq!(detect_nonsilent(&b.scaled(g), 0.2).unwrap(), base);
        }
    }

    #[test]
    fn merge_and_filter_examples() {
        assert_eq!(
            extract_segments(&[iv(0.0, 4.0), iv(4.5, 12.0)], 10.0, 1.0).unwrap(),
            vec![iv(0.0, 12.0)]
        );
        assert!(extract_segments(&[iv(0.0, 8.0), iv(10.0, 15.0)], 10.0, 1.0)
            .unwrap()
            .is_empty());
        assert!(extract_segments(&[], 10.0, 1.0).unwrap().is_empty());
        // exactly 10 s is not "longer than" 10 s
        assert!(extract_segments(&[iv(0.0, 10.0)], 10.0, 1.0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn merge_rejects_unsorted() {
        assert!(extract_segments(&[iv(5.0, 6.0), iv(0.0, 1.0)], 1.0, 1.0).is_err());
        assert!(extract_segments(&[iv(0.0, 6.0), iv(5.0, 7.0)], 1.0, 1.0).is_err());
    }

    #[test]
    fn gate_examples() {
        let clip = AudioBuffer::new(vec![0.1; 3000], 1000).unwrap();
        let half = ConstantClassifier {
            prob: 0.5,
            window_seconds: 1.0,
        };
        assert_eq!(music_gate(&clip, &half, 0.3).unwrap(), (true, 0.5));
        let low = ConstantClassifier {
            prob: 0.2,
            window_seconds: 1.0,
        };
        let (pass, mean) = music_gate(&clip, &low, 0.3).unwrap();
        assert!(!pass);
        assert!((mean - 0.2).abs() < 1e-15);
        let scripted = ScriptedClassifier::new(vec![0.1, 0.6, 0.2], 1.0);
        let (pass, mean) = music_gate(&clip, &scripted, 0.3).unwrap();
        assert!(!pass);
        assert!((mean - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gate_too_short() {
        let clip = AudioBuffer::new(vec![0.1; 500], 1000).unwrap();
        let c = ConstantClassifier {
            prob: 0.5,
            window_seconds: 1.0,
        };
        assert!(matches!(
            music_gate(&clip, &c, 0.3),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn tonality_separates_tone_from_noise() {
        use rand::{Rng, SeedableRng};
        let c = TonalityClassifier::default();
        let tone = flanked_tone(0.0, 1.0, 16_000);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = AudioBuffer::new(
            (0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect(),
            16_000,
        )
        .unwrap();
        assert!(c.score(&tone).unwrap() > 0.9);
        assert!(c.score(&noise).unwrap() < 0.6);
        assert_eq!(
            c.score(&AudioBuffer::silence(1.0, 16_000).unwrap())
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn segment_json_shape() {
        let list = SegmentList {
            film_id: "doa".into(),
            segments: vec![Segment {
                interval: iv(1.0, 12.5),
                mean_music_prob: Some(0.7),
            }],
        };
        let v = serde_json::to_value(&list).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"film_id": "doa", "segments": [{"start": 1.0, "end": 12.5, "music_prob": 0.7}]})
        );
    }

    /// Brute-force merger over a fine time grid.
    fn brute_merge(ivs: &[Interval], min_len: f64, max_gap: f64) -> Vec<(i64, i64)> {
        // work in integer deciseconds
        let covered: Vec<(i64, i64)> = ivs
            .iter()
            .map(|i| {
                (
                    (i.start * 10.0).round() as i64,
                    (i.end * 10.0).round() as i64,
                )
            })
            .collect();
        let mut groups: Vec<(i64, i64)> = Vec::new();
        for (a, b) in covered {
            if let Some(g) = groups.last_mut() {
                if (a - g.1) as f64 <= max_gap * 10.0 {
                    g.1 = b;
                    continue;
                }
            }
            groups.push((a, b));
        }
        groups
            .into_iter()
            .filter(|(a, b)| (b - a) as f64 > min_len * 10.0)
            .collect()
    }

    proptest::proptest! {
        #[test]
        fn merge_matches_brute_force(steps in proptest::collection::vec((0u32..40, 1u32..80), 0..20)) {
            let mut t = 0i64;
            let mut ivs = Vec::new();
            for (gap, len) in steps {
                let a = t + gap as i64;
                let b = a + len as i64;
                ivs.push(iv(a as f64 / 10.0, b as f64 / 10.0));
                t = b;
            }
            let got = extract_segments(&ivs, 10.0, 1.0).unwrap();
            let want = brute_merge(&ivs, 10.0, 1.0);
            proptest::prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                proptest::prop_assert_eq!(((g.start * 10.0).round() as i64, (g.end * 10.0).round() as i64), *w);
                proptest::prop_assert!(g.duration() > 10.0 + TIME_EPS);
            }
            for w in got.windows(2) {
                proptest::prop_assert!(w[1].start - w[0].end > 1.0 + TIME_EPS);
            }
        }

        #[test]
        fn gate_is_monotone(scores in proptest::collection::vec(0.0f64..0.9, 1..8), bump in 0.0f64..0.1) {
            let clip = AudioBuffer::new(vec![0.1; 1000 * scores.len()], 1000).unwrap();
            let a = ScriptedClassifier::new(scores.clone(), 1.0);
            let b = ScriptedClassifier::new(scores.iter().map(|s| s + bump).collect(), 1.0);
            let (pa, _) = music_gate(&clip, &a, 0.3).unwrap();
            let (pb, _) = music_gate(&clip, &b, 0.3).unwrap();
            proptest::prop_assert!(!pa || pb);
        }
    }
}
