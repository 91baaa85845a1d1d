//! Mood taxonomy, caption collection and the text prompt template.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoodLabel {
    Happy,
    Sad,
    Nervous,
    Peaceful,
}

/// Valence/arousal quadrant of the circumplex model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Quadrant {
    Hvha,
    Lvla,
    Lvha,
    Hvla,
}

impl Quadrant {
    pub fn from_axes(valence_high: bool, arousal_high: bool) -> Self {
        match (valence_high, arousal_high) {
            (true, true) => Quadrant::Hvha,
            (false, false) => Quadrant::Lvla,
            (false, true) => Quadrant::Lvha,
            (true, false) => Quadrant::Hvla,
        }
    }

    pub fn valence_high(self) -> bool {
        matches!(self, Quadrant::Hvha | Quadrant::Hvla)
    }

    pub fn arousal_high(self) -> bool {
        matches!(self, Quadrant::Hvha | Quadrant::Lvha)
    }

    pub fn code(self) -> &'static str {
        match self {
            Quadrant::Hvha => "HVHA",
            Quadrant::Lvla => "LVLA",
            Quadrant::Lvha => "LVHA",
            Quadrant::Hvla => "HVLA",
        }
    }
}

impl MoodLabel {
    pub const ALL: [MoodLabel; 4] = [
        MoodLabel::Happy,
        MoodLabel::Sad,
        MoodLabel::Nervous,
        MoodLabel::Peaceful,
    ];

    pub fn quadrant(self) -> Quadrant {
        match self {
            MoodLabel::Happy => Quadrant::Hvha,
            MoodLabel::Sad => Quadrant::Lvla,
            MoodLabel::Nervous => Quadrant::Lvha,
            MoodLabel::Peaceful => Quadrant::Hvla,
        }
    }

    pub fn from_quadrant(q: Quadrant) -> Self {
        match q {
            Quadrant::Hvha => MoodLabel::Happy,
            Quadrant::Lvla => MoodLabel::Sad,
            Quadrant::Lvha => MoodLabel::Nervous,
            Quadrant::Hvla => MoodLabel::Peaceful,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MoodLabel::Happy => "happy",
            MoodLabel::Sad => "sad",
            MoodLabel::Nervous => "nervous",
            MoodLabel::Peaceful => "peaceful",
        }
    }
}

pub fn mood_from_quadrant(valence_high: bool, arousal_high: bool) -> MoodLabel {
    MoodLabel::from_quadrant(Quadrant::from_axes(valence_high, arousal_high))
}

impl fmt::Display for MoodLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MoodLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MoodLabel::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown mood `{s}`")))
    }
}

/// One row of the mood/quadrant table shared with annotation front ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoodEntry {
    pub mood: MoodLabel,
    pub quadrant: String,
    pub valence_high: bool,
    pub arousal_high: bool,
}

pub fn mood_table() -> Vec<MoodEntry> {
    MoodLabel::ALL
        .into_iter()
        .map(|mood| {
            let q = mood.quadrant();
            MoodEntry {
                mood,
                quadrant: q.code().to_string(),
                valence_high: q.valence_high(),
                arousal_high: q.arousal_high(),
            }
        })
        .collect()
}

pub trait Captioner: Send + Sync {
    fn caption(&self, audio: &AudioBuffer) -> Result<String>;
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, instruction: &str, captions: &[String]) -> Result<String>;
}

pub const SEGMENT_SECONDS: f64 = 10.0;
pub const SEGMENT_COUNT: usize = 3;

/// Captions the three consecutive 10 s segments of the first 30 s.
pub fn segment_captions(track: &AudioBuffer, captioner: &dyn Captioner) -> Result<Vec<String>> {
    let required = SEGMENT_SECONDS * SEGMENT_COUNT as f64;
    let needed = (required * track.sample_rate() as f64).round() as usize;
    if track.len() < needed {
        return Err(Error::TooShort {
            duration: track.duration(),
            required,
        });
    }
    (0..SEGMENT_COUNT)
        .map(|i| {
            let start = i as f64 * SEGMENT_SECONDS;
            captioner.caption(&track.slice_seconds(start, start + SEGMENT_SECONDS))
        })
        .collect()
}

pub const SUMMARY_INSTRUCTION: &str =
    "Summarize the description of each song in one sentence from 0 to 30 seconds.";
pub const QUALITY_EXCLUSION: &str = "Exclude any mention of audio quality.";

pub fn summary_instruction(exclude_quality: bool) -> String {
    if exclude_quality {
        format!("{SUMMARY_INSTRUCTION} {QUALITY_EXCLUSION}")
    } else {
        SUMMARY_INSTRUCTION.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if attempt >= self.attempts.max(1) => return Err(e),
                Err(e) => {
                    log::warn!("attempt {attempt} failed: {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

pub fn summarize_caption(
    captions: &[String],
    summarizer: &dyn Summarizer,
    exclude_quality: bool,
    retry: &RetryPolicy,
) -> Result<String> {
    if captions.len() != SEGMENT_COUNT {
        return Err(invalid(format!(
            "expected {SEGMENT_COUNT} captions, got {}",
            captions.len()
        )));
    }
    let instruction = summary_instruction(exclude_quality);
    retry.run(|| summarizer.summarize(&instruction, captions))
}

/// Trims whitespace and trailing periods, then appends exactly one period.
pub fn normalize_caption(caption: &str) -> Result<String> {
    let core = caption
        .trim()
        .trim_end_matches(|c: char| c == '.' || c.is_whitespace());
    if core.is_empty() {
        return Err(invalid("caption is empty"));
    }
    Ok(format!("{core}."))
}

pub fn build_prompt(mood: MoodLabel, caption: &str) -> Result<String> {
    Ok(format!(
        "A film soundtrack for a {mood} scene. {}",
        normalize_caption(caption)?
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryCall {
    pub instruction: String,
    pub captions: Vec<String>,
}

/// Joins captions with spaces and records every call.
#[derive(Debug, Default)]
pub struct EchoSummarizer {
    calls: Mutex<Vec<SummaryCall>>,
}

impl EchoSummarizer {
    pub fn calls(&self) -> Vec<SummaryCall> {
        self.calls.lock().expect("call log poisoned").clone()
    }
}

impl Summarizer for EchoSummarizer {
    fn summarize(&self, instruction: &str, captions: &[String]) -> Result<String> {
        self.calls
            .lock()
            .expect("call log poisoned")
            .push(SummaryCall {
                instruction: instruction.to_string(),
                captions: captions.to_vec(),
            });
        Ok(captions.join(" "))
    }
}

/// Offline captioner describing loudness and brightness of the audio.
#[derive(Debug, Default, Clone, Copy)]
pub struct DescriptorCaptioner;

impl Captioner for DescriptorCaptioner {
    fn caption(&self, audio: &AudioBuffer) -> Result<String> {
        let s = audio.samples();
        if s.is_empty() {
            return Ok("Silence".into());
        }
        let rms = (s.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
        let crossings = s
            .windows(2)
            .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
            .count();
        let zcr_hz = crossings as f64 / 2.0 / audio.duration().max(f64::MIN_POSITIVE);
        let dynamics = match rms {
            r if r < 0.05 => "Quiet",
            r if r < 0.25 => "Moderately loud",
            _ => "Loud",
        };
        let register = match zcr_hz {
            z if z < 250.0 => "low-register",
            z if z < 1000.0 => "mid-register",
            _ => "bright",
        };
        Ok(format!("{dynamics} {register} instrumental music"))
    }
}
