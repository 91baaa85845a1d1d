use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{resample, AudioBuffer};
use crate::error::{invalid, Result};

pub const PITCH_CLASSES: usize = 12;

const MIN_FREQ: f64 = 55.0;
const MAX_FREQ: f64 = 8000.0;
/// Windowed frames with RMS below this are treated as digital silence.
const SILENCE_RMS: f64 = 1e-6;

/// Pitch-class energy per analysis frame, stored column-major (one `[f64; 12]`
/// per frame, class 0 = C).
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaMatrix {
    columns: Vec<[f64; PITCH_CLASSES]>,
    frame_times: Vec<f64>,
}

impl ChromaMatrix {
    /// Builds a matrix from raw columns, L2-normalizing each non-zero column.
    pub fn from_columns(columns: Vec<[f64; PITCH_CLASSES]>, frame_times: Vec<f64>) -> Result<Self> {
        if columns.len() != frame_times.len() {
            return Err(invalid("one frame time per chroma column required"));
        }
        if columns.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("chroma values must be finite and non-negative"));
        }
        let columns = columns.into_iter().map(normalize_column).collect();
        Ok(Self {
            columns,
            frame_times,
        })
    }

    pub fn columns(&self) -> &[[f64; PITCH_CLASSES]] {
        &self.columns
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn argmax(&self, t: usize) -> Option<usize> {
        let col = &self.columns[t];
        if col.iter().all(|&v| v == 0.0) {
            return None;
        }
        col.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }

    /// Sub-range of frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> ChromaMatrix {
        ChromaMatrix {
            columns: self.columns[start..end].to_vec(),
            frame_times: self.frame_times[start..end].to_vec(),
        }
    }
}

fn normalize_column(mut col: [f64; PITCH_CLASSES]) -> [f64; PITCH_CLASSES] {
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        col.iter_mut().for_each(|v| *v /= norm);
    }
    col
}

/// Pitch class (C = 0) of a frequency in Hz.
pub fn pitch_class(freq: f64) -> usize {
    let semis_from_a = (12.0 * (freq / 440.0).log2()).round() as i64;
    (semis_from_a + 9).rem_euclid(12) as usize
}

/// Short-time chroma of `buf` using a Hann-windowed FFT of `fft_size` samples
/// every `hop` samples. Only bins between 55 Hz and 8 kHz contribute, and
/// magnitudes (not power) are accumulated.
pub fn chroma(buf: &AudioBuffer, fft_size: usize, hop: usize) -> Result<ChromaMatrix> {
    if fft_size == 0 || !fft_size.is_power_of_two() {
        return Err(invalid(format!(
            "fft size must be a power of two, got {fft_size}"
        )));
    }
    if hop == 0 {
        return Err(invalid("hop must be positive"));
    }
    let rate = buf.sample_rate() as f64;
    let samples = buf.samples();
    let n_frames = if samples.len() >= fft_size {
        (samples.len() - fft_size) / hop + 1
    } else if samples.is_empty() {
        0
    } else {
        1
    };

    let window: Vec<f64> = (0..fft_size)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / fft_size as f64).cos())
        .collect();
    let bin_class: Vec<Option<usize>> = (0..=fft_size / 2)
        .map(|k| {
            let f = k as f64 * rate / fft_size as f64;
            (MIN_FREQ..=MAX_FREQ).contains(&f).then(|| pitch_class(f))
        })
        .collect();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut scratch = vec![Complex::new(0.0, 0.0); fft_size];
    let mut columns = Vec::with_capacity(n_frames);
    let mut times = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        let mut energy = 0.0;
        for (i, slot) in scratch.iter_mut().enumerate() {
            let x = samples.get(start + i).copied().unwrap_or(0.0) as f64 * window[i];
            energy += x * x;
            *slot = Complex::new(x, 0.0);
        }
        times.push(start as f64 / rate);
        let mut col = [0.0; PITCH_CLASSES];
        if (energy / fft_size as f64).sqrt() < SILENCE_RMS {
            columns.push(col);
            continue;
        }
        fft.process(&mut scratch);
        for (k, class) in bin_class.iter().enumerate() {
            if let Some(c) = class {
                col[*c] += scratch[k].norm();
            }
        }
        columns.push(col);
    }
    ChromaMatrix::from_columns(columns, times)
}

/// Chroma analysis settings, including the rate audio is resampled to first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChromaParams {
    pub analysis_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for ChromaParams {
    fn default() -> Self {
        Self {
            analysis_rate: 22_050,
            fft_size: 4096,
            hop: 2048,
        }
    }
}

impl ChromaParams {
    pub fn compute(&self, buf: &AudioBuffer) -> Result<ChromaMatrix> {
        let at_rate = resample(buf, self.analysis_rate)?;
        chroma(&at_rate, self.fft_size, self.hop)
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.analysis_rate as f64
    }
}
