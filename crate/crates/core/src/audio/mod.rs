//! Mono audio buffers and the deterministic DSP primitives shared by every
//! pipeline stage.

mod chroma;
mod resample;
pub mod wav;

pub use chroma::{chroma, ChromaMatrix, ChromaParams};
pub use resample::resample;

use crate::error::{invalid, Error, Result};

/// A mono signal with its sample rate. Samples are finite and nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Averages interleaved channels into one.
    pub fn from_interleaved(
        interleaved: &[f32],
        channels: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("channel count must be positive"));
        }
        let mono = interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect();
        Self::new(mono, sample_rate)
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Result<Self> {
        Self::new(
            vec![0.0; (seconds * sample_rate as f64).round() as usize],
            sample_rate,
        )
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Samples in `[start, end)` seconds, clamped to the buffer.
    pub fn slice_seconds(&self, start: f64, end: f64) -> AudioBuffer {
        let sr = self.sample_rate as f64;
        let a = ((start.max(0.0) * sr).round() as usize).min(self.samples.len());
        let b = ((end.max(0.0) * sr).round() as usize).clamp(a, self.samples.len());
        AudioBuffer {
            samples: self.samples[a..b].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f32) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Scales the buffer so that its largest absolute sample is exactly 1.0.
pub fn peak_normalize(buf: &AudioBuffer) -> Result<AudioBuffer> {
    if buf.is_empty() {
        return Err(invalid("cannot normalize an empty buffer"));
    }
    let peak = buf.peak();
    if peak == 0.0 {
        return Err(Error::SilentAudio);
    }
    let mut samples: Vec<f32> = buf.samples.iter().map(|s| s / peak).collect();
    // Division by the peak yields exactly +-1 at the peak sample already; pin
    // it anyway so the contract holds for every float rounding mode.
    if let Some(i) = buf.samples.iter().position(|s| s.abs() == peak) {
        samples[i] = samples[i].signum();
    }
    Ok(AudioBuffer {
        samples,
        sample_rate: buf.sample_rate,
    })
}

/// Keeps at most the first `seconds` of audio.
pub fn truncate(buf: &AudioBuffer, seconds: f64) -> Result<AudioBuffer> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(invalid(format!(
            "truncation length must be positive, got {seconds}"
        )));
    }
    let limit = (seconds * buf.sample_rate as f64).floor() as usize;
    let n = buf.samples.len().min(limit);
    Ok(AudioBuffer {
        samples: buf.samples[..n].to_vec(),
        sample_rate: buf.sample_rate,
    })
}

/// Fixed-length analysis windows over a buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub frames: Vec<Vec<f32>>,
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub origin_rate: u32,
    /// Hop in samples, used to map frame indices back to time.
    pub hop_samples: usize,
    pub frame_samples: usize,
}

impl FrameSeries {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_start(&self, index: usize) -> f64 {
        (index * self.hop_samples) as f64 / self.origin_rate as f64
    }

    pub fn frame_end(&self, index: usize) -> f64 {
        (index * self.hop_samples + self.frame_samples) as f64 / self.origin_rate as f64
    }
}

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Splits the buffer into windows of `frame_len_ms` every `hop_ms`. A trailing
/// partial window is dropped.
pub fn frame(buf: &AudioBuffer, frame_len_ms: f64, hop_ms: f64) -> Result<FrameSeries> {
    if !(frame_len_ms > 0.0) || !(hop_ms > 0.0) {
        return Err(invalid("frame length and hop must be positive"));
    }
    let frame_samples = ms_to_samples(frame_len_ms, buf.sample_rate);
    let hop_samples = ms_to_samples(hop_ms, buf.sample_rate);
    if frame_samples == 0 || hop_samples == 0 {
        return Err(invalid("frame length or hop rounds to zero samples"));
    }
    let n = buf.samples.len();
    let count = if n < frame_samples {
        0
    } else {
        (n - frame_samples) / hop_samples + 1
    };
    let frames = (0..count)
        .map(|i| buf.samples[i * hop_samples..i * hop_samples + frame_samples].to_vec())
        .collect();
    Ok(FrameSeries {
        frames,
        frame_len_ms,
        hop_ms,
        origin_rate: buf.sample_rate,
        hop_samples,
        frame_samples,
    })
}

/// Root-mean-square energy of each frame.
pub fn rms_energy(frames: &FrameSeries) -> Vec<f64> {
    frames
        .frames
        .iter()
        .map(|f| {
            if f.is_empty() {
                return 0.0;
            }
            let ss: f64 = f.iter().map(|&x| (x as f64) * (x as f64)).sum();
            (ss / f.len() as f64).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64, rate: u32, amp: f32) -> AudioBuffer {
        let n = (seconds * rate as f64).round() as usize;
        let s = (0..n)
            .map(|i| {
                amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32
            })
            .collect();
        AudioBuffer::new(s, rate).unwrap()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
        assert!(AudioBuffer::new(vec![f32::NAN], 10).is_err());
    }

    #[test]
    fn downmix_averages_channels() {
        let b = AudioBuffer::from_interleaved(&[1.0, 0.0, 0.5, 0.5], 2, 8).unwrap();
        assert_eq!(b.samples(), &[0.5, 0.5]);
    }

    #[test]
    fn peak_normalize_scales_uniformly() {
        let b = AudioBuffer::new(vec![0.5, -0.25, 0.1], 8).unwrap();
        let n = peak_normalize(&b).unwrap();
        assert_eq!(n.samples(), &[1.0, -0.5, 0.2]);
        assert_eq!(peak_normalize(&n).unwrap(), n);
    }

    #[test]
    fn peak_normalize_rejects_silence() {
        let b = AudioBuffer::new(vec![0.0; 4], 8).unwrap();
        assert!(matches!(peak_normalize(&b), Err(Error::SilentAudio)));
        let e = AudioBuffer::new(vec![], 8).unwrap();
        assert!(peak_normalize(&e).is_err());
    }

    #[test]
    fn truncate_keeps_prefix() {
        let b = AudioBuffer::new((0..60).map(|i| i as f32 / 100.0).collect(), 1).unwrap();
        let t = truncate(&b, 30.0).unwrap();
        assert_eq!(t.len(), 30);
        assert_eq!(t.samples(), &b.samples()[..30]);
        let short = AudioBuffer::new(vec![0.1; 10], 1).unwrap();
        assert_eq!(truncate(&short, 30.0).unwrap(), short);
        assert!(truncate(&b, 0.0).is_err());
    }

    #[test]
    fn frame_counts() {
        let b = AudioBuffer::new(vec![0.0; 1000], 1000).unwrap();
        let f = frame(&b, 20.0, 20.0).unwrap();
        assert_eq!(f.len(), 50);
        assert!(f.frames.iter().all(|x| x.len() == 20));

        let one = AudioBuffer::new(vec![0.0; 20], 1000).unwrap();
        assert_eq!(frame(&one, 20.0, 20.0).unwrap().len(), 1);
        let short = AudioBuffer::new(vec![0.0; 15], 1000).unwrap();
        assert!(frame(&short, 20.0, 20.0).unwrap().is_empty());
        assert!(frame(&b, 0.0, 20.0).is_err());
    }

    #[test]
    fn rms_cases() {
        let b = AudioBuffer::new(vec![0.5; 40], 1000).unwrap();
        let e = rms_energy(&frame(&b, 20.0, 20.0).unwrap());
        assert!(e.iter().all(|&x| (x - 0.5).abs() < 1e-12));

        let z = AudioBuffer::new(vec![0.0; 40], 1000).unwrap();
        assert!(rms_energy(&frame(&z, 20.0, 20.0).unwrap())
            .iter()
            .all(|&x| x == 0.0));

        // 100 Hz at 8 kHz: a 20 ms frame holds exactly two periods.
        let s = sine(100.0, 0.2, 8000, 1.0);
        let e = rms_energy(&frame(&s, 20.0, 20.0).unwrap());
        for x in e {
            assert!((x - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6, "{x}");
        }
    }

    proptest::proptest! {
        #[test]
        fn frame_count_formula(n in 0usize..5000, l in 1usize..200, h in 1usize..200) {
            // 1 kHz makes milliseconds and samples coincide.
            let b = AudioBuffer::new(vec![0.0; n], 1000).unwrap();
            let f = frame(&b, l as f64, h as f64).unwrap();
            let expected = if n < l { 0 } else { (n - l) / h + 1 };
            proptest::prop_assert_eq!(f.len(), expected);
        }

        #[test]
        fn normalize_scale_invariant(xs in proptest::collection::vec(-1.0f32..1.0, 1..64), c in 0.01f32..100.0) {
            let b = AudioBuffer::new(xs, 100).unwrap();
            if b.peak() > 1e-3 {
                let a = peak_normalize(&b).unwrap();
                let s = peak_normalize(&b.scaled(c)).unwrap();
                for (x, y) in a.samples().iter().zip(s.samples()) {
                    proptest::prop_assert!((x - y).abs() < 1e-5);
                }
                proptest::prop_assert_eq!(s.peak(), 1.0);
            }
        }
    }
}
