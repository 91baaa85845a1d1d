//! WAV reading (PCM 16/24/32-bit and float32, downmixed to mono) and float32 writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{invalid, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(invalid(format!(
                "{}: unsupported WAV encoding {fmt:?}/{bits} bit",
                path.as_ref().display()
            )))
        }
    };
    AudioBuffer::from_interleaved(&interleaved, spec.channels as usize, spec.sample_rate)
}

fn float_spec(buf: &AudioBuffer) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    }
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let mut w = WavWriter::create(path.as_ref(), float_spec(buf))?;
    for &s in buf.samples() {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}

/// The bytes `write_wav` would produce, for sending over the wire.
pub fn wav_bytes(buf: &AudioBuffer) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    let mut w = WavWriter::new(&mut cursor, float_spec(buf))?;
    for &s in buf.samples() {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(cursor.into_inner())
}

/// Writes a mono 16-bit PCM WAV, clipping to [-1, 1].
pub fn write_wav_pcm16(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path.as_ref(), spec)?;
    for &s in buf.samples() {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let b = AudioBuffer::new(vec![0.0, 0.5, -1.0, 0.25], 32_000).unwrap();
        write_wav(&p, &b).unwrap();
        assert_eq!(read_wav(&p).unwrap(), b);
        assert_eq!(wav_bytes(&b).unwrap(), std::fs::read(&p).unwrap());
    }

    #[test]
    fn stereo_pcm_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for s in [16384i16, 0, -16384, -16384] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let b = read_wav(&p).unwrap();
        assert_eq!(b.sample_rate(), 8000);
        assert_eq!(b.samples(), &[0.25, -0.5]);
    }
}
