use std::f64::consts::PI;

use super::AudioBuffer;
use crate::error::{invalid, Result};

/// Zero crossings of the sinc kernel on each side, measured at the lower rate.
const ZERO_CROSSINGS: usize = 32;
/// Rational ratios with more phases than this fall back to direct evaluation.
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let t = PI * (x + 1.0);
    0.42 - 0.5 * t.cos() + 0.08 * (2.0 * t).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

struct Kernel {
    /// Cutoff as a fraction of the source Nyquist rate.
    cutoff: f64,
    half_width: f64,
}

impl Kernel {
    fn weight(&self, distance: f64) -> f64 {
        self.cutoff * sinc(self.cutoff * distance) * blackman(distance / self.half_width)
    }
}

/// Band-limited windowed-sinc resampling. The anti-aliasing cutoff sits at the
/// Nyquist frequency of the lower of the two rates.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(invalid("target sample rate must be positive"));
    }
    let src_rate = buf.sample_rate();
    if target_rate == src_rate {
        return Ok(buf.clone());
    }
    let input = buf.samples();
    let n_out = (input.len() as f64 * target_rate as f64 / src_rate as f64).round() as usize;

    let cutoff = (target_rate as f64 / src_rate as f64).min(1.0) * 0.97;
    let kernel = Kernel {
        cutoff,
        half_width: ZERO_CROSSINGS as f64 / cutoff,
    };
    let reach = kernel.half_width.ceil() as i64;

    let g = gcd(src_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (src_rate as u64 / g) as usize;

    let taps = (2 * reach + 1) as usize;
    let table: Option<Vec<f64>> = (up <= MAX_TABLE_PHASES).then(|| {
        let mut t = vec![0.0; up * taps];
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            for (j, k) in (-reach..=reach).enumerate() {
                t[phase * taps + j] = kernel.weight(frac - k as f64);
            }
        }
        t
    });

    let len = input.len() as i64;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let num = j as u64 * down as u64;
        let base = (num / up as u64) as i64;
        let phase = (num % up as u64) as usize;
        let frac = phase as f64 / up as f64;
        let mut acc = 0.0f64;
        for (t, k) in (-reach..=reach).enumerate() {
            let i = base + k;
            if i < 0 || i >= len {
                continue;
            }
            let w = match &table {
                Some(tab) => tab[phase * taps + t],
                None => kernel.weight(frac - k as f64),
            };
            acc += w * input[i as usize] as f64;
        }
        out.push(acc as f32);
    }
    AudioBuffer::new(out, target_rate)
}
