//! Training samples and the encoders that produce them: a µ-law audio
//! tokenizer, a fixed random text-embedding table, video-embedding sources,
//! and a synthetic dataset whose targets depend only on the video input.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{TextCondition, VideoEmbedding};
use super::matrix::Matrix;
use crate::audio::{resample, AudioBuffer};
use crate::error::{invalid, Result};
use crate::tensor_io;

/// Token id reserved for the start of every sequence.
pub const BOS: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    /// Target tokens, all `> BOS`.
    pub tokens: Vec<usize>,
    pub text: TextCondition,
    pub video: Option<VideoEmbedding>,
}

impl TrainSample {
    /// Teacher-forcing pair: inputs are BOS followed by all but the last target.
    pub fn inputs_targets(&self) -> (Vec<usize>, &[usize]) {
        let mut inputs = Vec::with_capacity(self.tokens.len());
        inputs.push(BOS);
        inputs.extend_from_slice(&self.tokens[..self.tokens.len().saturating_sub(1)]);
        (inputs, &self.tokens)
    }
}

/// Scalar audio quantizer: resample to `rate`, µ-law compress, quantize to
/// `levels` bins. Tokens are offset by one so that [`BOS`] stays free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuLawTokenizer {
    pub rate: u32,
    pub levels: usize,
    pub max_tokens: usize,
}

impl Default for MuLawTokenizer {
    fn default() -> Self {
        Self {
            rate: 1000,
            levels: 256,
            max_tokens: 128,
        }
    }
}

impl MuLawTokenizer {
    pub fn vocab_size(&self) -> usize {
        self.levels + 1
    }

    pub fn encode(&self, audio: &AudioBuffer) -> Result<Vec<usize>> {
        if self.levels < 2 {
            return Err(invalid("µ-law tokenizer needs at least two levels"));
        }
        let low = resample(audio, self.rate)?;
        let mu = (self.levels - 1) as f64;
        Ok(low
            .samples()
            .iter()
            .take(self.max_tokens)
            .map(|&s| {
                let x = (s as f64).clamp(-1.0, 1.0);
                let y = x.signum() * (1.0 + mu * x.abs()).ln() / (1.0 + mu).ln();
                let q = ((y + 1.0) / 2.0 * mu).round() as usize;
                q.min(self.levels - 1) + 1
            })
            .collect())
    }
}

/// Stand-in text encoder: words hash into a fixed random embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingTable {
    table: Matrix,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl TextEmbeddingTable {
    pub fn new(vocab: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
        Self {
            table: Matrix::gaussian(vocab.max(1), dim, 1.0, &mut rng),
        }
    }

    /// One row per word (lowercased alphanumeric runs); empty text yields one row.
    pub fn encode(&self, text: &str) -> TextCondition {
        let vocab = self.table.rows() as u64;
        let mut ids: Vec<usize> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| (fnv1a(&w.to_lowercase()) % vocab) as usize)
            .collect();
        if ids.is_empty() {
            ids.push(0);
        }
        TextCondition(self.table.select_rows(&ids))
    }
}

/// Source of per-clip video embeddings.
pub trait VideoEncoder {
    fn encode(&self, clip_id: &str) -> Result<VideoEmbedding>;
}

/// Reads `<dir>/<clip_id>.f32` with its `[T_v, n]` shape sidecar.
#[derive(Debug, Clone)]
pub struct PrecomputedVideo {
    pub dir: PathBuf,
}

impl VideoEncoder for PrecomputedVideo {
    fn encode(&self, clip_id: &str) -> Result<VideoEmbedding> {
        let t = tensor_io::read_tensor(&self.dir.join(clip_id))?;
        let (r, c) = t.rows_cols()?;
        Ok(VideoEmbedding(Matrix::from_vec(
            r,
            c,
            t.data.iter().map(|&v| v as f64).collect(),
        )?))
    }
}

/// Seeded random embeddings, stable per clip id.
#[derive(Debug, Clone, Copy)]
pub struct StubVideo {
    pub seed: u64,
    pub tokens: usize,
    pub dim: usize,
}

impl VideoEncoder for StubVideo {
    fn encode(&self, clip_id: &str) -> Result<VideoEmbedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(clip_id));
        Ok(VideoEmbedding(Matrix::gaussian(
            self.tokens,
            self.dim,
            1.0,
            &mut rng,
        )))
    }
}

pub fn video_dir_encoder(dir: &Path) -> PrecomputedVideo {
    PrecomputedVideo {
        dir: dir.to_path_buf(),
    }
}

/// Shape of the synthetic video-conditioned dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    pub seq_len: usize,
    pub video_tokens: usize,
    pub video_dim: usize,
    pub text_dim: usize,
    /// Probability that a token is drawn from the class's own token pair.
    pub signal: f64,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples: 80,
            classes: 4,
            seq_len: 12,
            video_tokens: 4,
            video_dim: 6,
            text_dim: 16,
            signal: 0.75,
            noise: 0.3,
        }
    }
}

impl SyntheticSpec {
    /// BOS plus two tokens per class.
    pub fn vocab_size(&self) -> usize {
        1 + 2 * self.classes
    }
}

/// Samples whose token statistics depend only on a hidden class that is
/// visible solely through the video embedding. The text condition is the same
/// uninformative prompt for every sample.
pub fn synthetic_video_dataset(spec: &SyntheticSpec, seed: u64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Matrix> = (0..spec.classes)
        .map(|_| Matrix::gaussian(1, spec.video_dim, 1.0, &mut rng))
        .collect();
    let text = TextEmbeddingTable::new(64, spec.text_dim, seed).encode("a film soundtrack");
    let data_tokens = 2 * spec.classes;
    (0..spec.samples)
        .map(|i| {
            let class = rng.random_range(0..spec.classes);
            let tokens = (0..spec.seq_len)
                .map(|_| {
                    if rng.random::<f64>() < spec.signal {
                        1 + 2 * class + rng.random_range(0..2)
                    } else {
                        1 + rng.random_range(0..data_tokens)
                    }
                })
                .collect();
            let mut video = Matrix::zeros(spec.video_tokens, spec.video_dim);
            let noise = Matrix::gaussian(spec.video_tokens, spec.video_dim, spec.noise, &mut rng);
            for r in 0..spec.video_tokens {
                for c in 0..spec.video_dim {
                    video.set(r, c, prototypes[class].get(0, c) + noise.get(r, c));
                }
            }
            TrainSample {
                id: format!("syn{i:04}"),
                tokens,
                text: text.clone(),
                video: Some(VideoEmbedding(video)),
            }
        })
        .collect()
}

/// Reassigns video embeddings across samples with a seeded permutation,
/// destroying the sample/video correspondence.
pub fn shuffle_videos(samples: &[TrainSample], seed: u64) -> Vec<TrainSample> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5f5f));
    samples
        .iter()
        .zip(&order)
        .map(|(s, &j)| TrainSample {
            video: samples[j].video.clone(),
            ..s.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mulaw_range_and_extremes() {
        let tok = MuLawTokenizer {
            rate: 10,
            levels: 256,
            max_tokens: 100,
        };
        let audio =
            AudioBuffer::new(vec![-1.0, 0.0, 1.0, 0.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0], 10).unwrap();
        let t = tok.encode(&audio).unwrap();
        assert_eq!(t[0], 1);
        assert_eq!(t[2], 256);
        assert!(t.iter().all(|&x| (1..=256).contains(&x)));
        assert_eq!(tok.vocab_size(), 257);
    }

    #[test]
    fn mulaw_truncates() {
        let tok = MuLawTokenizer {
            rate: 100,
            levels: 16,
            max_tokens: 5,
        };
        let audio = AudioBuffer::new(vec![0.1; 100], 100).unwrap();
        assert_eq!(tok.encode(&audio).unwrap().len(), 5);
    }

    #[test]
    fn text_table_is_deterministic() {
        let t = TextEmbeddingTable::new(32, 4, 1);
        let a = t.encode("A film soundtrack for a happy scene.");
        assert_eq!(a.0.rows(), 7);
        assert_eq!(
            a,
            TextEmbeddingTable::new(32, 4, 1).encode("a FILM soundtrack for a happy scene")
        );
        assert_eq!(t.encode("").0.rows(), 1);
    }

    #[test]
    fn stub_video_stable_per_id() {
        let v = StubVideo {
            seed: 3,
            tokens: 2,
            dim: 5,
        };
        assert_eq!(v.encode("c1").unwrap(), v.encode("c1").unwrap());
        assert_ne!(v.encode("c1").unwrap(), v.encode("c2").unwrap());
    }

    #[test]
    fn precomputed_video_reads_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        tensor_io::write_tensor(
            &dir.path().join("clip7"),
            &[2, 3],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let v = video_dir_encoder(dir.path()).encode("clip7").unwrap();
        assert_eq!(v.0.shape(), (2, 3));
        assert_eq!(v.0.get(1, 2), 6.0);
    }

    #[test]
    fn synthetic_tokens_follow_class() {
        let spec = SyntheticSpec::default();
        let data = synthetic_video_dataset(&spec, 5);
        assert_eq!(data.len(), spec.samples);
        for s in &data {
            assert!(s.tokens.iter().all(|&t| t >= 1 && t < spec.vocab_size()));
            let (inputs, targets) = s.inputs_targets();
            assert_eq!(inputs[0], BOS);
            assert_eq!(inputs.len(), targets.len());
        }
        let shuffled = shuffle_videos(&data, 5);
        assert_eq!(shuffled.len(), data.len());
        assert!(data.iter().zip(&shuffled).any(|(a, b)| a.video != b.video));
        assert!(data
            .iter()
            .zip(&shuffled)
            .all(|(a, b)| a.tokens == b.tokens));
    }
}
