use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{SyntheticSpec, TrainSample};
use super::decoder::{DecoderConfig, ToyDecoder, TrainMode};
use super::matrix::Matrix;
use super::optim::{AdamW, EarlyStopping, WarmupCosine};
use crate::error::{invalid, io_err, Error, Result};
use crate::tensor_io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub min_lr: f64,
    pub batch_size: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    /// Fraction of samples held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            betas: (0.9, 0.999),
            weight_decay: 1e-2,
            warmup_steps: 100,
            min_lr: 0.0,
            batch_size: 1,
            patience_epochs: 3,
            max_epochs: 50,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr", self.lr), ("val_fraction", self.val_fraction)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.val_fraction >= 1.0 {
            return Err(invalid("val_fraction must be below 1"));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return Err(invalid("betas must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || self.min_lr < 0.0 {
            return Err(invalid("weight_decay and min_lr must be non-negative"));
        }
        if self.batch_size == 0 || self.patience_epochs == 0 || self.max_epochs == 0 {
            return Err(invalid(
                "batch_size, patience_epochs and max_epochs must be positive",
            ));
        }
        Ok(())
    }
}

/// Train/validation sizes for `n` samples: the validation share is rounded
/// and clamped so that both sides are non-empty.
pub fn split_sizes(n: usize, val_fraction: f64) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    Ok((n - val, val))
}

/// Seeded shuffle followed by a train/validation cut.
pub fn split_dataset(
    samples: &[TrainSample],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainSample>, Vec<TrainSample>)> {
    let (n_train, _) = split_sizes(samples.len(), val_fraction)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate at the last optimizer step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    pub steps: u64,
}

pub fn mean_loss(model: &ToyDecoder, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        let (inputs, targets) = s.inputs_targets();
        total += model.loss(&inputs, targets, &s.text, s.video.as_ref())?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains the parameters selected by `mode` in place. Early stopping watches
/// validation loss; the best-scoring weights are restored before returning.
pub fn train(
    model: &mut ToyDecoder,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainReport> {
    cfg.validate()?;
    let (train_set, val_set) = split_dataset(samples, cfg.val_fraction, cfg.seed)?;
    let wrt = model.trainable_parameters(mode);
    if wrt.is_empty() {
        return Err(invalid(format!("no trainable parameters in {mode} mode")));
    }

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let schedule = WarmupCosine {
        peak: cfg.lr,
        floor: cfg.min_lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: steps_per_epoch * cfg.max_epochs as u64,
    };
    let mut opt = AdamW::new(cfg.betas.0, cfg.betas.1, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience_epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let snapshot = |m: &ToyDecoder| -> BTreeMap<String, Matrix> {
        wrt.iter()
            .map(|n| (n.clone(), m.param(n).expect("trainable name").clone()))
            .collect()
    };

    let initial_val_loss = mean_loss(model, &val_set)?;
    let mut best = snapshot(model);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: BTreeMap<String, Matrix> = BTreeMap::new();
            for &i in batch {
                let s = &train_set[i];
                let (inputs, targets) = s.inputs_targets();
                let (loss, grads) =
                    model.loss_and_grads(&inputs, targets, &s.text, s.video.as_ref(), &wrt)?;
                epoch_loss += loss;
                for (name, g) in grads {
                    match acc.get_mut(&name) {
                        Some(a) => a.add_assign(&g),
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f64;
                for g in acc.values_mut() {
                    *g = g.scale(inv);
                }
            }
            lr = schedule.lr(opt.steps() + 1);
            opt.step(lr, model.params_mut(), &acc);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = mean_loss(model, &val_set)?;
        if !val_loss.is_finite() {
            log::warn!("epoch {epoch}: validation loss is not finite");
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let stop = stopper.observe(val_loss);
        if stopper.improved_last() {
            best = snapshot(model);
        }
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {lr:.3e}");
        if stop {
            break;
        }
    }

    for (name, value) in best {
        model.set_param(&name, value)?;
    }
    Ok(TrainReport {
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        initial_val_loss,
        steps: opt.steps(),
    })
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.lr
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some("epoch,train_loss,val_loss,lr") {
        return Err(invalid(format!(
            "{}: unexpected history header",
            path.display()
        )));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || invalid(format!("{}: malformed history row `{l}`", path.display()));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: f[1].parse().map_err(|_| bad())?,
                val_loss: f[2].parse().map_err(|_| bad())?,
                lr: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Writes `config.json` and one float32 tensor per parameter under `tensors/`.
pub fn save_checkpoint(model: &ToyDecoder, dir: &Path) -> Result<()> {
    let tensors = dir.join("tensors");
    fs::create_dir_all(&tensors).map_err(io_err(&tensors))?;
    let cfg_path = dir.join("config.json");
    let mut f = fs::File::create(&cfg_path).map_err(io_err(&cfg_path))?;
    f.write_all(&serde_json::to_vec_pretty(model.config())?)
        .map_err(io_err(&cfg_path))?;
    for (name, p) in model.params() {
        let m = &p.value;
        tensor_io::write_tensor(&tensors.join(name), &[m.rows(), m.cols()], &m.to_f32())?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ToyDecoder> {
    let cfg_path = dir.join("config.json");
    let config: DecoderConfig =
        serde_json::from_slice(&fs::read(&cfg_path).map_err(io_err(&cfg_path))?)?;
    let mut stored = BTreeMap::new();
    for (name, stem) in tensor_io::list_tensors(&dir.join("tensors"))? {
        let t = tensor_io::read_tensor(&stem)?;
        let (r, c) = t.rows_cols()?;
        stored.insert(
            name,
            Matrix::from_vec(r, c, t.data.iter().map(|&v| v as f64).collect())?,
        );
    }
    ToyDecoder::from_params(config, stored)
}

/// Validation losses from training the same adapter model on correctly paired
/// video and on video shuffled across samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningOutcome {
    pub paired_val_loss: f64,
    pub shuffled_val_loss: f64,
}

pub fn conditioning_run(
    decoder: &DecoderConfig,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<ConditioningOutcome> {
    let shuffled = super::data::shuffle_videos(samples, cfg.seed);
    let mut paired_model = ToyDecoder::new(decoder.clone())?;
    let paired = train(&mut paired_model, samples, cfg, TrainMode::Adapter)?;
    let mut control_model = ToyDecoder::new(decoder.clone())?;
    let control = train(&mut control_model, &shuffled, cfg, TrainMode::Adapter)?;
    Ok(ConditioningOutcome {
        paired_val_loss: paired.best_val_loss,
        shuffled_val_loss: control.best_val_loss,
    })
}

/// Model, data and optimizer settings for the video-conditioning experiment:
/// small enough to train on CPU in seconds per run.
pub fn conditioning_fixture() -> (DecoderConfig, SyntheticSpec, TrainConfig) {
    let spec = SyntheticSpec {
        samples: 100,
        text_dim: 16,
        ..Default::default()
    };
    let decoder = DecoderConfig {
        vocab_size: spec.vocab_size(),
        d_model: 16,
        n_heads: 2,
        d_head: 8,
        n_layers: 2,
        d_ff: 32,
        max_len: spec.seq_len,
        video_dim: spec.video_dim,
        ..Default::default()
    };
    let train = TrainConfig {
        lr: 3e-3,
        warmup_steps: 20,
        max_epochs: 15,
        ..Default::default()
    };
    (decoder, spec, train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::data::{synthetic_video_dataset, SyntheticSpec};
    use crate::model::decoder::AlphaInit;

    #[test]
    fn split_counts() {
        assert_eq!(split_sizes(100, 0.1).unwrap(), (90, 10));
        assert_eq!(split_sizes(10, 0.1).unwrap(), (9, 1));
        assert_eq!(split_sizes(5, 0.1).unwrap(), (4, 1));
        assert_eq!(split_sizes(2, 0.1).unwrap(), (1, 1));
        assert_eq!(split_sizes(25, 0.1).unwrap(), (22, 3));
        assert!(matches!(split_sizes(1, 0.1), Err(Error::EmptyDataset)));
    }

    fn tiny_setup() -> (DecoderConfig, Vec<TrainSample>) {
        let spec = SyntheticSpec {
            samples: 12,
            seq_len: 6,
            text_dim: 8,
            ..Default::default()
        };
        let cfg = DecoderConfig {
            vocab_size: spec.vocab_size(),
            d_model: 8,
            n_heads: 2,
            d_head: 4,
            n_layers: 1,
            d_ff: 8,
            max_len: 8,
            video_dim: spec.video_dim,
            alpha_init: AlphaInit::Random,
            ..Default::default()
        };
        (cfg, synthetic_video_dataset(&spec, 1))
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (_, data) = tiny_setup();
        let (a, b) = split_dataset(&data, 0.1, 3).unwrap();
        assert_eq!((a.len(), b.len()), (11, 1));
        assert!(a.iter().all(|s| s.id != b[0].id));
        assert_eq!(split_dataset(&data, 0.1, 3).unwrap().1[0].id, b[0].id);
    }

    #[test]
    fn training_records_history_and_keeps_base_frozen() {
        let (dcfg, data) = tiny_setup();
        let mut model = ToyDecoder::new(dcfg).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            lr: 1e-2,
            warmup_steps: 3,
            max_epochs: 4,
            ..Default::default()
        };
        let report = train(&mut model, &data, &cfg, TrainMode::Adapter).unwrap();
        assert!(!report.history.is_empty());
        assert_eq!(report.history[0].epoch, 1);
        let adapters = model.trainable_parameters(TrainMode::Adapter);
        for (name, p) in model.params() {
            if !adapters.contains(name) {
                assert_eq!(p.value, before.params()[name].value, "{name}");
            }
        }
        let best = report
            .history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, best);
    }

    #[test]
    fn lora_mode_without_rank_is_rejected() {
        let (dcfg, data) = tiny_setup();
        let mut model = ToyDecoder::new(dcfg).unwrap();
        assert!(train(&mut model, &data, &TrainConfig::default(), TrainMode::Lora).is_err());
    }

    #[test]
    fn checkpoint_and_history_round_trip() {
        let (dcfg, _) = tiny_setup();
        let model = ToyDecoder::new(dcfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.config(), model.config());
        for (name, p) in model.params() {
            let q = &loaded.params()[name].value;
            assert!(p.value.max_abs_diff(q) < 1e-6, "{name}");
        }
        let hist = vec![
            EpochRecord {
                epoch: 1,
                train_loss: 2.5,
                val_loss: 2.25,
                lr: 1e-4,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 2.0,
                val_loss: 2.125,
                lr: 5e-5,
            },
        ];
        let p = dir.path().join("history.csv");
        write_history_csv(&p, &hist).unwrap();
        assert_eq!(read_history_csv(&p).unwrap(), hist);
    }
}
