//! A small autoregressive transformer decoder: causal self-attention, text
//! cross-attention with optional video adapters, and a GELU feed-forward
//! block per layer, all residual. Sized for CPU experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{
    attend, cross_attention_graph, AdapterVars, AdapterWeights, BaseAttentionWeights, CrossVars,
    HeadVars, HeadWeights, TextCondition, VideoEmbedding,
};
use super::matrix::Matrix;
use super::tape::{Grads, Tape, Var};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaInit {
    Zero,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    /// Native width of the video encoder.
    pub video_dim: usize,
    /// Layers that receive a video adapter; `None` means all layers.
    pub adapter_layers: Option<Vec<usize>>,
    pub adapter_bias: bool,
    pub alpha_init: AlphaInit,
    /// Rank of LoRA factors on attention query/value maps; 0 disables LoRA.
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 257,
            d_model: 32,
            n_heads: 4,
            d_head: 8,
            n_layers: 2,
            d_ff: 64,
            max_len: 256,
            video_dim: 48,
            adapter_layers: None,
            adapter_bias: false,
            alpha_init: AlphaInit::Zero,
            lora_rank: 0,
            lora_alpha: 8.0,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("video_dim", self.video_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        if self.lora_rank > self.d_model.min(self.d_head) {
            return Err(invalid(format!(
                "LoRA rank {} exceeds min dimension {}",
                self.lora_rank,
                self.d_model.min(self.d_head)
            )));
        }
        if let Some(layers) = &self.adapter_layers {
            if let Some(l) = layers.iter().find(|&&l| l >= self.n_layers) {
                return Err(invalid(format!("adapter layer {l} out of range")));
            }
        }
        Ok(())
    }

    pub fn has_adapter(&self, layer: usize) -> bool {
        self.adapter_layers
            .as_ref()
            .is_none_or(|ls| ls.contains(&layer))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Base,
    Adapter,
    Lora,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Adapter,
    Lora,
    Full,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Adapter => "adapter",
            TrainMode::Lora => "lora",
            TrainMode::Full => "full",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adapter" => Ok(TrainMode::Adapter),
            "lora" => Ok(TrainMode::Lora),
            "full" => Ok(TrainMode::Full),
            other => Err(invalid(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoder {
    config: DecoderConfig,
    params: BTreeMap<String, Param>,
}

fn layer_key(l: usize, rest: &str) -> String {
    format!("layers.{l}.{rest}")
}

impl ToyDecoder {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = BTreeMap::new();
        let c = &config;
        let mut put = |name: String, value: Matrix, kind: ParamKind| {
            params.insert(name, Param { value, kind });
        };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();

        put(
            "tok_emb".into(),
            Matrix::gaussian(c.vocab_size, c.d_model, 1.0, &mut rng),
            ParamKind::Base,
        );
        put(
            "pos_emb".into(),
            Matrix::gaussian(c.max_len, c.d_model, 0.1, &mut rng),
            ParamKind::Base,
        );
        for l in 0..c.n_layers {
            for block in ["self", "cross"] {
                for h in 0..c.n_heads {
                    for w in ["q", "k", "v"] {
                        put(
                            layer_key(l, &format!("{block}.head.{h}.{w}")),
                            Matrix::gaussian(c.d_model, c.d_head, fan(c.d_model), &mut rng),
                            ParamKind::Base,
                        );
                    }
                    if c.lora_rank > 0 {
                        for w in ["q", "v"] {
                            // B starts at zero so the effective weight equals the base weight.
                            put(
                                layer_key(l, &format!("lora.{block}.head.{h}.{w}.a")),
                                Matrix::gaussian(c.lora_rank, c.d_head, fan(c.d_head), &mut rng),
                                ParamKind::Lora,
                            );
                            put(
                                layer_key(l, &format!("lora.{block}.head.{h}.{w}.b")),
                                Matrix::zeros(c.d_model, c.lora_rank),
                                ParamKind::Lora,
                            );
                        }
                    }
                }
                put(
                    layer_key(l, &format!("{block}.out")),
                    Matrix::gaussian(
                        c.n_heads * c.d_head,
                        c.d_model,
                        fan(c.n_heads * c.d_head),
                        &mut rng,
                    ),
                    ParamKind::Base,
                );
            }
            put(
                layer_key(l, "ffn.w1"),
                Matrix::gaussian(c.d_model, c.d_ff, fan(c.d_model), &mut rng),
                ParamKind::Base,
            );
            put(
                layer_key(l, "ffn.b1"),
                Matrix::zeros(1, c.d_ff),
                ParamKind::Base,
            );
            put(
                layer_key(l, "ffn.w2"),
                Matrix::gaussian(c.d_ff, c.d_model, fan(c.d_ff), &mut rng),
                ParamKind::Base,
            );
            put(
                layer_key(l, "ffn.b2"),
                Matrix::zeros(1, c.d_model),
                ParamKind::Base,
            );

            if c.has_adapter(l) {
                for h in 0..c.n_heads {
                    for w in ["q", "k", "v"] {
                        put(
                            layer_key(l, &format!("adapter.head.{h}.{w}")),
                            Matrix::gaussian(c.d_model, c.d_head, fan(c.d_model), &mut rng),
                            ParamKind::Adapter,
                        );
                    }
                }
                put(
                    layer_key(l, "adapter.x"),
                    Matrix::gaussian(c.d_model, c.video_dim, fan(c.video_dim), &mut rng),
                    ParamKind::Adapter,
                );
                if c.adapter_bias {
                    put(
                        layer_key(l, "adapter.bias"),
                        Matrix::zeros(1, c.d_model),
                        ParamKind::Adapter,
                    );
                }
                let alpha = match c.alpha_init {
                    AlphaInit::Zero => 0.0,
                    AlphaInit::Random => Matrix::gaussian(1, 1, 1.0, &mut rng).get(0, 0),
                };
                put(
                    layer_key(l, "adapter.alpha"),
                    Matrix::scalar(alpha),
                    ParamKind::Adapter,
                );
            }
        }
        put(
            "lm_head".into(),
            Matrix::gaussian(c.d_model, c.vocab_size, fan(c.d_model), &mut rng),
            ParamKind::Base,
        );
        Ok(Self { config, params })
    }

    /// Rebuilds a model from stored parameters; every expected name must be present.
    pub fn from_params(config: DecoderConfig, stored: BTreeMap<String, Matrix>) -> Result<Self> {
        let mut model = Self::new(config)?;
        for (name, p) in model.params.iter_mut() {
            let v = stored
                .get(name)
                .ok_or_else(|| invalid(format!("checkpoint lacks parameter {name}")))?;
            if v.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "{name}: stored {:?}, expected {:?}",
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Param> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn set_param(&mut self, name: &str, value: Matrix) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{name}: {:?} cannot replace {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.params
            .iter_mut()
            .map(|(k, p)| (k.as_str(), &mut p.value))
    }

    /// Names of the parameters updated in `mode`. Adapter mode yields exactly
    /// the per-head adapter maps, projection and alpha of every adapted layer;
    /// LoRA mode yields exactly the low-rank factors.
    pub fn trainable_parameters(&self, mode: TrainMode) -> BTreeSet<String> {
        self.params
            .iter()
            .filter(|(_, p)| match mode {
                TrainMode::Adapter => p.kind == ParamKind::Adapter,
                TrainMode::Lora => p.kind == ParamKind::Lora,
                TrainMode::Full => true,
            })
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Base cross-attention weights of one layer.
    pub fn cross_weights(&self, layer: usize) -> Result<BaseAttentionWeights> {
        self.attention_weights(layer, "cross")
    }

    fn attention_weights(&self, layer: usize, block: &str) -> Result<BaseAttentionWeights> {
        let get = |rest: String| {
            self.param(&layer_key(layer, &rest))
                .cloned()
                .ok_or_else(|| invalid(format!("layer {layer} has no {rest}")))
        };
        Ok(BaseAttentionWeights {
            heads: (0..self.config.n_heads)
                .map(|h| {
                    Ok(HeadWeights {
                        wq: get(format!("{block}.head.{h}.q"))?,
                        wk: get(format!("{block}.head.{h}.k"))?,
                        wv: get(format!("{block}.head.{h}.v"))?,
                    })
                })
                .collect::<Result<_>>()?,
            out_proj: get(format!("{block}.out"))?,
        })
    }

    pub fn adapter_weights(&self, layer: usize) -> Option<AdapterWeights> {
        let get = |rest: String| self.param(&layer_key(layer, &rest)).cloned();
        Some(AdapterWeights {
            heads: (0..self.config.n_heads)
                .map(|h| {
                    Some(HeadWeights {
                        wq: get(format!("adapter.head.{h}.q"))?,
                        wk: get(format!("adapter.head.{h}.k"))?,
                        wv: get(format!("adapter.head.{h}.v"))?,
                    })
                })
                .collect::<Option<_>>()?,
            x: get("adapter.x".into())?,
            bias: get("adapter.bias".into()),
            alpha: get("adapter.alpha".into())?.get(0, 0),
        })
    }

    fn check_inputs(
        &self,
        tokens: &[usize],
        z_t: &TextCondition,
        z_v: Option<&VideoEmbedding>,
    ) -> Result<()> {
        let c = &self.config;
        if tokens.is_empty() {
            return Err(invalid("empty token sequence"));
        }
        if tokens.len() > c.max_len {
            return Err(invalid(format!(
                "sequence of {} exceeds max_len {}",
                tokens.len(),
                c.max_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab: c.vocab_size,
            });
        }
        if z_t.0.cols() != c.d_model || z_t.0.rows() == 0 {
            return Err(Error::Shape(format!(
                "text condition {:?} must be T x {}",
                z_t.0.shape(),
                c.d_model
            )));
        }
        if !z_t.0.is_finite() {
            return Err(invalid("text condition is not finite"));
        }
        if let Some(zv) = z_v {
            if zv.0.rows() > 0 && zv.0.cols() != c.video_dim {
                return Err(Error::Shape(format!(
                    "video embedding {:?} must be T x {}",
                    zv.0.shape(),
                    c.video_dim
                )));
            }
            if !zv.0.is_finite() {
                return Err(invalid("video embedding is not finite"));
            }
        }
        Ok(())
    }

    /// Builds the forward graph; returns the logits node and a leaf per parameter.
    pub(crate) fn forward_graph(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        z_t: &TextCondition,
        z_v: Option<&VideoEmbedding>,
    ) -> Result<(Var, BTreeMap<String, Var>)> {
        self.check_inputs(tokens, z_t, z_v)?;
        let c = &self.config;
        let leaves: BTreeMap<String, Var> = self
            .params
            .iter()
            .map(|(n, p)| (n.clone(), tape.leaf(p.value.clone())))
            .collect();
        let p = |name: &str| leaves[name];

        let zt = tape.leaf(z_t.0.clone());
        let zv = z_v
            .filter(|v| v.0.rows() > 0)
            .map(|v| tape.leaf(v.0.clone()));

        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = tape.gather(p("tok_emb"), tokens)?;
        let pos = tape.gather(p("pos_emb"), &positions)?;
        let mut x = tape.add(tok, pos)?;

        for l in 0..c.n_layers {
            let self_vars = self.attention_vars(tape, &leaves, l, "self")?;
            let mut heads = Vec::with_capacity(c.n_heads);
            for h in &self_vars.heads {
                heads.push(attend(tape, x, x, h, true)?);
            }
            let cat = tape.concat_cols(&heads)?;
            let sa = tape.matmul(cat, self_vars.out)?;
            x = tape.add(x, sa)?;

            let cross_vars = self.attention_vars(tape, &leaves, l, "cross")?;
            let adapter = match (zv, c.has_adapter(l)) {
                (Some(zv), true) => Some((self.adapter_vars(&leaves, l), zv)),
                _ => None,
            };
            let ca = cross_attention_graph(
                tape,
                x,
                zt,
                &cross_vars,
                adapter.as_ref().map(|(a, z)| (a, *z)),
            )?;
            x = tape.add(x, ca)?;

            let h1 = tape.matmul(x, p(&layer_key(l, "ffn.w1")))?;
            let h1 = tape.add_row(h1, p(&layer_key(l, "ffn.b1")))?;
            let h1 = tape.gelu(h1);
            let h2 = tape.matmul(h1, p(&layer_key(l, "ffn.w2")))?;
            let h2 = tape.add_row(h2, p(&layer_key(l, "ffn.b2")))?;
            x = tape.add(x, h2)?;
        }
        let logits = tape.matmul(x, p("lm_head"))?;
        Ok((logits, leaves))
    }

    fn attention_vars(
        &self,
        tape: &mut Tape,
        leaves: &BTreeMap<String, Var>,
        l: usize,
        block: &str,
    ) -> Result<CrossVars> {
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let mut weight = |w: &str| -> Result<Var> {
                let base = leaves[&layer_key(l, &format!("{block}.head.{h}.{w}"))];
                let a_name = layer_key(l, &format!("lora.{block}.head.{h}.{w}.a"));
                let b_name = layer_key(l, &format!("lora.{block}.head.{h}.{w}.b"));
                match (leaves.get(&a_name), leaves.get(&b_name)) {
                    (Some(&a), Some(&b)) => {
                        let ba = tape.matmul(b, a)?;
                        let scale = self.config.lora_alpha / self.config.lora_rank as f64;
                        let delta = tape.scale(ba, scale);
                        tape.add(base, delta)
                    }
                    _ => Ok(base),
                }
            };
            let q = weight("q")?;
            let k = weight("k")?;
            let v = weight("v")?;
            heads.push(HeadVars { q, k, v });
        }
        Ok(CrossVars {
            heads,
            out: leaves[&layer_key(l, &format!("{block}.out"))],
        })
    }

    fn adapter_vars(&self, leaves: &BTreeMap<String, Var>, l: usize) -> AdapterVars {
        AdapterVars {
            heads: (0..self.config.n_heads)
                .map(|h| HeadVars {
                    q: leaves[&layer_key(l, &format!("adapter.head.{h}.q"))],
                    k: leaves[&layer_key(l, &format!("adapter.head.{h}.k"))],
                    v: leaves[&layer_key(l, &format!("adapter.head.{h}.v"))],
                })
                .collect(),
            x: leaves[&layer_key(l, "adapter.x")],
            bias: leaves.get(&layer_key(l, "adapter.bias")).copied(),
            alpha: leaves[&layer_key(l, "adapter.alpha")],
        }
    }

    /// Next-token logits, `S × vocab_size`. Without video embeddings only the
    /// base cross-attention path runs.
    pub fn forward(
        &self,
        tokens: &[usize],
        z_t: &TextCondition,
        z_v: Option<&VideoEmbedding>,
    ) -> Result<Matrix> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward_graph(&mut tape, tokens, z_t, z_v)?;
        Ok(tape.value(logits).clone())
    }

    /// Teacher-forced mean cross-entropy and its gradient for each named parameter.
    pub fn loss_and_grads(
        &self,
        inputs: &[usize],
        targets: &[usize],
        z_t: &TextCondition,
        z_v: Option<&VideoEmbedding>,
        wrt: &BTreeSet<String>,
    ) -> Result<(f64, BTreeMap<String, Matrix>)> {
        let mut tape = Tape::new();
        let (logits, leaves) = self.forward_graph(&mut tape, inputs, z_t, z_v)?;
        let loss = tape.cross_entropy(logits, targets)?;
        let value = tape.value(loss).get(0, 0);
        let grads: Grads = tape.backward(loss);
        let out = wrt
            .iter()
            .map(|name| {
                let var = leaves
                    .get(name)
                    .ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
                let g = grads.get(*var).cloned().unwrap_or_else(|| {
                    Matrix::zeros(tape.value(*var).rows(), tape.value(*var).cols())
                });
                Ok((name.clone(), g))
            })
            .collect::<Result<_>>()?;
        Ok((value, out))
    }

    pub fn loss(
        &self,
        inputs: &[usize],
        targets: &[usize],
        z_t: &TextCondition,
        z_v: Option<&VideoEmbedding>,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let (logits, _) = self.forward_graph(&mut tape, inputs, z_t, z_v)?;
        let loss = tape.cross_entropy(logits, targets)?;
        Ok(tape.value(loss).get(0, 0))
    }
}
