//! Text cross-attention, the additive video adapter branch and low-rank
//! weight deltas.
//!
//! Each head of the base cross-attention attends from decoder states to text
//! tokens. The adapter adds, per head, `alpha` times a second attention whose
//! keys and values come from video embeddings projected to the model width by
//! `X`. Head outputs are summed before concatenation and the (frozen) output
//! projection.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Text-encoder output tokens, `T_t × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCondition(pub Matrix);

/// Video-encoder output tokens in the encoder's native width, `T_v × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbedding(pub Matrix);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseAttentionWeights {
    pub heads: Vec<HeadWeights>,
    /// `(heads * d_head) × m`
    pub out_proj: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterWeights {
    pub heads: Vec<HeadWeights>,
    /// `m × n` projection from video width to model width.
    pub x: Matrix,
    /// Optional `1 × m` bias of the projection.
    pub bias: Option<Matrix>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

#[derive(Debug, Clone)]
pub(crate) struct CrossVars {
    pub heads: Vec<HeadVars>,
    pub out: Var,
}

#[derive(Debug, Clone)]
pub(crate) struct AdapterVars {
    pub heads: Vec<HeadVars>,
    pub x: Var,
    pub bias: Option<Var>,
    pub alpha: Var,
}

/// softmax(Q Kᵀ / sqrt(d)) V for one head.
pub(crate) fn attend(
    tape: &mut Tape,
    queries: Var,
    keys: Var,
    head: &HeadVars,
    causal: bool,
) -> Result<Var> {
    let q = tape.matmul(queries, head.q)?;
    let k = tape.matmul(keys, head.k)?;
    let v = tape.matmul(keys, head.v)?;
    let d = tape.value(head.q).cols() as f64;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / d.sqrt());
    let p = tape.softmax(scores, causal);
    tape.matmul(p, v)
}

/// `z_v Xᵀ (+ bias)`, mapping video tokens to the model width.
pub(crate) fn project_video_graph(
    tape: &mut Tape,
    z_v: Var,
    x: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let xt = tape.transpose(x);
    let p = tape.matmul(z_v, xt)?;
    match bias {
        Some(b) => tape.add_row(p, b),
        None => Ok(p),
    }
}

pub(crate) fn cross_attention_graph(
    tape: &mut Tape,
    x: Var,
    z_t: Var,
    base: &CrossVars,
    adapter: Option<(&AdapterVars, Var)>,
) -> Result<Var> {
    let projected = match adapter {
        Some((ad, z_v)) => {
            if ad.heads.len() != base.heads.len() {
                return Err(Error::Shape(format!(
                    "adapter has {} heads, base has {}",
                    ad.heads.len(),
                    base.heads.len()
                )));
            }
            Some(project_video_graph(tape, z_v, ad.x, ad.bias)?)
        }
        None => None,
    };
    let mut outs = Vec::with_capacity(base.heads.len());
    for (i, head) in base.heads.iter().enumerate() {
        let mut h = attend(tape, x, z_t, head, false)?;
        if let (Some((ad, _)), Some(zv)) = (adapter, projected) {
            let video = attend(tape, x, zv, &ad.heads[i], false)?;
            let video = tape.scale_by(video, ad.alpha)?;
            h = tape.add(h, video)?;
        }
        outs.push(h);
    }
    let cat = tape.concat_cols(&outs)?;
    tape.matmul(cat, base.out)
}

fn head_leaves(tape: &mut Tape, h: &HeadWeights) -> HeadVars {
    HeadVars {
        q: tape.leaf(h.wq.clone()),
        k: tape.leaf(h.wk.clone()),
        v: tape.leaf(h.wv.clone()),
    }
}

fn base_leaves(tape: &mut Tape, w: &BaseAttentionWeights) -> CrossVars {
    CrossVars {
        heads: w.heads.iter().map(|h| head_leaves(tape, h)).collect(),
        out: tape.leaf(w.out_proj.clone()),
    }
}

fn adapter_leaves(tape: &mut Tape, a: &AdapterWeights) -> AdapterVars {
    AdapterVars {
        heads: a.heads.iter().map(|h| head_leaves(tape, h)).collect(),
        x: tape.leaf(a.x.clone()),
        bias: a.bias.as_ref().map(|b| tape.leaf(b.clone())),
        alpha: tape.leaf(Matrix::scalar(a.alpha)),
    }
}

fn check_width(what: &str, m: &Matrix, width: usize) -> Result<()> {
    if m.cols() != width {
        return Err(Error::Shape(format!(
            "{what} has width {}, expected {width}",
            m.cols()
        )));
    }
    Ok(())
}

/// Multi-head cross-attention from decoder states `x` (`S × m`) to text tokens.
pub fn base_cross_attention(
    x: &Matrix,
    z_t: &TextCondition,
    w: &BaseAttentionWeights,
) -> Result<Matrix> {
    check_width("text condition", &z_t.0, x.cols())?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let zt = tape.leaf(z_t.0.clone());
    let base = base_leaves(&mut tape, w);
    let out = cross_attention_graph(&mut tape, xv, zt, &base, None)?;
    Ok(tape.value(out).clone())
}

/// Projects video tokens to the model width: `z_v Xᵀ`, plus bias when present.
pub fn project_video(z_v: &VideoEmbedding, x: &Matrix, bias: Option<&Matrix>) -> Result<Matrix> {
    let mut tape = Tape::new();
    let zv = tape.leaf(z_v.0.clone());
    let xv = tape.leaf(x.clone());
    let b = bias.map(|b| tape.leaf(b.clone()));
    let out = project_video_graph(&mut tape, zv, xv, b)?;
    Ok(tape.value(out).clone())
}

/// Base cross-attention plus the alpha-scaled video branch in every head.
pub fn video_adapter_attention(
    x: &Matrix,
    z_t: &TextCondition,
    z_v: &VideoEmbedding,
    base: &BaseAttentionWeights,
    adapter: &AdapterWeights,
) -> Result<Matrix> {
    check_width("text condition", &z_t.0, x.cols())?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let zt = tape.leaf(z_t.0.clone());
    let zv = tape.leaf(z_v.0.clone());
    let b = base_leaves(&mut tape, base);
    let a = adapter_leaves(&mut tape, adapter);
    let out = cross_attention_graph(&mut tape, xv, zt, &b, Some((&a, zv)))?;
    Ok(tape.value(out).clone())
}

/// Low-rank update `scale * B A` for an `m × p` weight: `A` is `r × p`, `B` is `m × r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraDelta {
    pub a: Matrix,
    pub b: Matrix,
    pub scale: f64,
}

impl LoraDelta {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }
}

/// `W + scale * B A`.
pub fn lora_effective(w: &Matrix, delta: &LoraDelta) -> Result<Matrix> {
    let (m, p) = w.shape();
    let r = delta.rank();
    if r > m.min(p) {
        return Err(Error::InvalidArgument(format!(
            "LoRA rank {r} exceeds min dimension of a {m}x{p} weight"
        )));
    }
    if delta.a.shape() != (r, p) || delta.b.shape() != (m, r) {
        return Err(Error::Shape(format!(
            "LoRA factors {:?}/{:?} do not fit a {m}x{p} weight with rank {r}",
            delta.b.shape(),
            delta.a.shape()
        )));
    }
    if r == 0 {
        return Ok(w.clone());
    }
    w.add(&delta.b.matmul(&delta.a)?.scale(delta.scale))
}
