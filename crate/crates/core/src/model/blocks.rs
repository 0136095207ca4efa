//! Embeddings and transformer blocks.
//!
//! Parameter names follow [`super::weights::parameter_layout`]; every block
//! takes the name prefix of its parameters.

use crate::attention::{
    layer_norm, multi_head_attention, AttentionConfig, AttentionContext, AttentionWeights, RopeAngles, LAYER_NORM_EPS,
};
use crate::error::{Error, Result};
use crate::geometry::{cyclical_encode, TimeStamp};
use crate::graph::{mix64, Graph, Var};
use crate::params::Bound;
use crate::tensor::Tensor;

/// Source of per-call dropout seeds for one forward pass.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub train: bool,
    seed: u64,
    calls: u64,
}

impl Dropout {
    pub fn new(seed: u64, train: bool) -> Self {
        Dropout { train, seed, calls: 0 }
    }

    pub fn eval() -> Self {
        Self::new(0, false)
    }

    pub fn next_seed(&mut self) -> u64 {
        self.calls += 1;
        mix64(self.seed ^ mix64(self.calls))
    }
}

fn attention_weights(p: &Bound, prefix: &str) -> AttentionWeights {
    AttentionWeights {
        wq: p.get(&format!("{prefix}.wq")),
        wk: p.get(&format!("{prefix}.wk")),
        wv: p.get(&format!("{prefix}.wv")),
        wo: p.get(&format!("{prefix}.wo")),
    }
}

pub(crate) fn linear(g: &mut Graph, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let y = g.matmul(x, p.get(&format!("{prefix}.weight")))?;
    g.add(y, p.get(&format!("{prefix}.bias")))
}

pub(crate) fn norm(g: &mut Graph, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    layer_norm(
        g,
        x,
        p.get(&format!("{prefix}.gamma")),
        p.get(&format!("{prefix}.beta")),
        LAYER_NORM_EPS,
    )
}

/// Two-layer feed-forward network with GeGLU gating.
pub fn geglu_mlp(g: &mut Graph, x: Var, p: &Bound, prefix: &str, rate: f64, drop: &mut Dropout) -> Result<Var> {
    let h = linear(g, x, p, &format!("{prefix}.fc1"))?;
    let axis = g.shape(h).len() - 1;
    let hidden = g.shape(h)[axis] / 2;
    let value = g.slice(h, axis, 0, hidden)?;
    let gate = g.slice(h, axis, hidden, hidden)?;
    let gate = g.gelu(gate)?;
    let act = g.mul(value, gate)?;
    let y = linear(g, act, p, &format!("{prefix}.fc2"))?;
    let seed = drop.next_seed();
    g.dropout(y, rate, seed, drop.train)
}

/// Concatenates the calendar encoding of each step to the station features
/// and projects to the embedding width.
///
/// `series` is `[N, T, f]`; returns `[N, T, d]`.
pub fn embed_time_series(g: &mut Graph, series: &Tensor, timestamps: &[TimeStamp], p: &Bound) -> Result<Var> {
    let s = series.shape();
    if s.len() != 3 || s[1] != timestamps.len() {
        return Err(Error::shape("embed_time_series", s, &[timestamps.len()]));
    }
    let (n, t, f) = (s[0], s[1], s[2]);
    let w = p.get("embed.series.weight");
    if g.shape(w)[0] != f + 4 {
        return Err(Error::shape("embed_time_series", s, g.shape(w)));
    }
    let enc: Vec<[f64; 4]> = timestamps.iter().map(|&ts| cyclical_encode(ts)).collect();
    let mut data = Vec::with_capacity(n * t * (f + 4));
    for node in 0..n {
        for (step, e) in enc.iter().enumerate() {
            let off = (node * t + step) * f;
            data.extend_from_slice(&series.data()[off..off + f]);
            data.extend_from_slice(e);
        }
    }
    let x = g.constant(Tensor::new(&[n, t, f + 4], data)?)?;
    linear(g, x, p, "embed.series")
}

/// Rearranges `[h, w, T, c]` frames into `[T, (h/p)·(w/p), c·p·p]` patch
/// vectors. Patches are numbered row-major over the patch grid; features
/// within a patch are ordered (pixel row, pixel column, channel).
pub fn patchify(frames: &Tensor, patch: usize) -> Result<Tensor> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::invalid(format!("image frames must be [h, w, T, c], got {s:?}")));
    }
    let (h, w, t, c) = (s[0], s[1], s[2], s[3]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(format!(
            "image {h}x{w} is not divisible into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let feat = c * patch * patch;
    let mut out = vec![0.0; t * gh * gw * feat];
    let data = frames.data();
    for r in 0..h {
        for col in 0..w {
            let patch_idx = (r / patch) * gw + col / patch;
            let within = ((r % patch) * patch + col % patch) * c;
            for step in 0..t {
                let src = ((r * w + col) * t + step) * c;
                let dst = (step * gh * gw + patch_idx) * feat + within;
                out[dst..dst + c].copy_from_slice(&data[src..src + c]);
            }
        }
    }
    Tensor::new(&[t, gh * gw, feat], out)
}

/// Patch embedding: `[h, w, T, c]` → `[T, M, d]`.
pub fn patchify_embed(g: &mut Graph, frames: &Tensor, patch: usize, p: &Bound) -> Result<Var> {
    let patches = patchify(frames, patch)?;
    let x = g.constant(patches)?;
    linear(g, x, p, "embed.patch")
}

/// Replaces masked entries of `x` by the learnable scalar `token`.
///
/// `masked` holds 1 for replaced positions and broadcasts against `x`.
pub fn substitute_mask_token(g: &mut Graph, x: Var, masked: &Tensor, token: Var) -> Result<Var> {
    if masked.data().iter().all(|&m| m == 0.0) {
        return Ok(x);
    }
    let keep = g.constant(masked.map(|m| 1.0 - m))?;
    let m = g.constant(masked.clone())?;
    let kept = g.mul(x, keep)?;
    let fill = g.mul(m, token)?;
    g.add(kept, fill)
}

/// Self-attention along the second-to-last axis followed by the GeGLU MLP,
/// both with pre-normalization and residual connections.
pub fn temporal_block(
    g: &mut Graph,
    x: Var,
    p: &Bound,
    prefix: &str,
    cfg: &AttentionConfig,
    mlp_dropout: f64,
    drop: &mut Dropout,
) -> Result<Var> {
    let z0 = norm(g, x, p, &format!("{prefix}.ln1"))?;
    let ctx = AttentionContext {
        dropout_seed: drop.next_seed(),
        train: drop.train,
        ..AttentionContext::plain()
    };
    let a = multi_head_attention(g, z0, z0, cfg, &attention_weights(p, &format!("{prefix}.attn")), &ctx)?;
    let z1 = g.add(x, a)?;
    let n = norm(g, z1, p, &format!("{prefix}.ln2"))?;
    let m = geglu_mlp(g, n, p, &format!("{prefix}.mlp"), mlp_dropout, drop)?;
    g.add(m, z1)
}

/// Positional context for a cross-attention block.
pub struct CrossContext<'a> {
    pub query_angles: &'a RopeAngles,
    pub key_angles: &'a RopeAngles,
    /// `[heads, N, M]` additive ring penalty.
    pub bias: Var,
}

/// Cross-attention from node states `x` (`[T, N, d]`) to `context`
/// (`[T, M, d]`) with rotary positions and ring masking, then the MLP.
#[allow(clippy::too_many_arguments)]
pub fn cross_block(
    g: &mut Graph,
    x: Var,
    context: Var,
    p: &Bound,
    prefix: &str,
    cfg: &AttentionConfig,
    pos: &CrossContext<'_>,
    drop: &mut Dropout,
) -> Result<Var> {
    let (sx, sc) = (g.shape(x).to_vec(), g.shape(context).to_vec());
    if sx.len() != 3 || sc.len() != 3 || sx[0] != sc[0] || sx[2] != sc[2] {
        return Err(Error::shape("cross_block", &sx, &sc));
    }
    let bias_shape = g.shape(pos.bias).to_vec();
    if bias_shape != [cfg.heads, sx[1], sc[1]] {
        return Err(Error::shape(
            "cross_block mask",
            &bias_shape,
            &[cfg.heads, sx[1], sc[1]],
        ));
    }
    let z0 = norm(g, x, p, &format!("{prefix}.ln_q"))?;
    let z1 = norm(g, context, p, &format!("{prefix}.ln_kv"))?;
    let ctx = AttentionContext {
        query_angles: Some(pos.query_angles),
        key_angles: Some(pos.key_angles),
        bias: Some(pos.bias),
        dropout_seed: drop.next_seed(),
        train: drop.train,
    };
    let a = multi_head_attention(g, z0, z1, cfg, &attention_weights(p, &format!("{prefix}.attn")), &ctx)?;
    let z2 = g.add(x, a)?;
    let n = norm(g, z2, p, &format!("{prefix}.ln2"))?;
    let m = geglu_mlp(g, n, p, &format!("{prefix}.mlp"), cfg.dropout, drop)?;
    g.add(m, z2)
}

/// Decoder: last encoder state per node seeds an `H`-step sequence that is
/// summed with the embedded clear-sky horizon and a learned lead-time
/// embedding, run through the decoder blocks, then mapped per step by one
/// GeGLU head per output.
///
/// `encoded` is `[T, N, d]`, `clearsky` is `[N, H]` (normalized). Returns
/// raw `[N, H, Q]`.
#[allow(clippy::too_many_arguments)]
pub fn decode(
    g: &mut Graph,
    encoded: Var,
    clearsky: &Tensor,
    p: &Bound,
    cfg: &AttentionConfig,
    depth: usize,
    output_heads: usize,
    drop: &mut Dropout,
) -> Result<Var> {
    let se = g.shape(encoded).to_vec();
    let lead = p.get("decoder.lead");
    let horizon = g.shape(lead)[0];
    let cs = clearsky.shape();
    if cs.len() != 2 || se.len() != 3 || cs[0] != se[1] || cs[1] != horizon {
        return Err(Error::shape("decode", cs, &[se.get(1).copied().unwrap_or(0), horizon]));
    }
    let (t, n, d) = (se[0], se[1], se[2]);
    let last = g.slice(encoded, 0, t - 1, 1)?;
    let last = g.reshape(last, &[n, 1, d])?;
    let seed = linear(g, last, p, "decoder.handoff")?;
    let cs_in = g.constant(clearsky.reshape(&[n, horizon, 1])?)?;
    let cs_emb = linear(g, cs_in, p, "decoder.clearsky")?;
    let x = g.add(cs_emb, seed)?;
    let mut x = g.add(x, lead)?;
    for i in 0..depth {
        x = temporal_block(g, x, p, &format!("decoder.{i}"), cfg, cfg.dropout, drop)?;
    }
    let x = norm(g, x, p, "head.ln")?;
    let heads = (0..output_heads)
        .map(|q| geglu_mlp(g, x, p, &format!("head.{q}"), 0.0, drop))
        .collect::<Result<Vec<_>>>()?;
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        g.concat(&heads, 2)
    }
}
