//! Layer normalization, scaled dot-product attention, multi-head attention,
//! rotary encoding over geographic coordinates and distance-ring masks.
//!
//! All functions build onto a caller-supplied [`Graph`] so that they take part
//! in differentiation. Tensors follow a `[.., positions, features]` layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeoPoint;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_DELTA: f64 = 50.0;
pub const ROPE_BASE: f64 = 10_000.0;
/// Coordinates are mapped to `[0, ROPE_COORD_SCALE]` before rotation.
pub const ROPE_COORD_SCALE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub dim_per_head: usize,
    pub dropout: f64,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.dim_per_head == 0 {
            return Err(Error::invalid(format!("attention dims must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn inner_dim(&self) -> usize {
        self.heads * self.dim_per_head
    }
}

/// Bias-free projections of one multi-head attention layer.
///
/// `wq`, `wk`, `wv` are `[d_in, heads * dim_per_head]`; the column block
/// `a * dim_per_head .. (a + 1) * dim_per_head` is head `a`'s projection.
/// `wo` is `[heads * dim_per_head, d_out]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Ring visibility schedule: head `a` sees targets whose distance lies in
/// `[edge_{a-1}, edge_a)`, with an implicit first edge of 0 and last of ∞.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingMaskSpec {
    /// Finite interior ring edges in kilometres, strictly increasing.
    pub edges_km: Vec<f64>,
    pub delta: f64,
}

impl Default for RingMaskSpec {
    fn default() -> Self {
        RingMaskSpec {
            edges_km: vec![40.0, 90.0, 180.0],
            delta: DEFAULT_DELTA,
        }
    }
}

impl RingMaskSpec {
    pub fn heads(&self) -> usize {
        self.edges_km.len() + 1
    }

    /// `(inner, outer)` radius per head.
    pub fn head_radii(&self) -> Vec<(f64, f64)> {
        let mut bounds = vec![0.0];
        bounds.extend(&self.edges_km);
        bounds.push(f64::INFINITY);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(format!(
                "ring mask delta must be positive, got {}",
                self.delta
            )));
        }
        let mut prev = 0.0;
        for &e in &self.edges_km {
            if !(e > prev && e.is_finite()) {
                return Err(Error::invalid(format!(
                    "ring edges must be finite and strictly increasing from 0, got {:?}",
                    self.edges_km
                )));
            }
            prev = e;
        }
        Ok(())
    }

    /// Head whose ring contains `distance_km`.
    pub fn head_for(&self, distance_km: f64) -> usize {
        self.edges_km.iter().take_while(|&&e| distance_km >= e).count()
    }
}

/// `gamma ⊙ (x − mean) / sqrt(var + eps) + beta` over the last axis.
pub fn layer_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let axis = shape.len() - 1;
    let d = shape[axis];
    if g.shape(gamma) != [d] || g.shape(beta) != [d] {
        return Err(Error::shape("layer_norm", &shape, g.shape(gamma)));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("layer_norm eps must be positive"));
    }
    let mean = g.mean_axis(x, axis)?;
    let centered = g.sub(x, mean)?;
    let sq = g.square(centered)?;
    let var = g.mean_axis(sq, axis)?;
    let var = g.add_scalar(var, eps)?;
    let std = g.sqrt(var)?;
    let normed = g.div(centered, std)?;
    let scaled = g.mul(normed, gamma)?;
    g.add(scaled, beta)
}

/// Softmax of `Q Kᵀ / sqrt(d) + bias` over the key axis.
///
/// `bias`, when given, must broadcast against `[.., n, m]`; masking passes
/// `−δ·M` here.
pub fn attention_weights(g: &mut Graph, q: Var, k: Var, bias: Option<Var>) -> Result<Var> {
    let (sq, sk) = (g.shape(q).to_vec(), g.shape(k).to_vec());
    if sq.len() < 2
        || sq.len() != sk.len()
        || sq[sq.len() - 1] != sk[sk.len() - 1]
        || sq[..sq.len() - 2] != sk[..sk.len() - 2]
    {
        return Err(Error::shape("attention", &sq, &sk));
    }
    let d = sq[sq.len() - 1];
    let kt = g.transpose_last(k)?;
    let logits = g.matmul(q, kt)?;
    let mut logits = g.scale(logits, 1.0 / (d as f64).sqrt())?;
    if let Some(b) = bias {
        logits = g.add(logits, b)?;
    }
    let axis = sq.len() - 1;
    g.softmax(logits, axis)
}

/// Scaled dot-product attention `α V` with `α` from [`attention_weights`].
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var, bias: Option<Var>) -> Result<Var> {
    let (sk, sv) = (g.shape(k).to_vec(), g.shape(v).to_vec());
    let r = sk.len();
    if sv.len() != r || sv[..r - 1] != sk[..r - 1] {
        return Err(Error::shape("attention", &sk, &sv));
    }
    if sk[r - 2] == 0 {
        return Err(Error::invalid("attention over zero keys"));
    }
    let w = attention_weights(g, q, k, bias)?;
    g.matmul(w, v)
}

/// Rotation tables shared by queries or keys at fixed positions.
#[derive(Clone, Debug, PartialEq)]
pub struct RopeAngles(pub Tensor);

/// Rotation angles for normalized `(lon, lat)` coordinates.
///
/// The first `d_head / 4` feature pairs rotate with longitude, the rest with
/// latitude; pair `k` of each half turns by `coord · base^(−2k / (d_head/2))`.
pub fn rope_angles(coords: &[(f64, f64)], d_head: usize, base: f64) -> Result<RopeAngles> {
    if d_head == 0 || !d_head.is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "rotary encoding needs a head dimension divisible by 4, got {d_head}"
        )));
    }
    if coords.is_empty() {
        return Err(Error::invalid("rotary encoding needs at least one position"));
    }
    let pairs = d_head / 2;
    let quarter = d_head / 4;
    let freqs: Vec<f64> = (0..quarter)
        .map(|k| base.powf(-2.0 * k as f64 / pairs as f64))
        .collect();
    let mut data = Vec::with_capacity(coords.len() * pairs);
    for &(x, y) in coords {
        data.extend(freqs.iter().map(|f| x * f));
        data.extend(freqs.iter().map(|f| y * f));
    }
    Ok(RopeAngles(Tensor::new(&[coords.len(), pairs], data)?))
}

/// Rotates `x` (`[.., positions, d_head]`) by `angles`.
pub fn rope_rotate(g: &mut Graph, x: Var, angles: &RopeAngles) -> Result<Var> {
    g.rotate_pairs(x, &angles.0)
}

/// `M[i, j, a] = 0` when the distance from `centers[i]` to `targets[j]` lies
/// in head `a`'s ring, else 1. Shape `[N, M, heads]`.
pub fn build_ring_masks(centers: &[GeoPoint], targets: &[GeoPoint], spec: &RingMaskSpec) -> Result<Tensor> {
    spec.validate()?;
    if centers.is_empty() || targets.is_empty() {
        return Err(Error::invalid("ring masks need at least one center and one target"));
    }
    let heads = spec.heads();
    let mut data = vec![1.0; centers.len() * targets.len() * heads];
    for (i, c) in centers.iter().enumerate() {
        for (j, t) in targets.iter().enumerate() {
            let a = spec.head_for(c.haversine_km(t));
            data[(i * targets.len() + j) * heads + a] = 0.0;
        }
    }
    Tensor::new(&[centers.len(), targets.len(), heads], data)
}

/// `−δ·M` rearranged to `[heads, N, M]` for broadcasting over attention
/// logits.
pub fn ring_bias(masks: &Tensor, delta: f64) -> Result<Tensor> {
    let s = masks.shape();
    if s.len() != 3 {
        return Err(Error::invalid(format!("ring masks must be [N, M, heads], got {s:?}")));
    }
    let (n, m, h) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; n * m * h];
    for i in 0..n {
        for j in 0..m {
            for a in 0..h {
                out[(a * n + i) * m + j] = -delta * masks.data()[(i * m + j) * h + a];
            }
        }
    }
    Tensor::new(&[h, n, m], out)
}

/// Rows whose keys are all masked; their weights are near-uniform over the
/// masked entries instead of concentrated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskDiagnostics {
    pub fully_masked_rows: Vec<usize>,
}

/// Attention weights with the additive ring penalty `−δ·M` for one head.
///
/// `q` is `[.., n, d]`, `k` is `[.., m, d]` and `mask` is `[n, m]` of {0, 1}.
pub fn masked_attention_weights(
    g: &mut Graph,
    q: Var,
    k: Var,
    mask: &Tensor,
    delta: f64,
) -> Result<(Var, MaskDiagnostics)> {
    let s = mask.shape();
    if s.len() != 2 || mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("mask must be a 2-D tensor of zeros and ones"));
    }
    let (n, m) = (s[0], s[1]);
    let fully_masked_rows = (0..n)
        .filter(|&i| mask.data()[i * m..(i + 1) * m].iter().all(|&v| v == 1.0))
        .collect();
    let bias = g.constant(mask.map(|v| -delta * v))?;
    let w = attention_weights(g, q, k, Some(bias))?;
    Ok((w, MaskDiagnostics { fully_masked_rows }))
}

/// Rotary and ring-mask context for a cross-attention call.
pub struct AttentionContext<'a> {
    pub query_angles: Option<&'a RopeAngles>,
    pub key_angles: Option<&'a RopeAngles>,
    /// `[heads, n, m]` additive bias.
    pub bias: Option<Var>,
    pub dropout_seed: u64,
    pub train: bool,
}

impl AttentionContext<'_> {
    pub fn plain() -> Self {
        AttentionContext {
            query_angles: None,
            key_angles: None,
            bias: None,
            dropout_seed: 0,
            train: false,
        }
    }
}

/// Multi-head attention: per-head projections, optional rotary encoding of
/// queries and keys, scaled dot-product attention with optional per-head
/// bias, concatenation and output projection.
///
/// `q_in` is `[.., n, d_in]`, `kv_in` is `[.., m, d_in]` with the same
/// leading axes. Returns `[.., n, d_out]`.
pub fn multi_head_attention(
    g: &mut Graph,
    q_in: Var,
    kv_in: Var,
    cfg: &AttentionConfig,
    w: &AttentionWeights,
    ctx: &AttentionContext<'_>,
) -> Result<Var> {
    cfg.validate()?;
    let sq = g.shape(q_in).to_vec();
    let skv = g.shape(kv_in).to_vec();
    let r = sq.len();
    if r < 2 || skv.len() != r || sq[..r - 2] != skv[..r - 2] || sq[r - 1] != skv[r - 1] {
        return Err(Error::shape("multi_head_attention", &sq, &skv));
    }
    let (h, dh) = (cfg.heads, cfg.dim_per_head);
    let d_in = sq[r - 1];
    for (name, wv, rows) in [("wq", w.wq, d_in), ("wk", w.wk, d_in), ("wv", w.wv, d_in)] {
        if g.shape(wv) != [rows, h * dh] {
            return Err(Error::shape(name, g.shape(wv), &[rows, h * dh]));
        }
    }
    let wo_shape = g.shape(w.wo).to_vec();
    if wo_shape.len() != 2 || wo_shape[0] != h * dh {
        return Err(Error::shape("wo", &wo_shape, &[h * dh]));
    }
    let lead: usize = sq[..r - 2].iter().product();
    let (n, m) = (sq[r - 2], skv[r - 2]);

    let split = |g: &mut Graph, x: Var, wt: Var, len: usize| -> Result<Var> {
        let p = g.matmul(x, wt)?;
        let p = g.reshape(p, &[lead, len, h, dh])?;
        g.permute(p, &[0, 2, 1, 3])
    };
    let mut q = split(g, q_in, w.wq, n)?;
    let mut k = split(g, kv_in, w.wk, m)?;
    let v = split(g, kv_in, w.wv, m)?;
    if let Some(a) = ctx.query_angles {
        q = rope_rotate(g, q, a)?;
    }
    if let Some(a) = ctx.key_angles {
        k = rope_rotate(g, k, a)?;
    }
    if let Some(b) = ctx.bias {
        if g.shape(b) != [h, n, m] {
            return Err(Error::shape("attention bias", g.shape(b), &[h, n, m]));
        }
    }
    let z = scaled_dot_attention(g, q, k, v, ctx.bias)?;
    let z = g.permute(z, &[0, 2, 1, 3])?;
    let mut shape = sq[..r - 2].to_vec();
    shape.extend([n, h * dh]);
    let z = g.reshape(z, &shape)?;
    let y = g.matmul(z, w.wo)?;
    g.dropout(y, cfg.dropout, ctx.dropout_seed, ctx.train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn ln_plain(g: &mut Graph, x: Tensor, gamma: &[f64], beta: &[f64]) -> Tensor {
        let x = g.constant(x).unwrap();
        let ga = g.constant(Tensor::from_vec(gamma.to_vec())).unwrap();
        let be = g.constant(Tensor::from_vec(beta.to_vec())).unwrap();
        let y = layer_norm(g, x, ga, be, LAYER_NORM_EPS).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let y = ln_plain(&mut g, Tensor::from_vec(vec![5.0; 3]), &[1.0; 3], &[0.0; 3]);
        assert_eq!(y.data(), &[0.0; 3]);
        let y = ln_plain(&mut g, Tensor::from_vec(vec![1.0, -1.0]), &[1.0; 2], &[0.0; 2]);
        let want = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!((y.data()[0] - want).abs() < 1e-15);
        assert!((y.data()[0] - 0.999995).abs() < 1e-6);
        assert!((y.data()[1] + want).abs() < 1e-15);
        let y = ln_plain(
            &mut g,
            Tensor::from_vec(vec![1.0, 4.0, -2.0]),
            &[0.0; 3],
            &[0.5, -1.0, 2.0],
        );
        assert_eq!(y.data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn single_key_returns_value_row() {
        let mut g = Graph::new();
        let q = g
            .constant(Tensor::new(&[2, 2], vec![1.0, 2.0, -3.0, 0.5]).unwrap())
            .unwrap();
        let k = g.constant(Tensor::new(&[1, 2], vec![0.3, 0.1]).unwrap()).unwrap();
        let v = g.constant(Tensor::new(&[1, 3], vec![7.0, 8.0, 9.0]).unwrap()).unwrap();
        let o = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.value(o).data(), &[7.0, 8.0, 9.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn equal_logits_average_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        let k = g
            .constant(Tensor::new(&[2, 2], vec![0.0, 1.0, 0.0, -1.0]).unwrap())
            .unwrap();
        let v = g
            .constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap())
            .unwrap();
        let o = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.value(o).data(), &[2.0, 4.0]);
    }

    #[test]
    fn two_key_example() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let k = g.constant(eye.clone()).unwrap();
        let v = g.constant(eye).unwrap();
        let o = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        let e = (1.0 / 2f64.sqrt()).exp();
        let want = [e / (e + 1.0), 1.0 / (e + 1.0)];
        let got = g.value(o).data();
        assert!((got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
        assert!((got[0] - 0.6698).abs() < 5e-5 && (got[1] - 0.3302).abs() < 5e-5);
    }

    #[test]
    fn ring_mask_examples() {
        let spec = RingMaskSpec::default();
        assert_eq!(spec.head_radii()[0], (0.0, 40.0));
        assert_eq!(spec.head_radii()[3], (180.0, f64::INFINITY));
        let c = GeoPoint::new(46.5, 7.0).unwrap();
        // 60 km due north
        let dlat = 60.0 / 6371.0 * 180.0 / std::f64::consts::PI;
        let t60 = GeoPoint::new(46.5 + dlat, 7.0).unwrap();
        let far = GeoPoint::new(40.0, 7.0).unwrap();
        let m = build_ring_masks(&[c], &[c, t60, far], &spec).unwrap();
        assert_eq!(m.shape(), &[1, 3, 4]);
        assert_eq!(&m.data()[0..4], &[0.0, 1.0, 1.0, 1.0]);
        assert_eq!(&m.data()[4..8], &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(&m.data()[8..12], &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn ring_spec_validation() {
        let bad = RingMaskSpec {
            edges_km: vec![40.0, 30.0],
            delta: 50.0,
        };
        assert!(bad.validate().is_err());
        let bad = RingMaskSpec {
            edges_km: vec![40.0],
            delta: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn masked_weights_suppress_masked_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let q = g.constant(rand_tensor(&mut rng, &[3, 4])).unwrap();
        let k = g.constant(rand_tensor(&mut rng, &[5, 4])).unwrap();
        let mut mask = Tensor::ones(&[3, 5]);
        for i in 0..3 {
            mask.set(&[i, i], 0.0);
        }
        let (w, diag) = masked_attention_weights(&mut g, q, k, &mask, 50.0).unwrap();
        assert!(diag.fully_masked_rows.is_empty());
        for i in 0..3 {
            let row = &g.value(w).data()[i * 5..(i + 1) * 5];
            assert!(row[i] >= 1.0 - 1e-8, "{row:?}");
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // zero mask and zero delta both reduce to the plain weights
        let plain = attention_weights(&mut g, q, k, None).unwrap();
        let (z, _) = masked_attention_weights(&mut g, q, k, &Tensor::zeros(&[3, 5]), 50.0).unwrap();
        assert_eq!(g.value(z), g.value(plain));
        let (z, _) = masked_attention_weights(&mut g, q, k, &mask, 0.0).unwrap();
        assert_eq!(g.value(z), g.value(plain));
    }

    #[test]
    fn fully_masked_row_is_reported() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::ones(&[2, 4])).unwrap();
        let k = g.constant(Tensor::ones(&[3, 4])).unwrap();
        let mut mask = Tensor::zeros(&[2, 3]);
        for j in 0..3 {
            mask.set(&[1, j], 1.0);
        }
        let (w, diag) = masked_attention_weights(&mut g, q, k, &mask, 50.0).unwrap();
        assert_eq!(diag.fully_masked_rows, vec![1]);
        let row = &g.value(w).data()[3..6];
        assert!(row.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn rope_rejects_bad_head_dim() {
        assert!(rope_angles(&[(0.0, 0.0)], 6, ROPE_BASE).is_err());
        assert!(rope_angles(&[(0.0, 0.0)], 8, ROPE_BASE).is_ok());
    }

    #[test]
    fn rope_zero_coordinates_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut rng, &[2, 8])).unwrap();
        let a = rope_angles(&[(0.0, 0.0), (0.0, 0.0)], 8, ROPE_BASE).unwrap();
        let y = rope_rotate(&mut g, x, &a).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[8]);
        let gamma = rand_tensor(&mut rng, &[8]);
        let dev = finite_diff_check(
            |g, v| {
                let ga = g.constant(gamma.clone())?;
                let be = g.constant(Tensor::zeros(&[8]))?;
                let y = layer_norm(g, v, ga, be, LAYER_NORM_EPS)?;
                let w = g.constant(Tensor::from_vec((0..8).map(|i| i as f64 - 3.5).collect()))?;
                let y = g.mul(y, w)?;
                g.sum_all(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(dev < 1e-4, "{dev}");
    }
}
