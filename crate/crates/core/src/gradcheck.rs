//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::{
    attention_weights, layer_norm, multi_head_attention, rope_angles, rope_rotate, AttentionConfig, AttentionContext,
    AttentionWeights, LAYER_NORM_EPS,
};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GeoPoint, TimeStamp};
use crate::graph::{Graph, Var};
use crate::model::{forward_bound, ForwardOptions, ModelConfig, ModelInput, ModelWeights};
use crate::tensor::Tensor;
use crate::training::{mse_loss, pinball_loss, DEFAULT_QUANTILES};

/// Maximum over entries of `|g_analytic - g_fd| / max(1, |g_fd|)`.
///
/// `f` maps a graph variable holding `x` to a scalar; it is re-evaluated
/// twice per entry of `x` with that entry shifted by `±h`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.variable(t.clone())?;
        let out = f(&mut g, v)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let v = g.variable(x.clone())?;
    let out = f(&mut g, v)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let analytic = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let dev = (analytic.data()[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(dev);
    }
    Ok(worst)
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    g.value(v).item().ok_or_else(|| {
        Error::invalid(format!(
            "finite-difference target must be scalar, got shape {:?}",
            g.shape(v)
        ))
    })
}

/// Finite-difference step used by the built-in suites.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance for single primitives.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
/// Tolerance for the assembled tiny model.
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Result of one gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.deviation <= self.tolerance
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Scalar readout `Σ y ⊙ r` with a fixed random `r`, so every output entry
/// contributes a distinct weight to the checked gradient.
fn readout(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var> {
    let r = g.constant(r.clone())?;
    let p = g.mul(y, r)?;
    g.sum_all(p)
}

type Probe = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

fn check(name: &str, f: Probe, x: &Tensor, tolerance: f64) -> Result<CheckOutcome> {
    Ok(CheckOutcome {
        name: name.to_string(),
        deviation: finite_diff_check(f, x, FD_STEP)?,
        tolerance,
    })
}

/// Gradient checks of every attention and block primitive on random small
/// tensors drawn from `seed`.
pub fn primitive_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = PRIMITIVE_TOLERANCE;
    let x = randn(&mut rng, &[2, 3, 4]);
    let r = randn(&mut rng, &[2, 3, 4]);
    let gamma = randn(&mut rng, &[4]);
    let beta = randn(&mut rng, &[4]);
    let mut out = Vec::new();

    let (gm, bt, rr) = (gamma.clone(), beta.clone(), r.clone());
    out.push(check(
        "layer_norm/input",
        Box::new(move |g, v| {
            let (a, b) = (g.constant(gm.clone())?, g.constant(bt.clone())?);
            let y = layer_norm(g, v, a, b, LAYER_NORM_EPS)?;
            readout(g, y, &rr)
        }),
        &x,
        tol,
    )?);
    let (xx, bt, rr) = (x.clone(), beta.clone(), r.clone());
    out.push(check(
        "layer_norm/gamma",
        Box::new(move |g, v| {
            let (xi, b) = (g.constant(xx.clone())?, g.constant(bt.clone())?);
            let y = layer_norm(g, xi, v, b, LAYER_NORM_EPS)?;
            readout(g, y, &rr)
        }),
        &gamma,
        tol,
    )?);
    let rr = r.clone();
    out.push(check(
        "softmax",
        Box::new(move |g, v| {
            let y = g.softmax(v, 2)?;
            readout(g, y, &rr)
        }),
        &x,
        tol,
    )?);
    let rr = r.clone();
    out.push(check(
        "gelu",
        Box::new(move |g, v| {
            let y = g.gelu(v)?;
            readout(g, y, &rr)
        }),
        &x,
        tol,
    )?);
    let w = randn(&mut rng, &[4, 5]);
    let r5 = randn(&mut rng, &[2, 3, 5]);
    let (ww, rr) = (w.clone(), r5.clone());
    out.push(check(
        "matmul/lhs",
        Box::new(move |g, v| {
            let b = g.constant(ww.clone())?;
            let y = g.matmul(v, b)?;
            readout(g, y, &rr)
        }),
        &x,
        tol,
    )?);
    let (xx, rr) = (x.clone(), r5.clone());
    out.push(check(
        "matmul/rhs",
        Box::new(move |g, v| {
            let a = g.constant(xx.clone())?;
            let y = g.matmul(a, v)?;
            readout(g, y, &rr)
        }),
        &w,
        tol,
    )?);

    // attention over [2, 3] queries and [2, 5] keys with a bias
    let q = randn(&mut rng, &[2, 3, 4]);
    let k = randn(&mut rng, &[2, 5, 4]);
    let bias = randn(&mut rng, &[3, 5]);
    let rw = randn(&mut rng, &[2, 3, 5]);
    let (kk, bb, rr) = (k.clone(), bias.clone(), rw.clone());
    out.push(check(
        "attention_weights/query",
        Box::new(move |g, v| {
            let (kv, b) = (g.constant(kk.clone())?, g.constant(bb.clone())?);
            let y = attention_weights(g, v, kv, Some(b))?;
            readout(g, y, &rr)
        }),
        &q,
        tol,
    )?);
    let (qq, bb, rr) = (q.clone(), bias.clone(), rw.clone());
    out.push(check(
        "attention_weights/key",
        Box::new(move |g, v| {
            let (qv, b) = (g.constant(qq.clone())?, g.constant(bb.clone())?);
            let y = attention_weights(g, qv, v, Some(b))?;
            readout(g, y, &rr)
        }),
        &k,
        tol,
    )?);

    let coords = vec![(10.0, 20.0), (55.0, 3.0), (90.0, 70.0)];
    let angles = rope_angles(&coords, 4, 1e4)?;
    let rr = r.clone();
    out.push(check(
        "rope_rotate",
        Box::new(move |g, v| {
            let y = rope_rotate(g, v, &angles)?;
            readout(g, y, &rr)
        }),
        &x,
        tol,
    )?);

    let cfg = AttentionConfig {
        embed_dim: 4,
        heads: 2,
        dim_per_head: 4,
        dropout: 0.0,
    };
    let ws: Vec<Tensor> = [[4, 8], [4, 8], [4, 8], [8, 4]]
        .iter()
        .map(|s| randn(&mut rng, s))
        .collect();
    let kv_in = randn(&mut rng, &[2, 5, 4]);
    let head_bias = randn(&mut rng, &[2, 3, 5]);
    let q_coords = vec![(10.0, 20.0), (55.0, 3.0), (90.0, 70.0)];
    let k_coords = vec![(1.0, 2.0), (30.0, 40.0), (60.0, 10.0), (80.0, 95.0), (45.0, 45.0)];
    for (target, name) in [
        (0usize, "multi_head_attention/query"),
        (1, "multi_head_attention/wq"),
        (2, "multi_head_attention/wo"),
    ] {
        let at = match target {
            0 => x_for_mha(),
            1 => ws[0].clone(),
            _ => ws[3].clone(),
        };
        let (ws, kv_in, hb, rr) = (ws.clone(), kv_in.clone(), head_bias.clone(), r.clone());
        let qa = rope_angles(&q_coords, 4, 1e4)?;
        let ka = rope_angles(&k_coords, 4, 1e4)?;
        let probe: Probe = Box::new(move |g, v| {
            let mut vars = Vec::with_capacity(4);
            for t in &ws {
                vars.push(g.constant(t.clone())?);
            }
            let mut q_in = g.constant(x_for_mha())?;
            match target {
                0 => q_in = v,
                1 => vars[0] = v,
                _ => vars[3] = v,
            }
            let kv = g.constant(kv_in.clone())?;
            let b = g.constant(hb.clone())?;
            let ctx = AttentionContext {
                query_angles: Some(&qa),
                key_angles: Some(&ka),
                bias: Some(b),
                dropout_seed: 0,
                train: false,
            };
            let aw = AttentionWeights {
                wq: vars[0],
                wk: vars[1],
                wv: vars[2],
                wo: vars[3],
            };
            let y = multi_head_attention(g, q_in, kv, &cfg, &aw, &ctx)?;
            readout(g, y, &rr)
        });
        out.push(check(name, probe, &at, tol)?);
    }

    let levels = DEFAULT_QUANTILES.to_vec();
    let pred = randn(&mut rng, &[2, 4, 3]);
    let truth = randn(&mut rng, &[2, 4]);
    let (tt, lv) = (truth.clone(), levels.clone());
    out.push(check(
        "pinball_loss",
        Box::new(move |g, v| pinball_loss(g, v, &tt, &lv)),
        &pred,
        tol,
    )?);
    let pred1 = randn(&mut rng, &[2, 4, 1]);
    let tt = truth.clone();
    out.push(check(
        "mse_loss",
        Box::new(move |g, v| mse_loss(g, v, &tt)),
        &pred1,
        tol,
    )?);
    Ok(out)
}

fn x_for_mha() -> Tensor {
    let data = (0..24).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
    Tensor::from_parts(vec![2, 3, 4], data)
}

/// Two stations about 60 km apart in a small box, with random series and
/// images, one node and one patch masked.
pub fn tiny_input(cfg: &ModelConfig, seed: u64) -> Result<ModelInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, h, f) = (cfg.past_steps, cfg.horizon, cfg.station_features);
    let t0 = TimeStamp::from_ymd_hm(2024, 6, 1, 10, 0)?;
    let images = cfg
        .use_images
        .then(|| randn(&mut rng, &[cfg.image_height, cfg.image_width, t, cfg.channels]).map(|v| v.abs().min(1.0)));
    Ok(ModelInput {
        node_ids: vec!["A".into(), "B".into()],
        positions: vec![GeoPoint::new(46.2, 7.0)?, GeoPoint::new(46.6, 7.5)?],
        series: randn(&mut rng, &[2, t, f]),
        timestamps: (0..t as i64).map(|k| t0.plus_steps(k)).collect(),
        clearsky: randn(&mut rng, &[2, h]).map(|v| 0.5 + 0.1 * v),
        images,
        bbox: BoundingBox::new(6.8, 46.0, 7.8, 46.8)?,
        masked_nodes: vec![1],
        masked_patches: if cfg.use_images { vec![2] } else { Vec::new() },
    })
}

/// End-to-end check on the tiny model: the gradient of a random readout of
/// the raw output with respect to every parameter tensor.
pub fn model_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ModelWeights::init(&cfg, &mut rng)?;
    // move mask tokens and norms off their exact initial values
    for p in w.params.iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let input = tiny_input(&cfg, seed ^ 1)?;
    let r = randn(&mut rng, &[2, cfg.horizon, cfg.output_heads]);
    let names: Vec<String> = w.params.iter().map(|p| p.name.clone()).collect();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let value = w.params.get(&name).expect("listed above").value.clone();
        let (w, input, r, n) = (w.clone(), input.clone(), r.clone(), name.clone());
        let probe: Probe = Box::new(move |g, v| {
            let mut p = w.params.bind_frozen(g)?;
            p.rebind(&n, v)?;
            let y = forward_bound(g, &w, &p, &input, ForwardOptions::default())?;
            readout(g, y, &r)
        });
        out.push(check(&format!("model/{name}"), probe, &value, MODEL_TOLERANCE)?);
    }
    Ok(out)
}
