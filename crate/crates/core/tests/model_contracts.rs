use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solar_crossformer::geometry::{BoundingBox, GeoPoint, TimeStamp};
use solar_crossformer::model::{
    decode_checkpoint, encode_checkpoint, forward, postprocess, predict, ForwardOptions, ModelConfig, ModelInput,
    ModelWeights,
};
use solar_crossformer::{Error, Tensor, FORECAST_CLIP, GHI_SCALE};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn input(cfg: &ModelConfig, n: usize, seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = TimeStamp::from_ymd_hm(2024, 6, 1, 9, 0).unwrap();
    ModelInput {
        node_ids: (0..n).map(|i| format!("N{i}")).collect(),
        positions: (0..n)
            .map(|_| GeoPoint::new(rng.gen_range(46.0..46.8), rng.gen_range(6.8..7.8)).unwrap())
            .collect(),
        series: random_tensor(&mut rng, &[n, cfg.past_steps, cfg.station_features], -1.0, 1.0),
        timestamps: (0..cfg.past_steps as i64).map(|k| t0.plus_steps(k)).collect(),
        clearsky: random_tensor(&mut rng, &[n, cfg.horizon], 0.2, 0.8),
        images: cfg.use_images.then(|| {
            random_tensor(
                &mut rng,
                &[cfg.image_height, cfg.image_width, cfg.past_steps, cfg.channels],
                0.0,
                1.0,
            )
        }),
        bbox: BoundingBox::new(6.8, 46.0, 7.8, 46.8).unwrap(),
        masked_nodes: vec![0],
        masked_patches: Vec::new(),
    }
}

fn permuted(x: &ModelInput, perm: &[usize]) -> ModelInput {
    let rows = |t: &Tensor| {
        let w = t.len() / t.shape()[0];
        let data = perm
            .iter()
            .flat_map(|&i| t.data()[i * w..(i + 1) * w].to_vec())
            .collect();
        Tensor::new(t.shape(), data).unwrap()
    };
    let inverse = |old: usize| perm.iter().position(|&p| p == old).unwrap();
    ModelInput {
        node_ids: perm.iter().map(|&i| x.node_ids[i].clone()).collect(),
        positions: perm.iter().map(|&i| x.positions[i]).collect(),
        series: rows(&x.series),
        clearsky: rows(&x.clearsky),
        masked_nodes: x.masked_nodes.iter().map(|&i| inverse(i)).collect(),
        ..x.clone()
    }
}

fn weights(cfg: &ModelConfig, seed: u64) -> ModelWeights {
    ModelWeights::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn node_order_does_not_matter(perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(), seed in 0u64..1000) {
        let cfg = ModelConfig::tiny();
        let w = weights(&cfg, seed);
        let x = input(&cfg, 5, seed);
        let a = forward(&w, &x, ForwardOptions::default()).unwrap();
        let b = forward(&w, &permuted(&x, &perm), ForwardOptions::default()).unwrap();
        let per = a.len() / 5;
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..per {
                prop_assert!((a.data()[old * per + k] - b.data()[new * per + k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn postprocessed_rows_are_sorted_and_clipped(v in prop::collection::vec(-3.0f64..3.0, 3 * 6)) {
        let out = postprocess(&Tensor::new(&[2, 3, 3], v.clone()).unwrap());
        for (row, raw) in out.data().chunks(3).zip(v.chunks(3)) {
            prop_assert!(row.windows(2).all(|p| p[0] <= p[1]));
            prop_assert!(row.iter().all(|x| (0.0..=FORECAST_CLIP).contains(x)));
            let mut sorted = raw.to_vec();
            sorted.sort_by(f64::total_cmp);
            for (o, r) in row.iter().zip(&sorted) {
                prop_assert_eq!(*o, (r * GHI_SCALE).clamp(0.0, FORECAST_CLIP));
            }
        }
    }
}

#[test]
fn any_node_count_is_accepted() {
    let cfg = ModelConfig::tiny();
    let w = weights(&cfg, 3);
    for n in [1, 2, 7] {
        let f = predict(&w, &input(&cfg, n, n as u64)).unwrap();
        assert_eq!(f.values.shape(), &[n, cfg.horizon, 3]);
        assert_eq!(f.lead_times.len(), cfg.horizon);
    }
}

#[test]
fn variant_without_images_has_no_image_parameters() {
    let cfg = ModelConfig {
        use_images: false,
        ..ModelConfig::tiny()
    };
    let w = weights(&cfg, 1);
    assert!(w.params.iter().all(|p| !p.name.starts_with("embed.patch.")));
    let mut x = input(&cfg, 3, 1);
    assert!(x.images.is_none());
    let y = forward(&w, &x, ForwardOptions::default()).unwrap();
    // images handed to a model that ignores them change nothing
    x.images = Some(Tensor::full(&[4, 4, cfg.past_steps, 4], 0.5));
    assert_eq!(forward(&w, &x, ForwardOptions::default()).unwrap(), y);
}

#[test]
fn model_with_images_requires_them() {
    let cfg = ModelConfig::tiny();
    let mut x = input(&cfg, 2, 0);
    x.images = None;
    assert!(forward(&weights(&cfg, 0), &x, ForwardOptions::default()).is_err());
}

#[test]
fn dropout_is_seeded_and_off_in_evaluation() {
    let cfg = ModelConfig {
        dropout: 0.3,
        ..ModelConfig::tiny()
    };
    let w = weights(&cfg, 5);
    let x = input(&cfg, 3, 5);
    let train = |seed| forward(&w, &x, ForwardOptions { train: true, seed }).unwrap();
    assert_eq!(train(1), train(1));
    assert_ne!(train(1), train(2));
    let eval = forward(&w, &x, ForwardOptions::default()).unwrap();
    assert_eq!(eval, forward(&w, &x, ForwardOptions { train: false, seed: 9 }).unwrap());
}

#[test]
fn checkpoint_round_trips_exactly() {
    let cfg = ModelConfig::tiny();
    let w = weights(&cfg, 11);
    let meta = serde_json::json!({ "step": 42 });
    let bytes = encode_checkpoint(&w, &meta).unwrap();
    let ck = decode_checkpoint(&bytes).unwrap();
    assert_eq!(ck.weights, w);
    assert_eq!(ck.metadata, meta);
    let x = input(&cfg, 2, 0);
    assert_eq!(predict(&ck.weights, &x).unwrap(), predict(&w, &x).unwrap());
    // identical weights encode to identical bytes
    assert_eq!(encode_checkpoint(&ck.weights, &meta).unwrap(), bytes);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let w = weights(&ModelConfig::tiny(), 0);
    let bytes = encode_checkpoint(&w, &serde_json::Value::Null).unwrap();
    for broken in [
        &bytes[..bytes.len() - 8],
        &bytes[1..],
        &[&bytes[..], &[0u8; 8][..]].concat()[..],
    ] {
        assert!(matches!(decode_checkpoint(broken), Err(Error::Checkpoint(_))));
    }
}
