use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use solar_crossformer::gradcheck::tiny_input;
use solar_crossformer::model::{ModelConfig, ModelWeights};
use solar_crossformer::training::{
    draw_mask, pinball_loss, select_checkpoint, CosineRestarts, Sample, TrainConfig, TrainState, Trainer,
};
use solar_crossformer::{Graph, Tensor};

fn pinball(f: &[f64], y: &[f64], levels: &[f64]) -> f64 {
    let n = y.len();
    let mut g = Graph::new();
    let p = g
        .constant(Tensor::new(&[1, n, levels.len()], f.to_vec()).unwrap())
        .unwrap();
    let l = pinball_loss(&mut g, p, &Tensor::new(&[1, n], y.to_vec()).unwrap(), levels).unwrap();
    g.value(l).data()[0]
}

fn samples(cfg: &ModelConfig) -> Vec<Sample> {
    (0..3)
        .map(|k| {
            let mut input = tiny_input(cfg, k).unwrap();
            input.masked_nodes.clear();
            Sample {
                input,
                target: Tensor::full(&[2, cfg.horizon], 0.2 + 0.1 * k as f64),
                seed: k,
            }
        })
        .collect()
}

#[test]
fn resumed_state_continues_the_same_trajectory() {
    let cfg = ModelConfig::tiny();
    let tc = TrainConfig {
        accumulation_steps: 1,
        ..TrainConfig::default()
    };
    let w = ModelWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let data = samples(&cfg);
    let mut a = Trainer::new(w, tc.clone()).unwrap();
    a.micro_step(&data[..1]).unwrap();
    let json = serde_json::to_string(&a.state).unwrap();
    let state: TrainState = serde_json::from_str(&json).unwrap();
    let mut b = Trainer::resume(a.weights.clone(), tc, state).unwrap();
    for s in &data[1..] {
        a.micro_step(std::slice::from_ref(s)).unwrap();
        b.micro_step(std::slice::from_ref(s)).unwrap();
    }
    for (x, y) in a.weights.params.iter().zip(b.weights.params.iter()) {
        assert_eq!(x.value, y.value, "{}", x.name);
    }
    assert_eq!(a.state, b.state);
}

#[test]
fn mismatched_heads_are_rejected() {
    let cfg = ModelConfig {
        output_heads: 1,
        ..ModelConfig::tiny()
    };
    let w = ModelWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(Trainer::new(w, TrainConfig::default()).is_err());
}

#[test]
fn updates_reduce_loss_on_a_fixed_batch() {
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let tc = TrainConfig {
        accumulation_steps: 1,
        base_lr: 3e-3,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(w, tc).unwrap();
    let data = samples(&cfg);
    let before = t.evaluate_loss(&data).unwrap();
    for _ in 0..40 {
        t.micro_step(&data).unwrap();
    }
    assert!(t.evaluate_loss(&data).unwrap() < 0.5 * before);
}

proptest! {
    #[test]
    fn median_pinball_is_half_mae(pairs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..40)) {
        let (f, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mae = f.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / f.len() as f64;
        prop_assert!((pinball(&f, &y, &[0.5]) - mae / 2.0).abs() < 1e-15);
    }

    #[test]
    fn pinball_is_nonnegative_and_zero_at_truth(y in prop::collection::vec(0.0f64..1.2, 1..10)) {
        let levels = [0.05, 0.5, 0.95];
        let exact: Vec<f64> = y.iter().flat_map(|&v| [v, v, v]).collect();
        prop_assert_eq!(pinball(&exact, &y, &levels), 0.0);
        let off: Vec<f64> = exact.iter().map(|v| v + 0.3).collect();
        prop_assert!(pinball(&off, &y, &levels) > 0.0);
    }

    #[test]
    fn schedule_stays_between_floor_and_base(step in 0usize..20_000, base in 1e-5f64..1e-2) {
        let s = CosineRestarts::default();
        let lr = s.lr(base, step);
        prop_assert!(lr <= base * (1.0 + 1e-12) && lr >= base * s.min_lr_ratio * (1.0 - 1e-12));
    }

    #[test]
    fn masks_have_the_rounded_size(n in 0usize..200, ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let m = draw_mask(n, ratio, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(m.len(), (ratio * n as f64).round() as usize);
        prop_assert!(m.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(m.iter().all(|&i| i < n));
    }

    #[test]
    fn selection_is_first_minimum(losses in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let history: Vec<(usize, f64)> = losses.iter().enumerate().map(|(i, &l)| (i * 100, l)).collect();
        let k = select_checkpoint(&history).unwrap();
        let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(losses[k], best);
        prop_assert!(losses[..k].iter().all(|&l| l > best));
    }
}
