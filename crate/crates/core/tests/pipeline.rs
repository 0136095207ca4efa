use std::collections::BTreeMap;
use std::path::Path;

use solar_crossformer::data::{synth_generate, Dataset, SceneConfig, SplitConfig};
use solar_crossformer::geometry::TimeStamp;
use solar_crossformer::model::ModelConfig;
use solar_crossformer::pipeline::{
    evaluate_run, forecast_at, read_run_checkpoint, train_run, write_forecast_csv, write_points_csv, EvalConfig,
};
use solar_crossformer::training::TrainConfig;
use solar_crossformer::{Error, GHI_SCALE};

fn scene() -> Dataset {
    synth_generate(&SceneConfig {
        node_count: 4,
        days: 5,
        image_height: 8,
        image_width: 8,
        seed: 3,
        ..SceneConfig::default()
    })
    .unwrap()
}

fn model() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        transformer_depth: 1,
        transformer_heads: 2,
        dim_per_head: 4,
        decoder_dim: 8,
        decoder_depth: 1,
        decoder_heads: 2,
        decoder_dim_per_head: 4,
        image_height: 8,
        image_width: 8,
        past_steps: 96,
        horizon: 96,
        ..ModelConfig::tiny()
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        max_steps: 6,
        eval_every: 3,
        accumulation_steps: 1,
        window_stride: 48,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn split() -> SplitConfig {
    SplitConfig {
        eval_days: 1,
        ..SplitConfig::default()
    }
}

fn train(ds: &Dataset, out: &Path) -> Vec<u8> {
    let outcome = train_run(ds, &model(), &train_cfg(), &split(), out).unwrap();
    assert!(out.join("normalization.toml").exists());
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,lr,train_loss,val_loss"));
    assert_eq!(log.lines().count(), 1 + outcome.summary.log.len());
    std::fs::read(outcome.best_checkpoint).unwrap()
}

#[test]
fn train_eval_forecast() {
    let ds = scene();
    let dir = tempfile::tempdir().unwrap();
    let first = train(&ds, &dir.path().join("a"));
    assert_eq!(
        first,
        train(&ds, &dir.path().join("b")),
        "seeded reruns must write identical checkpoints"
    );

    let (weights, meta) = read_run_checkpoint(&dir.path().join("a/best.ckpt")).unwrap();
    let eval = EvalConfig {
        stride: 48,
        mask_nodes: Vec::new(),
    };
    let outcome = evaluate_run(&ds, &weights, &meta, &eval).unwrap();
    let eval_start = 4 * 96;
    for p in &outcome.model {
        let t = ds.timestamp(eval_start);
        assert!(
            t.steps_until(p.target_time()) >= 0,
            "target {} precedes the evaluation days",
            p.target_time()
        );
    }
    for (_, pts) in &outcome.baselines {
        assert_eq!(pts.len(), outcome.model.len());
    }

    // the reported score is reproducible from the written points
    let points = dir.path().join("points.csv");
    write_points_csv(&points, &outcome.model, &outcome.levels).unwrap();
    let mut reader = csv::Reader::from_path(&points).unwrap();
    let mut slices: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.unwrap();
        let truth: f64 = row[4].parse().unwrap();
        if truth > 0.0 {
            let lead = row[2].parse().unwrap();
            slices
                .entry((row[0].to_string(), lead))
                .or_default()
                .push((truth, row[6].parse().unwrap()));
        }
    }
    let per_slice: Vec<f64> = slices
        .values()
        .map(|v| v.iter().map(|(y, f)| (y - f).abs()).sum::<f64>() / v.len() as f64 / GHI_SCALE)
        .collect();
    let recomputed = per_slice.iter().sum::<f64>() / per_slice.len() as f64;
    let reported = outcome.model_report().overall.day.nmae.unwrap();
    assert!((recomputed - reported).abs() < 1e-12, "{recomputed} vs {reported}");

    let start = TimeStamp::from_ymd_hm(2024, 6, 5, 0, 0).unwrap();
    let fc = forecast_at(&ds, &weights, &meta, start).unwrap();
    let files = write_forecast_csv(&dir.path().join("fc"), &fc, &outcome.levels).unwrap();
    assert_eq!(files.len(), 4);
    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(text.lines().count(), 97);
    assert_eq!(
        text.lines().nth(1).unwrap().split(',').next(),
        Some(start.to_string().as_str())
    );
}

#[test]
fn unknown_mask_node_is_rejected() {
    let ds = scene();
    let dir = tempfile::tempdir().unwrap();
    train(&ds, dir.path());
    let (weights, meta) = read_run_checkpoint(&dir.path().join("best.ckpt")).unwrap();
    let eval = EvalConfig {
        stride: 48,
        mask_nodes: vec!["S99".into()],
    };
    assert!(matches!(
        evaluate_run(&ds, &weights, &meta, &eval),
        Err(Error::UnknownNode(_))
    ));
}
