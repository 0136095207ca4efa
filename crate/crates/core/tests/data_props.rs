use proptest::prelude::*;
use solar_crossformer::data::{
    load_dataset, save_dataset, synth_generate, validate_dataset_dir, window_count, windows_for_targets, Normalizer,
    SceneConfig, SplitConfig, STEPS_PER_DAY,
};

fn small_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        node_count: 3,
        days: 3,
        image_height: 6,
        image_width: 8,
        seed,
        ..SceneConfig::default()
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = synth_generate(&small_scene(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    let report = validate_dataset_dir(dir.path()).unwrap();
    assert!(report.is_valid(), "{:?}", report.problems);
    assert_eq!(
        (report.nodes, report.steps, report.image_dims),
        (3, 3 * STEPS_PER_DAY, Some((6, 8, 4)))
    );
}

#[test]
fn corrupted_station_file_names_the_line() {
    let ds = synth_generate(&small_scene(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("stations/S02.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let broken: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 5 {
                l.replacen(",", ",x", 1)
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(&path, broken.join("\n")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("S02") && err.contains("line 6"), "{err}");
}

#[test]
fn synthetic_physics_holds() {
    let ds = synth_generate(&small_scene(2)).unwrap();
    assert!(ds.check().is_empty(), "{:?}", ds.check());
    for s in &ds.stations {
        for i in 0..ds.steps {
            let cs = solar_crossformer::geometry::clearsky_ghi_kw(&s.position, s.timestamp(i));
            let g = s.ghi(i);
            assert!((0.0..=cs + 1e-12).contains(&g), "ghi {g} above clear sky {cs}");
        }
    }
    let frames = &ds.images.as_ref().unwrap().frames;
    assert!(frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn split_is_chronological_whole_days() {
    let scene = SceneConfig {
        days: 30,
        node_count: 1,
        image_height: 2,
        image_width: 2,
        ..SceneConfig::default()
    };
    let ds = synth_generate(&scene).unwrap();
    let s = SplitConfig::default().split(&ds).unwrap();
    let d = STEPS_PER_DAY;
    assert_eq!(
        (s.train.clone(), s.val.clone(), s.eval.clone()),
        (0..22 * d, 22 * d..24 * d, 24 * d..30 * d)
    );
    assert!(SplitConfig {
        eval_days: 30,
        ..SplitConfig::default()
    }
    .split(&ds)
    .is_err());
}

proptest! {
    #[test]
    fn window_count_matches_enumeration(len in 0usize..600, past in 1usize..100, horizon in 1usize..100, stride in 1usize..50) {
        let enumerated = (0..len).step_by(stride).filter(|s| s + past + horizon <= len).count();
        prop_assert_eq!(window_count(len, past, horizon, stride), enumerated);
    }

    #[test]
    fn target_windows_stay_in_range(a in 0usize..500, span in 0usize..500, past in 1usize..100, horizon in 1usize..100, stride in 1usize..30) {
        let range = a..a + span;
        let w = windows_for_targets(range.clone(), past, horizon, stride);
        for &s in &w {
            prop_assert_eq!(s % stride, 0);
            prop_assert!(s + past >= range.start && s + past + horizon <= range.end);
        }
        // nothing on the grid was missed
        let all = (0..range.end).step_by(stride).filter(|&s| s + past >= range.start && s + past + horizon <= range.end).count();
        prop_assert_eq!(w.len(), all);
    }

    #[test]
    fn normalization_round_trips(v in prop::collection::vec(-50.0f64..50.0, 3)) {
        let n = Normalizer {
            feature_names: vec!["ghi".into(), "temperature".into(), "humidity".into()],
            mean: vec![0.0, 12.0, 60.0],
            std: vec![1.3, 5.0, 15.0],
        };
        let mut row = v.clone();
        n.normalize_row(&mut row);
        prop_assert!((row[0] - v[0] / 1.3).abs() < 1e-12);
        n.denormalize_row(&mut row);
        for (a, b) in row.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
