use proptest::prelude::*;
use solar_crossformer::geometry::TimeStamp;
use solar_crossformer::metrics::{deterministic_metrics, evaluate_points, probabilistic_metrics, Point};
use solar_crossformer::GHI_SCALE;

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.2], n),
            prop::collection::vec(0.0f64..1.5, n),
        )
    })
}

proptest! {
    #[test]
    fn nmae_never_exceeds_nrmse((y, f) in series()) {
        for night in [false, true] {
            if let (Some(r), Some(a), _) = deterministic_metrics(&y, &f, GHI_SCALE, night) {
                prop_assert!(a <= r + 1e-15);
            }
        }
    }

    #[test]
    fn mape_only_without_night((y, f) in series()) {
        prop_assert_eq!(deterministic_metrics(&y, &f, GHI_SCALE, false).2, None);
    }

    #[test]
    fn perfect_forecast_is_free((y, _) in series()) {
        let (r, a, _) = deterministic_metrics(&y, &y, GHI_SCALE, false);
        prop_assert_eq!((r, a), (Some(0.0), Some(0.0)));
        let q: Vec<Vec<f64>> = y.iter().map(|&v| vec![v; 3]).collect();
        let (picp, _, crps) = probabilistic_metrics(&y, &q, &[0.05, 0.5, 0.95], GHI_SCALE);
        prop_assert_eq!(picp, Some(1.0));
        prop_assert_eq!(crps, Some(0.0));
    }

    #[test]
    fn coverage_is_a_fraction((y, f) in series(), width in 0.0f64..0.5) {
        let q: Vec<Vec<f64>> = f.iter().map(|&v| vec![v - width, v, v + width]).collect();
        let (picp, pinaw, crps) = probabilistic_metrics(&y, &q, &[0.05, 0.5, 0.95], GHI_SCALE);
        let picp = picp.unwrap();
        prop_assert!((0.0..=1.0).contains(&picp));
        prop_assert!(crps.unwrap() >= 0.0);
        if let Some(p) = pinaw {
            prop_assert!(p >= 0.0);
        }
    }

    #[test]
    fn overall_is_mean_of_slices((y, f) in series()) {
        let t0 = TimeStamp::from_ymd_hm(2024, 6, 1, 0, 0).unwrap();
        let points: Vec<Point> = y.iter().zip(&f).enumerate().map(|(i, (&y, &f))| Point {
            node: format!("N{}", i % 2),
            lead: i % 3,
            issue: t0.plus_steps(i as i64 / 6),
            truth: y,
            quantiles: vec![f],
        }).collect();
        let r = evaluate_points(&points, &[0.5]);
        let vals: Vec<f64> = r.slices.iter().filter_map(|s| s.all.nmae).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        prop_assert!((r.overall.all.nmae.unwrap() - mean).abs() < 1e-15);
        prop_assert!(r.overall.all.picp.is_none());
    }
}
