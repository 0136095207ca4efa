use proptest::prelude::*;
use solar_crossformer::attention::{
    attention_weights, build_ring_masks, layer_norm, ring_bias, rope_angles, rope_rotate, RingMaskSpec, LAYER_NORM_EPS,
    ROPE_BASE,
};
use solar_crossformer::geometry::GeoPoint;
use solar_crossformer::{Graph, Tensor};

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, n)
}

fn point() -> impl Strategy<Value = GeoPoint> {
    (45.8f64..47.8, 5.9f64..10.5).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

proptest! {
    #[test]
    fn weight_rows_are_distributions(n in 1usize..5, m in 1usize..6, seed in values(64), bias in values(30)) {
        let q = Tensor::new(&[n, 4], seed[..n * 4].to_vec()).unwrap();
        let k = Tensor::new(&[m, 4], seed[32..32 + m * 4].to_vec()).unwrap();
        let b = Tensor::new(&[n, m], bias[..n * m].iter().map(|v| v * 10.0).collect()).unwrap();
        let mut g = Graph::new();
        let (q, k, b) = (g.constant(q).unwrap(), g.constant(k).unwrap(), g.constant(b).unwrap());
        let w = attention_weights(&mut g, q, k, Some(b)).unwrap();
        for row in g.value(w).data().chunks(m) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn each_pair_opens_exactly_one_ring(centers in prop::collection::vec(point(), 1..6), targets in prop::collection::vec(point(), 1..8)) {
        let spec = RingMaskSpec::default();
        let masks = build_ring_masks(&centers, &targets, &spec).unwrap();
        let h = spec.heads();
        for pair in masks.data().chunks(h) {
            prop_assert_eq!(pair.iter().filter(|&&v| v == 0.0).count(), 1);
        }
        let bias = ring_bias(&masks, 50.0).unwrap();
        prop_assert_eq!(bias.shape(), &[h, centers.len(), targets.len()]);
    }

    #[test]
    fn ring_head_matches_distance(a in point(), b in point()) {
        let spec = RingMaskSpec::default();
        let masks = build_ring_masks(&[a], &[b], &spec).unwrap();
        let d = a.haversine_km(&b);
        let open = masks.data().iter().position(|&v| v == 0.0).unwrap();
        let (lo, hi) = spec.head_radii()[open];
        prop_assert!(lo <= d && d < hi, "{d} km in head {open} = [{lo}, {hi})");
    }

    #[test]
    fn rotary_scores_depend_on_offsets_only(
        q in values(8), k in values(8),
        pq in (0.0f64..100.0, 0.0f64..100.0), pk in (0.0f64..100.0, 0.0f64..100.0),
        shift in (-40.0f64..40.0, -40.0f64..40.0),
    ) {
        let score = |pq: (f64, f64), pk: (f64, f64)| {
            let mut g = Graph::new();
            let qv = g.constant(Tensor::new(&[1, 8], q.clone()).unwrap()).unwrap();
            let kv = g.constant(Tensor::new(&[1, 8], k.clone()).unwrap()).unwrap();
            let qr = rope_rotate(&mut g, qv, &rope_angles(&[pq], 8, ROPE_BASE).unwrap()).unwrap();
            let kr = rope_rotate(&mut g, kv, &rope_angles(&[pk], 8, ROPE_BASE).unwrap()).unwrap();
            let p = g.mul(qr, kr).unwrap();
            let s = g.sum_all(p).unwrap();
            g.value(s).data()[0]
        };
        let moved = score((pq.0 + shift.0, pq.1 + shift.1), (pk.0 + shift.0, pk.1 + shift.1));
        prop_assert!((score(pq, pk) - moved).abs() <= 1e-9);
    }

    #[test]
    fn rotation_preserves_norm(x in values(8), p in (0.0f64..100.0, 0.0f64..100.0)) {
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(&[1, 8], x.clone()).unwrap()).unwrap();
        let r = rope_rotate(&mut g, v, &rope_angles(&[p], 8, ROPE_BASE).unwrap()).unwrap();
        let before: f64 = x.iter().map(|v| v * v).sum();
        let after: f64 = g.value(r).data().iter().map(|v| v * v).sum();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn layer_norm_standardizes(x in values(6)) {
        let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-2);
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(&[1, 6], x).unwrap()).unwrap();
        let gamma = g.constant(Tensor::ones(&[6])).unwrap();
        let beta = g.constant(Tensor::zeros(&[6])).unwrap();
        let y = layer_norm(&mut g, v, gamma, beta, LAYER_NORM_EPS).unwrap();
        let d = g.value(y).data();
        let mean = d.iter().sum::<f64>() / 6.0;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
        prop_assert!(mean.abs() < 1e-12);
        prop_assert!(var <= 1.0 && var > 0.9);
    }
}
