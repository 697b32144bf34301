use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use assure_core::anomaly::{detect_points, robust_baseline, AnomalyDirection, DetectorParams};
use assure_core::model::{EntityId, Timestamp};

fn points(values: &[f64]) -> Vec<(Timestamp, f64)> {
    values.iter().enumerate().map(|(i, &v)| (Timestamp::from_secs(1_000 + i as i64), v)).collect()
}

fn gaussian(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mean, sd).unwrap();
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

fn entity() -> EntityId {
    EntityId::switch_port("leaf1", "p1")
}

fn params(threshold: f64, persistence: usize) -> DetectorParams {
    DetectorParams { threshold, persistence, ..DetectorParams::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn constants_never_fire(
        c in -1e9f64..1e9,
        n in 0usize..400,
        threshold in 0.001f64..10.0,
        persistence in 1usize..6,
    ) {
        let events = detect_points(&entity(), "m", &points(&vec![c; n]), &params(threshold, persistence)).unwrap();
        prop_assert!(events.is_empty());
    }

    #[test]
    fn power_of_two_scaling_keeps_events(
        seed in any::<u64>(),
        k in -20i32..20,
        spikes in prop::collection::vec((0usize..300, 4.0f64..30.0, 1usize..8), 0..4),
    ) {
        let mut values = gaussian(seed, 300, 100.0, 3.0);
        for (at, height, len) in spikes {
            for v in values.iter_mut().skip(at).take(len) {
                *v += height * 3.0;
            }
        }
        let factor = 2f64.powi(k);
        let scaled: Vec<f64> = values.iter().map(|v| v * factor).collect();
        let p = DetectorParams::default();
        let a = detect_points(&entity(), "m", &points(&values), &p).unwrap();
        let b = detect_points(&entity(), "m", &points(&scaled), &p).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.timestamp, y.timestamp);
            prop_assert_eq!(x.direction, y.direction);
            prop_assert!((x.score - y.score).abs() <= 1e-12 * x.score.abs().max(1.0));
        }
        let order = |events: &[assure_core::anomaly::AnomalyEvent]| {
            let mut idx: Vec<usize> = (0..events.len()).collect();
            idx.sort_by(|&i, &j| events[i].score.total_cmp(&events[j].score).then(i.cmp(&j)));
            idx
        };
        prop_assert_eq!(order(&a), order(&b));
    }

    #[test]
    fn sustained_five_dispersion_step_is_detected(
        seed in any::<u64>(),
        warmup in 40usize..200,
        extra in 0usize..10,
        persistence in 1usize..6,
        upward in any::<bool>(),
    ) {
        let mut values = gaussian(seed, warmup, 50.0, 2.0);
        let window = DetectorParams::default().baseline_window;
        let base = robust_baseline(&values[values.len().saturating_sub(window)..]).unwrap();
        let offset = 5.0 * base.dispersion;
        let level = if upward { base.median + offset } else { base.median - offset };
        values.extend(std::iter::repeat_n(level, persistence + extra));
        let events = detect_points(&entity(), "m", &points(&values), &params(3.0, persistence)).unwrap();
        let want = if upward { AnomalyDirection::High } else { AnomalyDirection::Low };
        prop_assert!(
            events.iter().any(|e| e.direction == want && e.window.1 >= Timestamp::from_secs(1_000 + warmup as i64)),
            "no event for step of {} at {}", offset, warmup
        );
    }

    #[test]
    fn detection_is_deterministic(seed in any::<u64>()) {
        let values = gaussian(seed, 250, 10.0, 1.0);
        let p = params(2.0, 2);
        let a = detect_points(&entity(), "m", &points(&values), &p).unwrap();
        let b = detect_points(&entity(), "m", &points(&values), &p).unwrap();
        prop_assert_eq!(a, b);
    }
}
