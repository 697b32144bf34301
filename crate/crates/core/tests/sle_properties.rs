use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use assure_core::depgraph::build_graph;
use assure_core::harness::{simulate, Scenario};
use assure_core::ingest::ingest_sources;
use assure_core::model::{EntityId, Layer, MetricRegistry, Timestamp, MICROS_PER_SECOND};
use assure_core::sle::{evaluate_window, layer_sle, sle_series, Constituent, MetricSeries, SleProfile};

const WINDOW_START: i64 = 1_000 * MICROS_PER_SECOND;

#[derive(Debug, Clone)]
struct Fixture {
    profile: SleProfile,
    samples: MetricSeries,
}

fn bound() -> impl Strategy<Value = Option<f64>> {
    prop::option::of((0u32..100).prop_map(f64::from))
}

fn fixture() -> impl Strategy<Value = Fixture> {
    let constituent = (bound(), bound());
    (prop::collection::vec(constituent, 1..4), 5u64..90).prop_flat_map(|(bounds, window_secs)| {
        let span = (window_secs as i64 + 30) * MICROS_PER_SECOND;
        let series = prop::collection::vec(
            prop::collection::vec(
                (0..span, prop_oneof![(0u32..100).prop_map(f64::from), 0.0f64..100.0]),
                0..40,
            ),
            bounds.len() + 1,
        );
        (Just(bounds), Just(window_secs), series).prop_map(|(bounds, window_secs, series)| {
            let constituents: Vec<Constituent> = bounds
                .iter()
                .enumerate()
                .map(|(i, &(lower_bound, upper_bound))| Constituent { metric: format!("m{i}"), lower_bound, upper_bound })
                .collect();
            let samples = series
                .into_iter()
                .enumerate()
                .map(|(i, mut pts)| {
                    pts.sort_by_key(|p| p.0);
                    // Samples start 15 s before the window so edge filtering matters.
                    let pts = pts.into_iter().map(|(t, v)| (Timestamp(WINDOW_START - 15 * MICROS_PER_SECOND + t), v)).collect();
                    (format!("m{i}"), pts)
                })
                .collect();
            Fixture {
                profile: SleProfile { layer: Layer::Gpu, constituents, window_length_secs: window_secs, stride_secs: 60 },
                samples,
            }
        })
    })
}

struct OracleResult {
    pct: Option<f64>,
    evaluated: usize,
    breaching: BTreeMap<String, usize>,
}

/// Enumerates every tick and every constituent independently.
fn oracle(f: &Fixture) -> OracleResult {
    let start = WINDOW_START;
    let end = start + f.profile.window_length_secs as i64 * MICROS_PER_SECOND;
    let second = |t: i64| t - t.rem_euclid(MICROS_PER_SECOND);
    let inside = |t: i64| start <= t && t < end;
    let empty = Vec::new();
    let series = |m: &str| f.samples.get(m).unwrap_or(&empty);

    let mut ticks = BTreeSet::new();
    for c in &f.profile.constituents {
        for (t, _) in series(&c.metric) {
            if inside(t.0) {
                ticks.insert(second(t.0));
            }
        }
    }
    let (mut evaluated, mut compliant) = (0, 0);
    let mut breaching = BTreeMap::new();
    for &tick in &ticks {
        let mut seen = false;
        let mut ok = true;
        for c in &f.profile.constituents {
            let mut value = None;
            for (t, v) in series(&c.metric) {
                if inside(t.0) && second(t.0) <= tick {
                    value = Some(*v);
                }
            }
            let Some(v) = value else { continue };
            seen = true;
            let low_ok = match c.lower_bound {
                Some(lo) => v >= lo,
                None => true,
            };
            let high_ok = match c.upper_bound {
                Some(hi) => v <= hi,
                None => true,
            };
            if !(low_ok && high_ok) {
                ok = false;
                *breaching.entry(c.metric.clone()).or_insert(0) += 1;
            }
        }
        if seen {
            evaluated += 1;
            compliant += usize::from(ok);
        }
    }
    let pct = (evaluated > 0).then(|| 100.0 * compliant as f64 / evaluated as f64);
    OracleResult { pct, evaluated, breaching }
}

fn entity() -> EntityId {
    EntityId::gpu("GPU-00000000")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn window_matches_brute_force_oracle(f in fixture()) {
        let got = evaluate_window(&entity(), &f.samples, &f.profile, Timestamp(WINDOW_START));
        let want = oracle(&f);
        prop_assert_eq!(got.evaluated_timestamps, want.evaluated);
        prop_assert_eq!(&got.breaching_metrics, &want.breaching);
        match (got.compliance_pct, want.pct) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
        if let Some(p) = got.compliance_pct {
            prop_assert!((0.0..=100.0).contains(&p));
        }
    }

    #[test]
    fn out_of_bounds_sample_never_raises_compliance(f in fixture(), pick in any::<prop::sample::Index>()) {
        let before = evaluate_window(&entity(), &f.samples, &f.profile, Timestamp(WINDOW_START));
        let Some(pct_before) = before.compliance_pct else { return Ok(()) };
        let bounded: Vec<&Constituent> = f.profile.constituents.iter().filter(|c| c.upper_bound.is_some()).collect();
        prop_assume!(!bounded.is_empty());
        let c = bounded[pick.index(bounded.len())];
        // An already-evaluated tick of this window.
        let end = WINDOW_START + f.profile.window_length_secs as i64 * MICROS_PER_SECOND;
        let ticks: Vec<i64> = f
            .samples
            .values()
            .flatten()
            .map(|(t, _)| t.floor_second().0)
            .filter(|&t| WINDOW_START <= t && t < end)
            .collect();
        prop_assume!(!ticks.is_empty());
        let tick = ticks[pick.index(ticks.len())];

        let mut degraded = f.clone();
        let pts = degraded.samples.get_mut(&c.metric).unwrap();
        let at = pts.partition_point(|(t, _)| t.0 <= tick);
        pts.insert(at, (Timestamp(tick), c.upper_bound.unwrap() + 1.0));
        let after = evaluate_window(&entity(), &degraded.samples, &degraded.profile, Timestamp(WINDOW_START));
        prop_assert!(after.compliance_pct.unwrap() <= pct_before + 1e-12);
    }
}

#[test]
fn single_entity_layer_equals_entity_series() {
    let mut s = Scenario::preset("throttle").unwrap();
    s.workloads[0].iterations = 120;
    s.faults.clear();
    let out = simulate(&s).unwrap();
    let (snap, _) = ingest_sources(&out.sources(), &out.topology, &MetricRegistry::with_defaults()).unwrap();
    let graph = build_graph(&snap);
    let app = EntityId::app(&out.manifest.placements[0].app);
    let profile = SleProfile { window_length_secs: 30, stride_secs: 10, ..SleProfile::default_application() };
    let layer = layer_sle(&graph, &snap, &app, Layer::Application, &profile).unwrap();
    let single = sle_series(&snap, &app, &profile).unwrap();
    assert_eq!(layer.len(), single.len());
    for (l, e) in layer.iter().zip(&single) {
        assert_eq!(l.window_start, e.window_start);
        assert_eq!(l.compliance_pct, e.compliance_pct);
    }
}

#[test]
fn windows_without_data_are_not_compliant() {
    let mut s = Scenario::preset("healthy").unwrap();
    s.workloads[0].iterations = 90;
    let out = simulate(&s).unwrap();
    let (snap, _) = ingest_sources(&out.sources(), &out.topology, &MetricRegistry::with_defaults()).unwrap();
    let graph = build_graph(&snap);
    let app = EntityId::app(&out.manifest.placements[0].app);
    // A constituent nobody reports: every window is empty.
    let profile = SleProfile {
        layer: Layer::Gpu,
        constituents: vec![Constituent { metric: "gpu.power".into(), lower_bound: None, upper_bound: Some(1.0) }],
        window_length_secs: 30,
        stride_secs: 30,
    };
    let windows = layer_sle(&graph, &snap, &app, Layer::Gpu, &profile).unwrap();
    assert!(!windows.is_empty());
    for w in windows {
        assert_eq!(w.entities_evaluated, 0);
        assert_eq!(w.compliance_pct, None);
        assert_eq!(w.entities_total, 8);
    }
}
