use proptest::prelude::*;

use xfaith_core::discretizers::{importance_values, DiscretizerSpec};
use xfaith_core::estimators::{estimate_global, estimate_on_points, points_to_trace, uniqueness, Relation};
use xfaith_core::harness::split_populations;
use xfaith_core::oracle::{decoder_report, exact_global_consistency};
use xfaith_core::{discretize_trace, ExplanationPayload, FiniteSystem, Instance, Label, Trace, TraceRecord};

fn keyed(pairs: &[(u8, u8)]) -> Trace {
    let records = pairs
        .iter()
        .enumerate()
        .map(|(i, (k, y))| {
            TraceRecord::new(
                Instance::numeric(format!("r{i}"), &[i as f64]),
                Label::new(y.to_string()),
                ExplanationPayload::opaque(format!("k{k}")),
            )
        })
        .collect();
    Trace::new(vec!["x".into()], records).unwrap()
}

fn pairs() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..6, 0u8..3), 1..120)
}

proptest! {
    #[test]
    fn estimate_lies_in_unit_interval(p in pairs()) {
        let r = estimate_global(&keyed(&p), Relation::Equality).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.estimate));
        prop_assert!((0.0..=1.0).contains(&r.uniqueness));
        prop_assert!(r.skipped <= r.n);
    }

    #[test]
    fn estimate_ignores_record_order(p in pairs(), seed in any::<u64>()) {
        let mut shuffled = p.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = estimate_global(&keyed(&p), Relation::Equality).unwrap();
        let b = estimate_global(&keyed(&shuffled), Relation::Equality).unwrap();
        prop_assert!((a.estimate - b.estimate).abs() < 1e-12);
        prop_assert_eq!(a.per_key, b.per_key);
    }

    #[test]
    fn pure_keys_with_repeats_score_one(keys in prop::collection::vec(0u8..5, 1..60)) {
        // every key appears at least twice and determines the label
        let p: Vec<(u8, u8)> = keys.iter().flat_map(|&k| [(k, k % 3), (k, k % 3)]).collect();
        prop_assert_eq!(estimate_global(&keyed(&p), Relation::Equality).unwrap().estimate, 1.0);
    }

    #[test]
    fn distinct_keys_score_zero(labels in prop::collection::vec(0u8..3, 1..60)) {
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, y)| {
                TraceRecord::new(
                    Instance::numeric(format!("r{i}"), &[0.0]),
                    Label::new(y.to_string()),
                    ExplanationPayload::opaque(format!("u{i}")),
                )
            })
            .collect();
        let t = Trace::new(vec!["x".into()], records).unwrap();
        let r = estimate_global(&t, Relation::Equality).unwrap();
        prop_assert_eq!((r.estimate, r.uniqueness), (0.0, 1.0));
    }

    #[test]
    fn fixed_point_chain_coarsens(phi in prop::collection::vec(-10.0f64..10.0, 1..8)) {
        let fp = DiscretizerSpec::FixedPoint;
        let one = importance_values(&phi, fp(1)).unwrap();
        prop_assert_eq!(&importance_values(&importance_values(&phi, fp(2)).unwrap(), fp(1)).unwrap(), &one);
        prop_assert_eq!(&importance_values(&one, fp(1)).unwrap(), &one);
        let sign = importance_values(&phi, DiscretizerSpec::Sign).unwrap();
        prop_assert_eq!(importance_values(&sign, DiscretizerSpec::Sign).unwrap(), sign);
    }

    #[test]
    fn coarser_keys_are_less_unique(vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..80)) {
        let records = vs
            .iter()
            .enumerate()
            .map(|(i, phi)| {
                TraceRecord::new(
                    Instance::numeric(format!("r{i}"), &[0.0, 0.0, 0.0]),
                    Label::new("1"),
                    ExplanationPayload::importance(phi.clone()),
                )
            })
            .collect();
        let t = Trace::new(vec!["a".into(), "b".into(), "c".into()], records).unwrap();
        let u = |s| uniqueness(&discretize_trace(&t, s).unwrap()).unwrap();
        let chain = [
            u(DiscretizerSpec::Original),
            u(DiscretizerSpec::FixedPoint(2)),
            u(DiscretizerSpec::FixedPoint(1)),
            u(DiscretizerSpec::Sign),
        ];
        prop_assert!(chain.windows(2).all(|w| w[0] >= w[1]), "{:?}", chain);
        let d = discretize_trace(&t, DiscretizerSpec::Sign).unwrap();
        prop_assert_eq!(d.len(), t.len());
        for (a, b) in d.records().iter().zip(t.records()) {
            prop_assert_eq!(&a.prediction, &b.prediction);
            prop_assert_eq!(&a.instance, &b.instance);
        }
    }

    #[test]
    fn split_partitions_the_trace(p in pairs(), prob in 0.01f64..0.99, seed in any::<u64>()) {
        let t = keyed(&p);
        let (a, b) = split_populations(&t, &Label::new("0"), prob, seed).unwrap();
        prop_assert_eq!(a.len() + b.len(), t.len());
        let mut ids: Vec<String> = a.records().iter().chain(b.records()).map(|r| r.instance.id.clone()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), t.len());
    }

    #[test]
    fn decoder_sandwich(
        dists in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 1..5), 1..10),
    ) {
        let k = dists.iter().map(Vec::len).max().unwrap();
        let norm: Vec<Vec<f64>> = dists
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.resize(k, 0.0);
                let s: f64 = d.iter().sum();
                d.iter().map(|v| v / s).collect()
            })
            .collect();
        let masses = vec![1.0 / norm.len() as f64; norm.len()];
        let sys = FiniteSystem::from_leaves(&masses, &norm).unwrap();
        let r = decoder_report(&sys);
        prop_assert!(r.deterministic_error <= r.gibbs_error + 1e-12);
        prop_assert!(r.gibbs_error <= 2.0 * r.deterministic_error + 1e-12);
        prop_assert!((exact_global_consistency(&sys) - (1.0 - r.gibbs_error)).abs() < 1e-12);
    }

    #[test]
    fn system_samples_agree_with_trace_path(sample in prop::collection::vec(0usize..4, 1..50)) {
        let sys = FiniteSystem::from_leaves(&[0.5, 0.5], &[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let a = estimate_on_points(&sys, &sample, Relation::Equality).unwrap();
        let b = estimate_global(&points_to_trace(&sys, &sample), Relation::Equality).unwrap().estimate;
        prop_assert_eq!(a, b);
    }
}
