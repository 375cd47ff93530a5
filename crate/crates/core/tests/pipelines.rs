use xfaith_core::estimators::{estimate_global, estimate_local, plug_in_bounds, BoundSource, Relation};
use xfaith_core::explainers::{explain_with_tree, find_anchor, fit_surrogate_tree};
use xfaith_core::harness::{generate_world, stream_rng, sweep_samples, WorldSpec};
use xfaith_core::io::{load_trace, write_trace, TraceFormat};
use xfaith_core::{Trace, TraceRecord};

#[test]
fn trace_survives_a_jsonl_round_trip() {
    let world = generate_world(WorldSpec::tree(8, 0.1), 2).unwrap();
    let t = world.sample(100, &mut stream_rng(2, 0)).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_trace(&t, &path, TraceFormat::Jsonl).unwrap();
    let back = load_trace(&path, TraceFormat::Jsonl).unwrap();
    assert_eq!(back.records(), t.records());
    assert_eq!(back.schema(), t.schema());
    for rel in [Relation::Equality, Relation::Applicability] {
        assert_eq!(estimate_global(&back, rel).unwrap(), estimate_global(&t, rel).unwrap());
    }
}

#[test]
fn surrogate_of_a_tree_model_is_fully_consistent() {
    // fitting the model's own predictions recovers a partition no coarser
    // than the model's, so every leaf is pure
    let world = generate_world(WorldSpec::tree(8, 0.0), 5).unwrap();
    let t = world.sample(1500, &mut stream_rng(5, 0)).unwrap().remove(0);
    let data: Vec<_> = t.records().iter().map(|r| (r.instance.clone(), r.prediction.clone())).collect();
    let fitted = fit_surrogate_tree(t.schema().to_vec(), &data, 64).unwrap();
    let records = t
        .records()
        .iter()
        .map(|r| TraceRecord::new(r.instance.clone(), r.prediction.clone(), explain_with_tree(&fitted, &r.instance).unwrap()))
        .collect();
    let explained = Trace::new(t.schema().to_vec(), records).unwrap();
    let con = estimate_global(&explained, Relation::Equality).unwrap();
    let suf = estimate_global(&explained, Relation::Applicability).unwrap();
    assert!(con.estimate > 0.95, "{}", con.estimate);
    assert_eq!(con.estimate, suf.estimate);
}

#[test]
fn local_sufficiency_of_an_anchor_is_its_precision() {
    // with the search sample equal to the trace, the anchor's empirical
    // precision counts the same records as local sufficiency plus the query
    let world = generate_world(WorldSpec::tree(16, 0.2), 3).unwrap();
    let t = world.sample(600, &mut stream_rng(3, 0)).unwrap().remove(0);
    for r in t.records().iter().take(25) {
        let a = find_anchor(&r.instance, &r.prediction, &t, 0.8).unwrap();
        let q = TraceRecord::new(
            r.instance.clone(),
            r.prediction.clone(),
            r.explanation.clone().with_rule(a.rule.clone()),
        );
        let local = estimate_local(&t, &q).unwrap();
        let counts = local.sufficiency_counts.unwrap();
        assert_eq!(counts.total + 1, a.coverage);
        let with_self = (counts.matches + 1) as f64 / a.coverage as f64;
        assert!((with_self - a.precision).abs() < 1e-12);
    }
}

#[test]
fn noisy_tree_world_converges_to_its_truth() {
    let world = generate_world(WorldSpec::tree(16, 0.1), 8).unwrap();
    let truth = world.ground_truth()[0].m_c;
    let res = sweep_samples(&world, 0, &[100, 4000], 6, 8).unwrap();
    let last = res[0].rows[1];
    assert!((last.mean - truth).abs() < 0.02, "{} vs {truth}", last.mean);
    assert!(res[0].rows[0].mean <= last.mean + 0.05);
}

#[test]
fn plug_in_bounds_are_labelled() {
    let world = generate_world(WorldSpec::tree(4, 0.0), 1).unwrap();
    let t = world.sample(400, &mut stream_rng(1, 0)).unwrap().remove(0);
    let b = plug_in_bounds(&t, Relation::Equality).unwrap();
    assert_eq!(b.source, BoundSource::PlugIn);
    assert!((b.variance_bound - 0.01).abs() < 1e-15);
    assert!(b.bias_bound < 1e-10);
}
