//! Batch construction versus streaming append, and snapshot round trips.

use hsgm::persist::{decode_snapshot, encode_snapshot};
use hsgm::{synthetic, Engine, EngineConfig, Error, Segment, ThresholdPolicy};
use proptest::prelude::*;

fn engine(k: usize, pinned: f64, fixed: Option<f64>, seed: u64) -> Engine {
    let mut config = EngineConfig::default();
    config.k = k;
    config.seed = seed;
    config.global.pinned = Some(pinned);
    if let Some(delta) = fixed {
        config.threshold_policy = ThresholdPolicy::Fixed { delta };
    }
    Engine::new(config).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn append_matches_batch(
        m in 1usize..=32,
        k in 1usize..=24,
        pinned in -1.0f64..1.0,
        fixed in proptest::option::of(-0.5f64..0.9),
        seed in any::<u64>(),
    ) {
        let doc = synthetic::document(m * k, seed);
        let e = engine(k, pinned, fixed, seed);
        let batch = e.build(&doc).unwrap();
        let mut inc = e.empty();
        for s in e.segment(&doc).unwrap() {
            let edges_before = inc.memory.global_edges.len() as u64;
            let d = e.append(&mut inc, &s).unwrap();
            prop_assert_eq!(d.edges_reused, edges_before);
        }
        prop_assert!(batch.same_structure(&inc));
        prop_assert_eq!(inc.memory.metrics.appends, m as u64);
        prop_assert_eq!(inc.memory.metrics.similarity_evals, batch.memory.metrics.similarity_evals);
    }

    #[test]
    fn snapshot_round_trip(
        n in 1usize..600,
        k in 1usize..80,
        seed in any::<u64>(),
        appends in 0usize..4,
    ) {
        let mut config = EngineConfig::default();
        config.k = k;
        config.seed = seed;
        let e = Engine::new(config).unwrap();
        let doc = synthetic::document(n + appends * k, seed);
        let mut h = e.build(&doc[..n]).unwrap();
        for (i, chunk) in doc[n..].chunks(k).enumerate() {
            let s = Segment { index: h.memory.summaries.len(), span: n + i * k..n + (i + 1) * k, tokens: chunk.to_vec() };
            e.append(&mut h, &s).unwrap();
        }
        let bytes = encode_snapshot(&h);
        let back = decode_snapshot(&bytes).unwrap();
        prop_assert_eq!(&back, &h);
        prop_assert_eq!(encode_snapshot(&back), bytes);
    }
}

#[test]
fn appended_snapshot_queries_like_batch() {
    let doc = synthetic::document(900, 4);
    let e = engine(64, 0.5, None, 4);
    let batch = e.build(&doc).unwrap();
    let mut inc = e.empty();
    for s in e.segment(&doc).unwrap() {
        e.append(&mut inc, &s).unwrap();
        inc = decode_snapshot(&encode_snapshot(&inc)).unwrap();
    }
    let q = ["w1", "w7", "w30"];
    let a = e.query(&batch, &q, 5, &mut Default::default()).unwrap();
    let b = e.query(&inc, &q, 5, &mut Default::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn out_of_order_append_rejected() {
    let e = engine(4, 0.1, None, 0);
    let mut h = e.build(&synthetic::document(8, 0)).unwrap();
    let s = Segment { index: 5, span: 0..2, tokens: vec!["a".into(), "b".into()] };
    assert!(matches!(e.append(&mut h, &s), Err(Error::Sequencing { expected: 2, found: 5 })));
    assert_eq!(h.memory.summaries.len(), 2);
}

#[test]
fn append_with_other_config_rejected() {
    let h = engine(4, 0.1, None, 0).build(&synthetic::document(8, 0)).unwrap();
    let mut h2 = h.clone();
    let s = Segment { index: 2, span: 8..10, tokens: vec!["a".into(), "b".into()] };
    assert!(matches!(engine(4, 0.2, None, 0).append(&mut h2, &s), Err(Error::InvalidConfig(_))));
    assert_eq!(h, h2);
}

#[test]
fn recompute_on_append_rebuilds_threshold() {
    let mut config = EngineConfig::default();
    config.k = 16;
    config.global.recompute_on_append = true;
    let e = Engine::new(config).unwrap();
    let doc = synthetic::document(16 * 8, 3);
    let batch = e.build(&doc).unwrap();
    let mut inc = e.build(&doc[..16 * 4]).unwrap();
    for s in e.segment(&doc).unwrap().into_iter().skip(4) {
        e.append(&mut inc, &s).unwrap();
    }
    assert_eq!(inc.memory.delta_g.to_bits(), batch.memory.delta_g.to_bits());
    assert!(batch.same_structure(&inc));
}
