//! Exact retrieval against a brute-force oracle, and persistence round trips.

use leap_core::backend::Embedding;
use leap_core::memory::{Memories, MemoryError, PrecedentRecord, Store, ValueSample};
use leap_core::VerificationStrategy;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(id: String, v: Vec<f64>) -> ValueSample {
    ValueSample {
        state_summary: format!("state {id}"),
        id,
        value: 0.25,
        embedding: Embedding::new(v).unwrap(),
    }
}

/// Squared distances over small integers are exact, so ties are real and
/// the oracle can order them by insertion index without rounding doubt.
fn oracle(store: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<(i64, usize)> = store
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d: i64 = v.iter().zip(q).map(|(a, b)| ((a - b) as i64).pow(2)).sum();
            (d, i)
        })
        .collect();
    idx.sort();
    idx.into_iter().take(k).map(|(_, i)| i).collect()
}

fn grid_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-3i32..=3) as f64).collect()
}

#[test]
fn top_k_matches_exhaustive_sort_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 4;
    for &size in &[1usize, 10, 200, 1000] {
        let vecs: Vec<Vec<f64>> = (0..size).map(|_| grid_vec(&mut rng, dim)).collect();
        let mut store = Store::new(dim, None);
        for (i, v) in vecs.iter().enumerate() {
            store.insert(sample(i.to_string(), v.clone())).unwrap();
        }
        for _ in 0..50 {
            let q = grid_vec(&mut rng, dim);
            let k = rng.random_range(1..=size.min(12));
            let got: Vec<String> = store
                .retrieve_top_k(&Embedding::new(q.clone()).unwrap(), k, None)
                .unwrap()
                .into_iter()
                .map(|r| r.id)
                .collect();
            let want: Vec<String> = oracle(&vecs, &q, k).into_iter().map(|i| i.to_string()).collect();
            assert_eq!(got, want, "size {size}");
        }
    }
}

#[test]
fn k_larger_than_store_returns_everything() {
    let mut store = Store::new(2, None);
    store.insert(sample("a".into(), vec![0.0, 0.0])).unwrap();
    store.insert(sample("b".into(), vec![1.0, 0.0])).unwrap();
    let got = store.retrieve_top_k(&Embedding::new(vec![1.0, 0.0]).unwrap(), 10, None).unwrap();
    assert_eq!(got.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["b", "a"]);
}

#[test]
fn zero_k_and_dimension_mismatch_are_errors() {
    let mut store = Store::new(2, None);
    store.insert(sample("a".into(), vec![0.0, 0.0])).unwrap();
    let q = Embedding::new(vec![0.0, 0.0]).unwrap();
    assert!(matches!(store.retrieve_top_k(&q, 0, None), Err(MemoryError::ZeroK)));
    let bad = Embedding::new(vec![0.0; 3]).unwrap();
    assert!(matches!(
        store.retrieve_top_k(&bad, 1, None),
        Err(MemoryError::Dimension { expected: 2, got: 3 })
    ));
    assert!(store.insert(sample("b".into(), vec![0.0; 3])).is_err());
}

#[test]
fn fifo_cap_evicts_oldest() {
    let mut store = Store::new(1, Some(3));
    for i in 0..5 {
        store.insert(sample(format!("r{i}"), vec![i as f64])).unwrap();
    }
    let ids: Vec<&str> = store.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["r2", "r3", "r4"]);
}

#[test]
fn predicate_filters_before_ranking() {
    let mut store = Store::new(1, None);
    for (i, a) in [0.5, -0.2, 0.0, 0.9, -1.0].into_iter().enumerate() {
        store
            .insert(PrecedentRecord {
                id: format!("p{i}"),
                claim_text: "c".into(),
                strategy: VerificationStrategy::new("t", "s", vec!["x".into()], None).unwrap(),
                advantage: a,
                embedding: Embedding::new(vec![i as f64]).unwrap(),
            })
            .unwrap();
    }
    let q = Embedding::new(vec![0.0]).unwrap();
    let pos = store.retrieve_top_k(&q, 5, Some(&|r: &PrecedentRecord| r.advantage > 0.0)).unwrap();
    let neg = store.retrieve_top_k(&q, 5, Some(&|r: &PrecedentRecord| r.advantage <= 0.0)).unwrap();
    assert_eq!(pos.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["p0", "p3"]);
    assert_eq!(neg.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["p1", "p2", "p4"]);
}

#[test]
fn persistence_round_trip_preserves_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 8;
    let mems = Memories::new(dim, Some(100));
    for i in 0..50 {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        mems.values.write().unwrap().insert(sample(format!("v{i}"), v)).unwrap();
    }
    mems.persist(dir.path()).unwrap();
    let back = Memories::open(dir.path(), dim, Some(100)).unwrap();
    assert_eq!(back.sizes(), mems.sizes());
    for _ in 0..10 {
        let q = Embedding::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = mems.values.read().unwrap().retrieve_top_k(&q, 5, None).unwrap();
        let b = back.values.read().unwrap().retrieve_top_k(&q, 5, None).unwrap();
        assert_eq!(a, b);
    }
    assert!(matches!(
        Memories::open(dir.path(), dim + 1, None),
        Err(MemoryError::Dimension { .. })
    ));
}

#[test]
fn truncated_store_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = Store::new(1, None);
    store.insert(sample("a".into(), vec![1.0])).unwrap();
    store.insert(sample("b".into(), vec![2.0])).unwrap();
    let path = dir.path().join("values.jsonl");
    store.persist(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let cut: Vec<&str> = text.lines().take(2).collect();
    std::fs::write(&path, cut.join("\n") + "\n").unwrap();
    assert!(Store::<ValueSample>::load(&path).is_err());
}

proptest! {
    #[test]
    fn retrieval_is_a_sorted_prefix(
        points in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..40),
        q in prop::collection::vec(-100.0f64..100.0, 3),
        k in 1usize..50,
    ) {
        let mut store = Store::new(3, None);
        for (i, p) in points.iter().enumerate() {
            store.insert(sample(i.to_string(), p.clone())).unwrap();
        }
        let got = store.retrieve_top_k(&Embedding::new(q.clone()).unwrap(), k, None).unwrap();
        prop_assert_eq!(got.len(), k.min(points.len()));
        let dist = |v: &[f64]| v.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        for w in got.windows(2) {
            prop_assert!(dist(w[0].embedding.as_slice()) <= dist(w[1].embedding.as_slice()));
        }
        let worst = got.last().map(|r| dist(r.embedding.as_slice())).unwrap();
        let chosen: std::collections::HashSet<&str> = got.iter().map(|r| r.id.as_str()).collect();
        for (i, p) in points.iter().enumerate() {
            if !chosen.contains(i.to_string().as_str()) {
                prop_assert!(dist(p) >= worst);
            }
        }
    }

    #[test]
    fn store_never_exceeds_cap(cap in 1usize..20, n in 0usize..60) {
        let mut store = Store::new(1, Some(cap));
        for i in 0..n {
            store.insert(sample(i.to_string(), vec![i as f64])).unwrap();
        }
        prop_assert_eq!(store.len(), n.min(cap));
        if n > 0 {
            prop_assert_eq!(store.iter().last().unwrap().id.clone(), (n - 1).to_string());
        }
    }
}
