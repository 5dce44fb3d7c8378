use attrec::encoder::{MultiVectorRepr, PoolingKind, ReprEntry};
use attrec::index::ItemIndex;
use attrec::matching::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec_of(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_user(rng: &mut impl Rng, dim: usize, slots: usize, items: usize, drop: f64) -> MultiVectorRepr {
    let mut entries = Vec::new();
    for pos in 1..=items {
        for slot in 0..slots {
            if !rng.gen_bool(drop) {
                entries.push(ReprEntry { pos, slot, vector: vec_of(rng, dim) });
            }
        }
    }
    MultiVectorRepr { dim, slots, entries, bos: None }
}

fn random_item(rng: &mut impl Rng, dim: usize, slots: usize) -> MultiVectorRepr {
    let entries = (0..slots).map(|slot| ReprEntry { pos: 0, slot, vector: vec_of(rng, dim) }).collect();
    MultiVectorRepr { dim, slots, entries, bos: None }
}

fn index_of(items: &[MultiVectorRepr]) -> ItemIndex {
    let ids = (0..items.len()).map(|i| format!("i{i:04}")).collect();
    ItemIndex::from_reprs(ids, items, PoolingKind::Attribute, "e".into(), "v".into()).unwrap()
}

fn oracle_cos(u: &[f64], v: &[f64]) -> f64 {
    let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
    (d / (nu * nv)).clamp(-1.0, 1.0)
}

fn oracle(user: &MultiVectorRepr, item: &MultiVectorRepr, agg: Aggregation) -> f64 {
    let mut total = 0.0;
    for slot in 0..item.slots {
        let target = &item.entries.iter().find(|e| e.slot == slot).unwrap().vector;
        let cs: Vec<f64> = user.entries.iter().filter(|e| e.slot == slot).map(|e| oracle_cos(&e.vector, target)).collect();
        total += if cs.is_empty() {
            -1.0
        } else {
            match agg {
                Aggregation::Max => cs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Mean => cs.iter().sum::<f64>() / cs.len() as f64,
            }
        };
    }
    total
}

fn cfg(aggregation: Aggregation) -> MatchConfig {
    MatchConfig { aggregation, ..MatchConfig::default() }
}

#[test]
fn brute_force_oracle_agrees_exactly_on_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let n = rng.gen_range(1..7);
        let user = random_user(&mut rng, 8, 3, n, 0.2);
        let item = random_item(&mut rng, 8, 3);
        let got = match_score(&user, &item, &cfg(Aggregation::Max)).unwrap().total;
        assert_eq!(got, oracle(&user, &item, Aggregation::Max));
        let got = match_score(&user, &item, &cfg(Aggregation::Mean)).unwrap().total;
        assert!((got - oracle(&user, &item, Aggregation::Mean)).abs() < 1e-12);
    }
}

#[test]
fn batch_scores_match_the_per_item_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let items: Vec<MultiVectorRepr> = (0..200).map(|_| random_item(&mut rng, 16, 3)).collect();
    let index = index_of(&items);
    for agg in [Aggregation::Max, Aggregation::Mean] {
        for _ in 0..10 {
            let user = random_user(&mut rng, 16, 3, 5, 0.1);
            let batch = batch_score(&user, &index, &cfg(agg)).unwrap();
            for (i, item) in items.iter().enumerate() {
                assert!((batch[i] - match_score(&user, item, &cfg(agg)).unwrap().total).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn missing_slot_contributes_minus_one() {
    let user = MultiVectorRepr {
        dim: 2,
        slots: 2,
        entries: vec![ReprEntry { pos: 1, slot: 0, vector: vec![1.0, 0.0] }],
        bos: None,
    };
    let item = MultiVectorRepr {
        dim: 2,
        slots: 2,
        entries: vec![ReprEntry { pos: 0, slot: 0, vector: vec![2.0, 0.0] }, ReprEntry { pos: 0, slot: 1, vector: vec![0.0, 1.0] }],
        bos: None,
    };
    let b = match_score(&user, &item, &cfg(Aggregation::Max)).unwrap();
    assert_eq!(b.per_attribute, vec![1.0, MISSING_SLOT_SCORE]);
    assert_eq!(b.missing, vec![false, true]);
    assert_eq!(b.total, 0.0);
}

#[test]
fn max_ties_go_to_the_most_recent_item() {
    let e = |pos| ReprEntry { pos, slot: 0, vector: vec![1.0, 1.0] };
    let user = MultiVectorRepr { dim: 2, slots: 1, entries: vec![e(1), e(3), e(2)], bos: None };
    let item = MultiVectorRepr { dim: 2, slots: 1, entries: vec![ReprEntry { pos: 0, slot: 0, vector: vec![3.0, 3.0] }], bos: None };
    assert_eq!(match_score(&user, &item, &cfg(Aggregation::Max)).unwrap().best_positions, vec![Some(3)]);
}

#[test]
fn reordering_user_vectors_keeps_the_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let user = random_user(&mut rng, 6, 3, 6, 0.0);
        let item = random_item(&mut rng, 6, 3);
        let mut shuffled = user.clone();
        for i in (1..shuffled.entries.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.entries.swap(i, j);
        }
        for agg in [Aggregation::Max, Aggregation::Mean] {
            let a = match_score(&user, &item, &cfg(agg)).unwrap().total;
            let b = match_score(&shuffled, &item, &cfg(agg)).unwrap().total;
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn single_item_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let item = random_item(&mut rng, 4, 2);
    let index = index_of(std::slice::from_ref(&item));
    let user = random_user(&mut rng, 4, 2, 3, 0.0);
    let s = batch_score(&user, &index, &cfg(Aggregation::Max)).unwrap();
    assert_eq!(s.len(), 1);
    assert!((s[0] - oracle(&user, &item, Aggregation::Max)).abs() < 1e-12);
}

#[test]
fn zero_vectors_and_shape_errors() {
    assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0], 1e-8).unwrap(), 0.0);
    assert!(cosine(&[1.0], &[1.0, 0.0], 1e-8).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let index = index_of(&[random_item(&mut rng, 4, 2)]);
    assert!(batch_score(&random_user(&mut rng, 3, 2, 2, 0.0), &index, &cfg(Aggregation::Max)).is_err());
    assert!(batch_score(&random_user(&mut rng, 4, 3, 2, 0.0), &index, &cfg(Aggregation::Max)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scores_ignore_vector_scale(seed in 0u64..100_000, a in 0.01f64..100.0, b in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user = random_user(&mut rng, 5, 3, 4, 0.2);
        let item = random_item(&mut rng, 5, 3);
        let scale = |r: &MultiVectorRepr, s: f64| {
            let mut r = r.clone();
            r.entries.iter_mut().for_each(|e| e.vector.iter_mut().for_each(|v| *v *= s));
            r
        };
        for agg in [Aggregation::Max, Aggregation::Mean] {
            let x = match_score(&user, &item, &cfg(agg)).unwrap().total;
            let y = match_score(&scale(&user, a), &scale(&item, b), &cfg(agg)).unwrap().total;
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn max_dominates_each_vector_and_the_mean(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..6);
        let user = random_user(&mut rng, 5, 3, n, 0.3);
        let item = random_item(&mut rng, 5, 3);
        let max = match_score(&user, &item, &cfg(Aggregation::Max)).unwrap();
        let mean = match_score(&user, &item, &cfg(Aggregation::Mean)).unwrap();
        for slot in 0..3 {
            prop_assert!(mean.per_attribute[slot] <= max.per_attribute[slot] + 1e-12);
            for e in user.entries.iter().filter(|e| e.slot == slot) {
                prop_assert!(oracle_cos(&e.vector, &item.entries[slot].vector) <= max.per_attribute[slot] + 1e-12);
            }
        }
        prop_assert!(max.total >= -3.0 && max.total <= 3.0);
        prop_assert!(mean.total >= -3.0 && mean.total <= 3.0);
    }

    #[test]
    fn batch_equals_brute_force(seed in 0u64..100_000, n in 1usize..30, mean in any::<bool>()) {
        let agg = if mean { Aggregation::Mean } else { Aggregation::Max };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<MultiVectorRepr> = (0..n).map(|_| random_item(&mut rng, 4, 2)).collect();
        let user = random_user(&mut rng, 4, 2, 3, 0.3);
        let batch = batch_score(&user, &index_of(&items), &cfg(agg)).unwrap();
        for (s, item) in batch.iter().zip(&items) {
            prop_assert!((s - oracle(&user, item, agg)).abs() < 1e-9);
        }
    }
}
