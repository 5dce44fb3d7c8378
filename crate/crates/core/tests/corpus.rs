use std::collections::{HashMap, HashSet};

use attrec::corpus::*;
use proptest::prelude::*;

fn catalog(n: usize) -> Catalog {
    Catalog::new(
        (0..n)
            .map(|i| ItemRecord {
                item_id: format!("i{i:03}"),
                attributes: vec![AttributePair::new("Title", format!("item {i}"))],
            })
            .collect(),
    )
    .unwrap()
}

fn sequences(raw: &[Vec<usize>]) -> Vec<InteractionSequence> {
    raw.iter()
        .enumerate()
        .map(|(u, s)| InteractionSequence {
            user_id: format!("u{u}"),
            item_ids: s.iter().map(|i| format!("i{i:03}")).collect(),
        })
        .collect()
}

fn preferred_share(data: &SyntheticData, include_final: bool) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (seq, pref) in data.sequences.iter().zip(&data.preferences) {
        let pref = pref.expect("planted users have a preference");
        let slot = match pref.key {
            PreferredKey::Brand => SYNTH_BRAND,
            PreferredKey::Category => SYNTH_CATEGORY,
        };
        let want = match pref.key {
            PreferredKey::Brand => brand_name(pref.value),
            PreferredKey::Category => category_name(pref.value),
        };
        let end = if include_final { seq.item_ids.len() } else { seq.item_ids.len() - 1 };
        for id in &seq.item_ids[..end] {
            total += 1;
            hit += (data.catalog.get(id).unwrap().attributes[slot].value == want) as usize;
        }
    }
    hit as f64 / total as f64
}

#[test]
fn sharpness_one_keeps_every_item_on_preference() {
    let data = generate_synthetic(&SynthConfig { sharpness: 1.0, users: 200, ..SynthConfig::default() }).unwrap();
    assert_eq!(preferred_share(&data, true), 1.0);
}

#[test]
fn empirical_preference_share_tracks_sharpness() {
    let data = generate_synthetic(&SynthConfig { sharpness: 0.8, users: 1000, seed: 11, ..SynthConfig::default() }).unwrap();
    let share = preferred_share(&data, false);
    assert!((share - 0.8).abs() <= 0.03, "share {share}");
}

#[test]
fn final_item_always_carries_the_preference() {
    for echo in [0.0, 0.9] {
        let data = generate_synthetic(&SynthConfig { sharpness: 0.5, echo, users: 300, ..SynthConfig::default() }).unwrap();
        for (seq, pref) in data.sequences.iter().zip(&data.preferences) {
            let pref = pref.unwrap();
            let last = data.catalog.get(seq.item_ids.last().unwrap()).unwrap();
            let (slot, want) = match pref.key {
                PreferredKey::Brand => (SYNTH_BRAND, brand_name(pref.value)),
                PreferredKey::Category => (SYNTH_CATEGORY, category_name(pref.value)),
            };
            assert_eq!(last.attributes[slot].value, want);
        }
    }
}

#[test]
fn echo_reuses_values_from_earlier_items() {
    let reuse = |echo: f64| {
        let data = generate_synthetic(&SynthConfig { echo, users: 400, seed: 5, ..SynthConfig::default() }).unwrap();
        let (mut hit, mut total) = (0usize, 0usize);
        for (seq, pref) in data.sequences.iter().zip(&data.preferences) {
            let other = match pref.unwrap().key {
                PreferredKey::Brand => SYNTH_CATEGORY,
                PreferredKey::Category => SYNTH_BRAND,
            };
            let vals: Vec<&str> =
                seq.item_ids.iter().map(|id| data.catalog.get(id).unwrap().attributes[other].value.as_str()).collect();
            for t in 1..vals.len() {
                total += 1;
                hit += vals[..t].contains(&vals[t]) as usize;
            }
        }
        hit as f64 / total as f64
    };
    let (off, on) = (reuse(0.0), reuse(0.9));
    assert!(on > off + 0.2, "reuse rate {off} without echo, {on} with");
}

#[test]
fn uniform_mode_has_no_preferences_and_valid_ids() {
    let data = generate_synthetic(&SynthConfig { uniform: true, users: 50, ..SynthConfig::default() }).unwrap();
    assert!(data.preferences.iter().all(Option::is_none));
    for s in &data.sequences {
        assert!(s.item_ids.iter().all(|id| data.catalog.contains(id)));
        let distinct: HashSet<&String> = s.item_ids.iter().collect();
        assert_eq!(distinct.len(), s.item_ids.len());
    }
}

#[test]
fn synthetic_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&SynthConfig { users: 30, ..SynthConfig::default() }).unwrap();
    write_items(dir.path().join("items.jsonl"), &data.catalog).unwrap();
    write_interactions(dir.path().join("interactions.jsonl"), &data.sequences).unwrap();
    let items = load_items(dir.path().join("items.jsonl")).unwrap();
    assert_eq!(items.catalog, data.catalog);
    assert_eq!(items.dropped_untitled, 0);
    assert_eq!(load_interactions(dir.path().join("interactions.jsonl")).unwrap(), data.sequences);
    let a = std::fs::read(dir.path().join("items.jsonl")).unwrap();
    write_items(dir.path().join("again.jsonl"), &generate_synthetic(&SynthConfig { users: 30, ..SynthConfig::default() }).unwrap().catalog).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("again.jsonl")).unwrap());
}

#[test]
fn missing_metadata_is_kept_as_empty_values() {
    let text = concat!(
        r#"{"item_id":"A","attributes":[["Title","Magic Mouse"],["Brand",""]]}"#,
        "\n",
        r#"{"item_id":"B","attributes":[["Title",""],["Brand","Apple"]]}"#,
        "\n",
        r#"{"item_id":"C","attributes":[["Title","G913"],["Brand","Logitech"]]}"#,
        "\n",
        r#"{"item_id":"D","attributes":[["Title","  "],["Brand","Apple"]]}"#,
        "\n",
        r#"{"item_id":"E","attributes":[["Title","Gaming Headset"],["Brand","Logitech"]]}"#,
    );
    let loaded = parse_items(text.as_bytes()).unwrap();
    assert_eq!(loaded.dropped_untitled, 2);
    assert_eq!(loaded.catalog.len(), 3);
    assert_eq!(loaded.catalog.get("A").unwrap().attributes[1].value, "");
}

#[test]
fn target_uniqueness_over_random_sequences() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let raw: Vec<Vec<usize>> = (0..100).map(|_| (0..rng.gen_range(1..12)).map(|_| rng.gen_range(0..30)).collect()).collect();
    let seqs = sequences(&raw);
    let split = split_leave_one_out(&seqs);
    let mut seen: HashMap<(String, usize), usize> = HashMap::new();
    for ex in split.train.iter().chain(&split.valid).chain(&split.test) {
        *seen.entry((ex.user_id.clone(), ex.prefix.len())).or_default() += 1;
    }
    assert!(seen.values().all(|&c| c == 1));
    let eligible = raw.iter().filter(|s| s.len() >= 3).count();
    assert_eq!(split.test.len(), eligible);
    assert_eq!(split.excluded, 100 - eligible);
    for (ex, s) in split.test.iter().zip(raw.iter().filter(|s| s.len() >= 3)) {
        assert_eq!(ex.prefix.len(), s.len() - 1);
    }
}

proptest! {
    #[test]
    fn core_filter_is_a_fixpoint(raw in prop::collection::vec(prop::collection::vec(0usize..15, 0..12), 0..25), k in 1usize..6) {
        let cat = catalog(15);
        let (seqs, filtered) = apply_core_filter(&sequences(&raw), &cat, k);
        let (again, again_cat) = apply_core_filter(&seqs, &filtered, k);
        prop_assert_eq!(&again, &seqs);
        prop_assert_eq!(again_cat, filtered.clone());
        for s in &seqs {
            prop_assert!(s.item_ids.len() >= k);
            prop_assert!(s.item_ids.iter().all(|id| filtered.contains(id)));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &seqs {
            for id in &s.item_ids {
                *counts.entry(id).or_default() += 1;
            }
        }
        prop_assert!(filtered.items().iter().all(|i| counts.get(i.item_id.as_str()).copied().unwrap_or(0) >= k));
    }

    #[test]
    fn split_never_leaks_targets(raw in prop::collection::vec(prop::collection::vec(0usize..20, 0..10), 0..20)) {
        let seqs = sequences(&raw);
        let split = split_leave_one_out(&seqs);
        let by_user: HashMap<&str, &InteractionSequence> = seqs.iter().map(|s| (s.user_id.as_str(), s)).collect();
        for ex in split.train.iter().chain(&split.valid).chain(&split.test) {
            let s = by_user[ex.user_id.as_str()];
            let n = ex.prefix.len();
            prop_assert_eq!(&s.item_ids[..n], &ex.prefix[..]);
            prop_assert_eq!(&s.item_ids[n], &ex.target);
        }
        for (v, t) in split.valid.iter().zip(&split.test) {
            prop_assert_eq!(v.prefix.len() + 1, t.prefix.len());
            prop_assert!(split.train.iter().filter(|e| e.user_id == t.user_id).all(|e| e.prefix.len() < v.prefix.len()));
        }
    }
}
