use attrec::corpus::{AttributePair, Catalog, ItemRecord};
use attrec::encoder::*;
use attrec::tensor::Matrix;
use attrec::tokenizer::{build_item_input, build_vocab, Span, TokenizerConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn catalog() -> Catalog {
    let item = |id: &str, t: &str, b: &str, c: &str| ItemRecord {
        item_id: id.into(),
        attributes: vec![AttributePair::new("Title", t), AttributePair::new("Brand", b), AttributePair::new("Category", c)],
    };
    Catalog::new(vec![
        item("A", "Magic Mouse", "Apple", "Mouse"),
        item("B", "G913 Keyboard", "Logitech", "Keyboard"),
        item("C", "Gaming Headset", "Logitech", "Headset"),
        item("D", "Magic Keyboard", "Apple", "Keyboard"),
        item("E", "Gaming Mouse", "Logitech", "Mouse"),
    ])
    .unwrap()
}

fn model(seed: u64, pooling: PoolingKind) -> Model {
    let cat = catalog();
    let vocab = build_vocab(&cat, 1).unwrap();
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        hidden: 16,
        proj_dim: 8,
        layers: 2,
        heads: 2,
        ff_dim: 32,
        max_positions: 128,
        ..EncoderConfig::default()
    };
    Model::new(EncoderParams::init(&cfg, seed).unwrap(), vocab, TokenizerConfig { attr_cap: 8, max_items: 8, max_tokens: 128 }, pooling)
        .unwrap()
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn projection_matches_a_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = model(1, PoolingKind::Attribute);
    let names = m.params.names();
    let w_at = names.iter().position(|n| n == "proj.weight").unwrap();
    let b_at = names.iter().position(|n| n == "proj.bias").unwrap();
    m.params.tensors_mut()[w_at] = random_matrix(&mut rng, 16, 8);
    m.params.tensors_mut()[b_at] = random_matrix(&mut rng, 1, 8);
    let hidden = random_matrix(&mut rng, 11, 16);
    let out = project(&hidden, &m.params).unwrap();
    let (w, b) = (m.params.projection_weight(), m.params.projection_bias());
    for t in 0..11 {
        for k in 0..8 {
            let mut acc = b.get(0, k);
            for i in 0..16 {
                acc += w.get(i, k) * hidden.get(t, i);
            }
            assert!((out.get(t, k) - acc).abs() < 1e-6);
        }
    }
}

#[test]
fn attribute_pooling_matches_span_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = model(1, PoolingKind::Attribute);
    let cat = catalog();
    let items: Vec<&ItemRecord> = cat.items().iter().collect();
    let input = m.history_input(&items);
    let projected = random_matrix(&mut rng, input.len(), 8);
    let repr = pool_attributes(&projected, &input.spans, 3);
    assert_eq!(repr.entries.len(), input.spans.len());
    for span in &input.spans {
        let e = repr.entries.iter().find(|e| e.pos == span.item_pos && e.slot == span.attr).unwrap();
        for k in 0..8 {
            let mean = (span.start..span.end).map(|t| projected.get(t, k)).sum::<f64>() / span.len() as f64;
            assert!((e.vector[k] - mean).abs() < 1e-7);
        }
    }
}

#[test]
fn item_pooling_equals_attribute_mean_only_for_equal_spans() {
    let projected = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![5.0], vec![7.0], vec![9.0], vec![11.0]]);
    let span = |attr, start, end| Span { item_pos: 1, attr, start, end };
    let mean_of_attrs = |spans: &[Span]| {
        let a = pool_attributes(&projected, spans, 2);
        a.entries.iter().map(|e| e.vector[0]).sum::<f64>() / a.entries.len() as f64
    };
    let equal = [span(0, 1, 3), span(1, 3, 5)];
    let item = pool_variant(&projected, &equal, 2, PoolingKind::Item);
    assert_eq!(item.entries.len(), 1);
    assert!((item.entries[0].vector[0] - mean_of_attrs(&equal)).abs() < 1e-12);
    let unequal = [span(0, 1, 2), span(1, 2, 7)];
    let item = pool_variant(&projected, &unequal, 2, PoolingKind::Item);
    assert!((item.entries[0].vector[0] - 36.0 / 6.0).abs() < 1e-12);
    assert!((item.entries[0].vector[0] - mean_of_attrs(&unequal)).abs() > 0.5);
}

#[test]
fn four_item_history_has_twelve_attribute_vectors() {
    let m = model(2, PoolingKind::Attribute);
    let cat = catalog();
    let items: Vec<&ItemRecord> = cat.items()[..4].iter().collect();
    let repr = m.encode_sequence(&items).unwrap();
    assert_eq!(repr.entries.len(), 12);
    for pos in 1..=4 {
        assert_eq!(repr.entries.iter().filter(|e| e.pos == pos).count(), 3);
    }
    assert_eq!(m.encode_item(&cat.items()[0]).unwrap().entries.len(), 3);
}

#[test]
fn single_item_history_encodes_like_the_item() {
    let m = model(3, PoolingKind::Attribute);
    let cat = catalog();
    for item in cat.items() {
        let a = m.encode_item(item).unwrap();
        let b = m.encode_sequence(&[item]).unwrap();
        assert_eq!(a.entries.len(), b.entries.len());
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.slot, y.slot);
            assert_eq!(x.vector, y.vector);
        }
    }
}

#[test]
fn bos_pooling_yields_one_vector() {
    let m = model(4, PoolingKind::Bos);
    let cat = catalog();
    let items: Vec<&ItemRecord> = cat.items().iter().collect();
    let repr = m.encode_sequence(&items).unwrap();
    assert_eq!(repr.entries.len(), 1);
    assert_eq!(Some(&repr.entries[0].vector), repr.bos.as_ref());
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(5, PoolingKind::Item);
    let path = dir.path().join("m.ckpt.json");
    m.to_checkpoint().save(&path).unwrap();
    let back = Model::from_checkpoint(&Checkpoint::load(&path).unwrap(), m.vocab.clone()).unwrap();
    assert_eq!(back, m);
    let other_vocab = build_vocab(&Catalog::new(vec![catalog().items()[0].clone()]).unwrap(), 1).unwrap();
    assert!(Model::from_checkpoint(&m.to_checkpoint(), other_vocab).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pooling_commutes_with_linear_maps(seed in 0u64..10_000, kind in 0usize..3) {
        let kind = [PoolingKind::Attribute, PoolingKind::Item, PoolingKind::Bos][kind];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cat = catalog();
        let vocab = build_vocab(&cat, 1).unwrap();
        let input = build_item_input(&cat.items()[rng.gen_range(0..5)], &vocab, 8);
        let o = random_matrix(&mut rng, input.len(), 6);
        let a = random_matrix(&mut rng, 6, 4);
        let lhs = pool_variant(&o.matmul(&a), &input.spans, 3, kind);
        let rhs = pool_variant(&o, &input.spans, 3, kind);
        prop_assert_eq!(lhs.entries.len(), rhs.entries.len());
        for (l, r) in lhs.entries.iter().zip(&rhs.entries) {
            let mapped = Matrix::row_vector(r.vector.clone()).matmul(&a);
            for (x, y) in l.vector.iter().zip(mapped.data()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eval_forward_is_bit_reproducible(seed in 0u64..1000, n in 1usize..5) {
        let m = model(seed, PoolingKind::Attribute);
        let cat = catalog();
        let items: Vec<&ItemRecord> = cat.items()[..n].iter().collect();
        let input = m.history_input(&items);
        let a = forward(&input, &m.params, Mode::Eval).unwrap();
        let b = forward(&input, &m.params, Mode::Eval).unwrap();
        prop_assert_eq!(a.rows(), input.len());
        prop_assert!(a.is_finite());
        prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
