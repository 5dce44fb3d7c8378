//! Built-in numerical checks run by `attrec selfcheck`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{generate_synthetic, SynthConfig};
use crate::encoder::{EncoderConfig, EncoderParams, Model, MultiVectorRepr, PoolingKind, ReprEntry};
use crate::eval::{ndcg_at_k, rank_of_target, recall_at_k};
use crate::index::{build_index, ItemIndex};
use crate::matching::{attribute_match, batch_score, match_score, Aggregation, MatchConfig};
use crate::tensor::norm;
use crate::tokenizer::{build_vocab, TokenizerConfig};
use crate::training::{example_loss, example_loss_and_grads, loss, ItemGradients, Prepared, TrainConfig};
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorGradError {
    pub name: String,
    pub rel_error: f64,
}

/// Denominator floor of the gradient check, relative to the norm of the whole gradient.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Gradient check fixture: a small synthetic catalog and a 2-layer, 16-wide encoder.
pub struct GradFixture {
    pub model: Model,
    pub catalog: crate::corpus::Catalog,
    pub index: ItemIndex,
    pub example: Prepared,
    pub config: TrainConfig,
}

pub fn grad_fixture(seed: u64) -> Result<GradFixture> {
    let data = generate_synthetic(&SynthConfig {
        brands: 3,
        categories: 3,
        items: 12,
        users: 4,
        min_len: 4,
        max_len: 4,
        title_words: 6,
        seed,
        ..SynthConfig::default()
    })?;
    let vocab = build_vocab(&data.catalog, 1)?;
    let enc = EncoderConfig {
        vocab_size: vocab.len(),
        hidden: 16,
        proj_dim: 8,
        layers: 2,
        heads: 2,
        ff_dim: 32,
        max_positions: 64,
        dropout: 0.0,
        final_norm: true,
    };
    let params = EncoderParams::init(&enc, seed)?;
    let tok = TokenizerConfig { attr_cap: 8, max_items: 4, max_tokens: 64 };
    let model = Model::new(params, vocab, tok, PoolingKind::Attribute)?;
    let index = build_index(&data.catalog, &model)?;
    let seq = &data.sequences[0];
    let pos = |id: &String| data.catalog.position(id).expect("generated ids resolve");
    let example = Prepared {
        history: seq.item_ids[..3].iter().map(pos).collect(),
        target: pos(&seq.item_ids[3]),
    };
    Ok(GradFixture { model, catalog: data.catalog, index, example, config: TrainConfig::default() })
}

/// Analytic gradients of the full training loss against central differences
/// with step `h`. Error per tensor is `‖a − n‖ / max(‖a‖, ‖n‖, GRAD_FLOOR·‖∇‖)`;
/// the floor keeps tensors whose true gradient is zero (the key bias, since
/// softmax ignores a per-row constant) from comparing two round-off values.
pub fn gradient_check(fx: &GradFixture, h: f64) -> Result<Vec<TensorGradError>> {
    let (_, grads) = example_loss_and_grads(&fx.model, &fx.catalog, &fx.index, &fx.example, ItemGradients::All, &fx.config)?;
    let total = grads.iter().map(|g| norm(g.data()).powi(2)).sum::<f64>().sqrt();
    let names = fx.model.params.names();
    let mut model = fx.model.clone();
    let mut out = Vec::with_capacity(names.len());
    for (t, (name, analytic)) in names.into_iter().zip(grads.iter()).enumerate() {
        let mut numeric = Vec::with_capacity(analytic.data().len());
        for i in 0..analytic.data().len() {
            let orig = model.params.tensors()[t].data()[i];
            model.params.tensors_mut()[t].data_mut()[i] = orig + h;
            let up = example_loss(&model, &fx.catalog, &fx.index, &fx.example, ItemGradients::All, &fx.config)?;
            model.params.tensors_mut()[t].data_mut()[i] = orig - h;
            let down = example_loss(&model, &fx.catalog, &fx.index, &fx.example, ItemGradients::All, &fx.config)?;
            model.params.tensors_mut()[t].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff: Vec<f64> = analytic.data().iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(analytic.data()).max(norm(&numeric)).max(GRAD_FLOOR * total);
        out.push(TensorGradError { name, rel_error: norm(&diff) / scale });
    }
    Ok(out)
}

/// Random representation with `slots` slots and up to `max_rows` vectors per slot.
pub fn random_repr(rng: &mut impl Rng, dim: usize, slots: usize, max_rows: usize, allow_missing: bool) -> MultiVectorRepr {
    let mut entries = Vec::new();
    for slot in 0..slots {
        let lo = if allow_missing { 0 } else { 1 };
        let rows = rng.gen_range(lo..=max_rows);
        for r in 0..rows {
            entries.push(ReprEntry { pos: r + 1, slot, vector: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() });
        }
    }
    MultiVectorRepr { dim, slots, entries, bos: None }
}

fn oracle_score(user: &MultiVectorRepr, item: &MultiVectorRepr, agg: Aggregation) -> f64 {
    let mut total = 0.0;
    for j in 0..item.slots {
        let c = &item.entries.iter().find(|e| e.slot == j).expect("item covers every slot").vector;
        let cos: Vec<f64> = user
            .entries
            .iter()
            .filter(|e| e.slot == j)
            .map(|e| {
                let d: f64 = e.vector.iter().zip(c).map(|(a, b)| a * b).sum();
                (d / (norm(&e.vector).max(1e-8) * norm(c).max(1e-8))).clamp(-1.0, 1.0)
            })
            .collect();
        total += match (cos.is_empty(), agg) {
            (true, _) => -1.0,
            (false, Aggregation::Max) => cos.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            (false, Aggregation::Mean) => cos.iter().sum::<f64>() / cos.len() as f64,
        };
    }
    total
}

fn maxsim_check(seed: u64, instances: usize) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dim = rng.gen_range(1..=16);
        let slots = rng.gen_range(1..=4);
        let user = random_repr(&mut rng, dim, slots, 8, true);
        let items: Vec<MultiVectorRepr> = (0..rng.gen_range(1..=6)).map(|_| random_repr(&mut rng, dim, slots, 1, false)).collect();
        for agg in [Aggregation::Max, Aggregation::Mean] {
            let cfg = MatchConfig { aggregation: agg, ..MatchConfig::default() };
            let index = ItemIndex::from_reprs(
                (0..items.len()).map(|i| format!("i{i}")).collect(),
                &items,
                PoolingKind::Attribute,
                "00".repeat(32),
                "00".repeat(32),
            )?;
            let batch = batch_score(&user, &index, &cfg)?;
            for (item, b) in items.iter().zip(&batch) {
                let want = oracle_score(&user, item, agg);
                let got = match_score(&user, item, &cfg)?;
                let per_slot: f64 = (0..slots).map(|j| attribute_match(&user, item, j, &cfg).map(|m| m.score)).sum::<Result<f64>>()?;
                if agg == Aggregation::Max && (got.total != want || per_slot != want) {
                    return Err(crate::Error::Mismatch(format!("MaxSim score {} != oracle {want}", got.total)));
                }
                worst = worst.max((got.total - want).abs()).max((b - want).abs());
            }
        }
    }
    if worst > 1e-6 {
        return Err(crate::Error::Mismatch(format!("batched score deviates by {worst:e}")));
    }
    Ok(format!("{instances} instances, max deviation {worst:.1e}"))
}

fn metric_check(seed: u64, instances: usize) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let n = rng.gen_range(1..=40);
        let ids: Vec<String> = (0..n).map(|i| format!("{:03}", (i * 7919) % 1000)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        let target = rng.gen_range(0..n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
        let want = order.iter().position(|&i| i == target).expect("target present") + 1;
        let rank = rank_of_target(&scores, &ids, target);
        for k in [1, 5, 10, 20] {
            let r = if want <= k { 1.0 } else { 0.0 };
            let g = if want <= k { 1.0 / ((want + 1) as f64).log2() } else { 0.0 };
            if rank != want || recall_at_k(rank, k) != r || ndcg_at_k(rank, k) != g {
                return Err(crate::Error::Mismatch(format!("rank {rank} vs sorted position {want}")));
            }
        }
    }
    let g4 = ndcg_at_k(4, 10);
    if (g4 - 1.0 / 5f64.log2()).abs() > 1e-12 {
        return Err(crate::Error::Mismatch(format!("ndcg at rank 4 is {g4}")));
    }
    Ok(format!("{instances} rankings match sorting"))
}

fn loss_check(seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..20);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let c = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
        let t = rng.gen_range(0..n);
        worst = worst.max((loss(&s, t, 0.05)? - loss(&shifted, t, 0.05)?).abs());
    }
    let two = loss(&[0.7, 0.7], 1, 0.05)?;
    if worst > 1e-12 || (two - 2f64.ln()).abs() > 1e-12 || TrainConfig::default().tau != 0.05 {
        return Err(crate::Error::Mismatch(format!("shift deviation {worst:e}, equal-pair loss {two}")));
    }
    Ok(format!("shift deviation {worst:.1e}, equal pair {two:.15}"))
}

fn timed(name: &str, f: impl FnOnce() -> Result<String>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(e) => (false, e.to_string()),
    };
    CheckResult { name: name.into(), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        timed("gradient", || {
            let fx = grad_fixture(seed)?;
            let errs = gradient_check(&fx, 1e-5)?;
            let worst = errs.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).expect("tensors");
            if worst.rel_error < 1e-4 {
                Ok(format!("{} tensors, worst {} at {:.1e}", errs.len(), worst.name, worst.rel_error))
            } else {
                Err(crate::Error::Numerical(format!("{} relative error {:.1e}", worst.name, worst.rel_error)))
            }
        }),
        timed("maxsim", || maxsim_check(seed, 1000)),
        timed("metrics", || metric_check(seed, 1000)),
        timed("loss", || loss_check(seed)),
    ]
}
