//! Contrastive training with a periodically refreshed or frozen item index.
//!
//! Each example scores its target against a candidate set with temperature
//! softmax cross-entropy. In stage 1 the index is rebuilt every epoch and,
//! depending on [`ItemGradients`], candidates are either index constants or
//! re-encoded inside the graph so the item side receives gradients too. In
//! stage 2 the index from the best stage-1 epoch is frozen and only the
//! history side is updated.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, DatasetSplit, Example, ItemRecord};
use crate::encoder::{EncoderParams, Model, Mode};
use crate::eval::{evaluate, EvalConfig};
use crate::index::{build_index, ItemIndex};
use crate::matching::{Aggregation, MatchConfig, MISSING_SLOT_SCORE};
use crate::tensor::{xent_forward, Gradients, Matrix, Tape, Var};
use crate::{Error, Result};

/// Cut-off used for validation during training.
pub const VALID_K: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Negatives {
    /// Every catalog item is a candidate.
    #[default]
    Full,
    /// Candidates are the targets of the other examples in the micro-batch.
    InBatch,
}

/// When stage 1 re-encodes the catalog into a fresh index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshPolicy {
    #[default]
    PerEpoch,
    PerStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub warmup_steps: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub stage2_epochs: usize,
    pub negatives: Negatives,
    pub refresh: RefreshPolicy,
    pub item_gradients: ItemGradients,
    pub matching: MatchConfig,
    pub mask_history: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            lr: 5e-5,
            batch_size: 8,
            grad_accum: 16,
            warmup_steps: 800,
            max_epochs: 100,
            patience: 5,
            stage2_epochs: 100,
            negatives: Negatives::Full,
            refresh: RefreshPolicy::PerEpoch,
            item_gradients: ItemGradients::All,
            matching: MatchConfig::default(),
            mask_history: false,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings sized for small catalogs on a CPU.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            grad_accum: 1,
            warmup_steps: 20,
            max_epochs: 20,
            patience: 3,
            stage2_epochs: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("tau", self.tau)?;
        positive("lr", self.lr)?;
        positive("adam_eps", self.adam_eps)?;
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::Config("batch_size and grad_accum must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        self.matching.validate()
    }

    /// Learning rate at optimizer step `step` (1-based): linear warmup, then constant.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }

    /// Evaluation settings consistent with this training run.
    pub fn eval_config(&self, ks: &[usize]) -> EvalConfig {
        EvalConfig { ks: ks.to_vec(), matching: self.matching, mask_history: self.mask_history }
    }
}

/// `-log softmax(scores / tau)[target]`. Entries equal to `-inf` are masked
/// out; any other non-finite input is an error.
pub fn loss(scores: &[f64], target: usize, tau: f64) -> Result<f64> {
    if target >= scores.len() {
        return Err(Error::Shape(format!("target {target} outside {} scores", scores.len())));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    if !scores[target].is_finite() || scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
        return Err(Error::Numerical("non-finite score in loss".into()));
    }
    let (l, _) = xent_forward(scores, target, tau);
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::Numerical("loss is not finite".into()))
    }
}

/// An example with items resolved to catalog positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prepared {
    pub history: Vec<usize>,
    pub target: usize,
}

pub fn prepare(catalog: &Catalog, example: &Example) -> Result<Prepared> {
    let pos = |id: &String| catalog.position(id).ok_or_else(|| Error::UnknownItem(id.clone()));
    if example.prefix.is_empty() {
        return Err(Error::Empty(format!("user `{}` has an empty history", example.user_id)));
    }
    Ok(Prepared { history: example.prefix.iter().map(pos).collect::<Result<_>>()?, target: pos(&example.target)? })
}

/// Which candidate vectors carry gradients in stage 1. Stage 2 always uses
/// frozen constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemGradients {
    /// Every candidate, the target included, is an index constant.
    None,
    /// The target is re-encoded inside the graph; the rest are index constants.
    Target,
    /// Every candidate is re-encoded inside the graph.
    #[default]
    All,
}

/// Unit-normalized index rows per slot for the given candidate items.
fn constant_rows(index: &ItemIndex, items: &[usize]) -> Vec<Matrix> {
    let dim = index.dim();
    (0..index.slots())
        .map(|s| {
            let inv = index.inv_norms(s);
            let mut m = Matrix::zeros(items.len(), dim);
            for (r, &i) in items.iter().enumerate() {
                for (o, v) in m.row_mut(r).iter_mut().zip(index.vector(i, s)) {
                    *o = v * inv[i];
                }
            }
            m
        })
        .collect()
}

/// Encodes `items` on `tape`; one unit-normalized `len × d'` variable per slot.
fn live_rows(
    tape: &mut Tape,
    model: &Model,
    catalog: &Catalog,
    items: &[usize],
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Var>> {
    let m = catalog.num_attributes();
    let mut rows: Vec<Vec<Var>> = vec![Vec::with_capacity(items.len()); model.pooling.slots(m)];
    for &i in items {
        let item = &catalog.items()[i];
        let g = model.encode_graph(tape, &model.item_input(item), m, Mode::Train, Some(&mut *rng))?;
        for (s, slot) in g.slots.iter().enumerate() {
            let (v, _) = slot.as_ref().ok_or_else(|| Error::Shape(format!("item `{}` has no span for slot {s}", item.item_id)))?;
            rows[s].push(*v);
        }
    }
    Ok(rows
        .iter()
        .map(|r| {
            let c = tape.concat_rows(r);
            tape.normalize_rows(c, eps)
        })
        .collect())
}

fn aggregate(tape: &mut Tape, sims: Var, agg: Aggregation) -> Var {
    match agg {
        Aggregation::Max => tape.col_max(sims),
        Aggregation::Mean => tape.col_mean(sims),
    }
}

fn accumulate(tape: &mut Tape, acc: Option<Var>, x: Var) -> Var {
    match acc {
        Some(a) => tape.add(a, x),
        None => x,
    }
}

/// Records the masked score row of one example on `tape`. `cand_rows` holds
/// one unit-normalized row per entry of `cand_items`, per slot.
#[allow(clippy::too_many_arguments)]
fn example_logits(
    tape: &mut Tape,
    model: &Model,
    catalog: &Catalog,
    ex: &Prepared,
    cand_rows: &[Var],
    cand_items: &[usize],
    target_col: usize,
    refresh_target: bool,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let items = catalog.items();
    let m = catalog.num_attributes();
    let history: Vec<&ItemRecord> = ex.history.iter().map(|&i| &items[i]).collect();
    let input = model.history_input(&history);
    let user = model.encode_graph(tape, &input, m, Mode::Train, Some(&mut *rng))?;
    let item = if refresh_target {
        let input = model.item_input(&items[ex.target]);
        Some(model.encode_graph(tape, &input, m, Mode::Train, Some(&mut *rng))?)
    } else {
        None
    };
    let eps = config.matching.eps;
    let agg = config.matching.aggregation;
    let mut total: Option<Var> = None;
    let mut target_total: Option<Var> = None;
    for (slot, user_slot) in user.slots.iter().enumerate() {
        let (scores, target_score) = match user_slot {
            Some((u, _)) => {
                let un = tape.normalize_rows(*u, eps);
                let sims = tape.matmul_t(un, cand_rows[slot]);
                let sims = tape.clamp(sims, -1.0, 1.0);
                let scores = aggregate(tape, sims, agg);
                let target_score = match item.as_ref().and_then(|g| g.slots[slot].as_ref()) {
                    Some((iv, _)) => {
                        let iv = tape.normalize_rows(*iv, eps);
                        let s = tape.matmul_t(un, iv);
                        let s = tape.clamp(s, -1.0, 1.0);
                        Some(aggregate(tape, s, agg))
                    }
                    None => None,
                };
                (scores, target_score)
            }
            None => {
                let scores = tape.constant(Matrix::filled(1, cand_items.len(), MISSING_SLOT_SCORE));
                let target_score = item.as_ref().map(|_| tape.constant(Matrix::filled(1, 1, MISSING_SLOT_SCORE)));
                (scores, target_score)
            }
        };
        total = Some(accumulate(tape, total, scores));
        if let Some(ts) = target_score {
            target_total = Some(accumulate(tape, target_total, ts));
        }
    }
    let mut logits = total.ok_or_else(|| Error::Shape("model has no matching slots".into()))?;
    if let Some(t) = target_total {
        logits = tape.place_col(logits, t, target_col);
    }
    let seen: HashSet<usize> = if config.mask_history { ex.history.iter().copied().collect() } else { HashSet::new() };
    let mask: Vec<f64> = cand_items
        .iter()
        .enumerate()
        .map(|(c, i)| if c != target_col && (*i == ex.target || seen.contains(i)) { f64::NEG_INFINITY } else { 0.0 })
        .collect();
    if mask.iter().any(|v| *v != 0.0) {
        let mask = tape.constant(Matrix::row_vector(mask));
        logits = tape.add(logits, mask);
    }
    Ok(logits)
}

/// Records the loss of one example on `tape`.
#[allow(clippy::too_many_arguments)]
fn example_graph(
    tape: &mut Tape,
    model: &Model,
    catalog: &Catalog,
    ex: &Prepared,
    cand_rows: &[Var],
    cand_items: &[usize],
    target_col: usize,
    refresh_target: bool,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let logits = example_logits(tape, model, catalog, ex, cand_rows, cand_items, target_col, refresh_target, config, rng)?;
    Ok(tape.softmax_xent(logits, target_col, config.tau))
}

/// Candidate scores of one example, before the temperature is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    /// Catalog positions of the candidates, one per score.
    pub candidates: Vec<usize>,
    /// Masked entries (duplicate targets, and history items when masking) are `-inf`.
    pub scores: Vec<f64>,
    pub target_col: usize,
}

/// Score rows of a batch against candidates from `index`: the whole catalog
/// in full mode, the batch's targets in in-batch mode. In in-batch mode a
/// target that several examples share is scored once per column, and each
/// row masks every column holding its target except its own.
pub fn candidate_scores(
    model: &Model,
    catalog: &Catalog,
    index: &ItemIndex,
    batch: &[Prepared],
    config: &TrainConfig,
) -> Result<Vec<ScoreRow>> {
    if index.is_empty() || catalog.is_empty() {
        return Err(Error::Empty("cannot score against an empty catalog".into()));
    }
    index.check_compatible(model)?;
    let full = config.negatives == Negatives::Full;
    let cand_items: Vec<usize> = if full { (0..index.len()).collect() } else { batch.iter().map(|e| e.target).collect() };
    let rows = constant_rows(index, &cand_items);
    batch
        .iter()
        .enumerate()
        .map(|(k, ex)| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = rows.iter().map(|m| tape.constant(m.clone())).collect();
            let target_col = if full { ex.target } else { k };
            let mut rng = example_rng(config.seed, &[]);
            let l = example_logits(&mut tape, model, catalog, ex, &vars, &cand_items, target_col, false, config, &mut rng)?;
            Ok(ScoreRow { candidates: cand_items.clone(), scores: tape.value(l).row(0).to_vec(), target_col })
        })
        .collect()
}

fn example_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(parts.iter().fold(0u64, |acc, p| acc.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(*p)));
    rng
}

fn full_loss_tape(
    model: &Model,
    catalog: &Catalog,
    index: &ItemIndex,
    example: &Prepared,
    item_grads: ItemGradients,
    config: &TrainConfig,
) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let mut rng = example_rng(config.seed, &[]);
    let items: Vec<usize> = (0..index.len()).collect();
    let rows = match item_grads {
        ItemGradients::All => live_rows(&mut tape, model, catalog, &items, config.matching.eps, &mut rng)?,
        _ => constant_rows(index, &items).into_iter().map(|m| tape.constant(m)).collect(),
    };
    let refresh = item_grads == ItemGradients::Target;
    let l = example_graph(&mut tape, model, catalog, example, &rows, &items, example.target, refresh, config, &mut rng)?;
    Ok((tape, l))
}

/// Full-catalog loss of one example. Constant candidates come from `index`.
pub fn example_loss(
    model: &Model,
    catalog: &Catalog,
    index: &ItemIndex,
    example: &Prepared,
    item_grads: ItemGradients,
    config: &TrainConfig,
) -> Result<f64> {
    let (tape, l) = full_loss_tape(model, catalog, index, example, item_grads, config)?;
    Ok(tape.value(l).get(0, 0))
}

/// [`example_loss`] together with its parameter gradients.
pub fn example_loss_and_grads(
    model: &Model,
    catalog: &Catalog,
    index: &ItemIndex,
    example: &Prepared,
    item_grads: ItemGradients,
    config: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let (tape, l) = full_loss_tape(model, catalog, index, example, item_grads, config)?;
    backward(model, &tape, l)
}

fn backward(model: &Model, tape: &Tape, loss: Var) -> Result<(f64, Gradients)> {
    let value = tape.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("training loss became {value}")));
    }
    let mut grads = Gradients::zeros_like(model.params.tensors());
    tape.backward(loss, &mut grads);
    Ok((value, grads))
}

/// Bias-corrected Adam update of one tensor at 1-based step `step`.
pub fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64, config: &TrainConfig) {
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + config.adam_eps);
    }
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.data().len()]).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected Adam update with learning rate `lr`.
    pub fn apply(&mut self, params: &mut EncoderParams, grads: &Gradients, lr: f64, config: &TrainConfig) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.step += 1;
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            adam_update(p.data_mut(), g.data(), m, v, self.step, lr, config);
        }
        if params.tensors().iter().all(Matrix::is_finite) {
            Ok(())
        } else {
            Err(Error::Numerical("parameters diverged".into()))
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "valid_recall@10")]
    pub valid_recall: f64,
    #[serde(rename = "valid_ndcg@10")]
    pub valid_ndcg: f64,
    pub lr: f64,
}

/// Mutable training state: model, optimizer and the resolved training examples.
pub struct Trainer<'a> {
    pub model: Model,
    pub adam: AdamState,
    catalog: &'a Catalog,
    examples: Vec<Prepared>,
    config: TrainConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, catalog: &'a Catalog, examples: &[Example], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if examples.is_empty() {
            return Err(Error::Empty("no training examples".into()));
        }
        let examples = examples.iter().map(|e| prepare(catalog, e)).collect::<Result<Vec<_>>>()?;
        let adam = AdamState::new(&model.params);
        Ok(Self { model, adam, catalog, examples, config: config.clone() })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.adam.step.max(1))
    }

    /// One pass over the shuffled examples; returns the mean training loss.
    /// `after_step` runs after every optimizer update. With `rebuild_each_step`
    /// constant candidates are re-encoded from the current model after every
    /// update instead of being taken from `index`.
    #[allow(clippy::too_many_arguments)]
    pub fn epoch(
        &mut self,
        index: &ItemIndex,
        rebuild_each_step: bool,
        item_grads: ItemGradients,
        stage: u8,
        epoch: usize,
        after_step: &mut dyn FnMut(&Model),
    ) -> Result<f64> {
        let cfg = self.config.clone();
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut example_rng(cfg.seed, &[stage as u64, epoch as u64]));
        let mut rebuilt: Option<ItemIndex> = None;
        let mut loss_sum = 0.0;
        let mut pending: Option<Gradients> = None;
        let mut pending_n = 0usize;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let full = cfg.negatives == Negatives::Full;
            let cand_items: Vec<usize> =
                if full { (0..self.catalog.len()).collect() } else { batch.iter().map(|&i| self.examples[i].target).collect() };
            let col = |k: usize, ex: &Prepared| if full { ex.target } else { k };
            let seed_of = |k: usize| example_rng(cfg.seed, &[stage as u64, epoch as u64, (b * cfg.batch_size + k) as u64]);
            let results: Vec<Result<(f64, Gradients)>> = if item_grads == ItemGradients::All {
                let mut tape = Tape::new();
                let mut rng = example_rng(cfg.seed, &[stage as u64, epoch as u64, b as u64, u64::MAX]);
                let rows = live_rows(&mut tape, &self.model, self.catalog, &cand_items, cfg.matching.eps, &mut rng)?;
                let mut total = None;
                for (k, &i) in batch.iter().enumerate() {
                    let ex = &self.examples[i];
                    let l = example_graph(
                        &mut tape,
                        &self.model,
                        self.catalog,
                        ex,
                        &rows,
                        &cand_items,
                        col(k, ex),
                        false,
                        &cfg,
                        &mut seed_of(k),
                    )?;
                    total = Some(accumulate(&mut tape, total, l));
                }
                vec![backward(&self.model, &tape, total.expect("non-empty batch"))]
            } else {
                let current = rebuilt.as_ref().unwrap_or(index);
                let rows = constant_rows(current, &cand_items);
                let refresh = item_grads == ItemGradients::Target;
                let (model, catalog, examples) = (&self.model, self.catalog, &self.examples);
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let ex = &examples[i];
                        let mut tape = Tape::new();
                        let vars: Vec<Var> = rows.iter().map(|m| tape.constant(m.clone())).collect();
                        let l = example_graph(
                            &mut tape,
                            model,
                            catalog,
                            ex,
                            &vars,
                            &cand_items,
                            col(k, ex),
                            refresh,
                            &cfg,
                            &mut seed_of(k),
                        )?;
                        backward(model, &tape, l)
                    })
                    .collect()
            };
            for r in results {
                let (l, g) = r?;
                loss_sum += l;
                match pending.as_mut() {
                    Some(p) => p.add_assign(&g),
                    None => pending = Some(g),
                }
            }
            pending_n += batch.len();
            if (b + 1) % cfg.grad_accum == 0 || b + 1 == batches.len() {
                let mut g = pending.take().expect("at least one example per step");
                g.scale(1.0 / pending_n as f64);
                pending_n = 0;
                let lr = cfg.lr_at(self.adam.step + 1);
                self.adam.apply(&mut self.model.params, &g, lr, &cfg)?;
                after_step(&self.model);
                if rebuild_each_step && item_grads != ItemGradients::All {
                    rebuilt = Some(build_index(self.catalog, &self.model)?);
                }
            }
        }
        Ok(loss_sum / self.examples.len() as f64)
    }
}

pub struct Stage1Outcome {
    pub model: Model,
    /// Index built from `model`, used for its validation score.
    pub index: ItemIndex,
    pub best_epoch: usize,
    pub best_valid_ndcg: f64,
    pub logs: Vec<EpochLog>,
    pub optimizer: AdamState,
}

pub struct Stage2Outcome {
    pub model: Model,
    /// Zero when no stage-2 epoch improved on the starting point.
    pub best_epoch: usize,
    pub best_valid_ndcg: f64,
    pub logs: Vec<EpochLog>,
    /// Payload hash of the frozen index, taken after every optimizer step.
    pub index_hashes: Vec<String>,
    pub optimizer: AdamState,
}

fn validate_split(split: &DatasetSplit) -> Result<()> {
    if split.train.is_empty() {
        return Err(Error::Empty("the training split is empty".into()));
    }
    if split.valid.is_empty() {
        return Err(Error::Empty("the validation split is empty".into()));
    }
    Ok(())
}

/// Stage 1: rebuild the index every epoch, early-stop on validation NDCG@10.
pub fn train_stage1(
    model: Model,
    catalog: &Catalog,
    split: &DatasetSplit,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<Stage1Outcome> {
    validate_split(split)?;
    let eval_cfg = config.eval_config(&[VALID_K]);
    let mut trainer = Trainer::new(model, catalog, &split.train, config)?;
    let mut best: Option<(Model, ItemIndex, usize, f64, AdamState)> = None;
    let mut logs = Vec::new();
    let mut stale = 0usize;
    for epoch in 1..=config.max_epochs {
        let index = build_index(catalog, &trainer.model)?;
        let per_step = config.refresh == RefreshPolicy::PerStep;
        let train_loss = trainer.epoch(&index, per_step, config.item_gradients, 1, epoch, &mut |_| {})?;
        let index = build_index(catalog, &trainer.model)?;
        let report = evaluate(&trainer.model, &index, catalog, &split.valid, "valid", &eval_cfg)?;
        let log = EpochLog {
            stage: 1,
            epoch,
            train_loss,
            valid_recall: report.recall(VALID_K).unwrap_or(0.0),
            valid_ndcg: report.ndcg(VALID_K).unwrap_or(0.0),
            lr: trainer.current_lr(),
        };
        observer(&log);
        let improved = best.as_ref().is_none_or(|b| log.valid_ndcg > b.3);
        logs.push(log.clone());
        if improved {
            best = Some((trainer.model.clone(), index, epoch, log.valid_ndcg, trainer.adam.clone()));
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    let (model, index, best_epoch, best_valid_ndcg, optimizer) = best.expect("at least one epoch ran");
    Ok(Stage1Outcome { model, index, best_epoch, best_valid_ndcg, logs, optimizer })
}

/// Stage 2: freeze the best stage-1 index and keep training the history side.
/// The starting point counts as epoch 0, so the result never scores below it.
pub fn train_stage2(
    stage1: &Stage1Outcome,
    catalog: &Catalog,
    split: &DatasetSplit,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<Stage2Outcome> {
    validate_split(split)?;
    let eval_cfg = config.eval_config(&[VALID_K]);
    let index = &stage1.index;
    let mut model = stage1.model.clone();
    model.item_encoder = Some(index.encoder_hash().to_owned());
    let baseline = evaluate(&model, index, catalog, &split.valid, "valid", &eval_cfg)?;
    let base_log = EpochLog {
        stage: 2,
        epoch: 0,
        train_loss: f64::NAN,
        valid_recall: baseline.recall(VALID_K).unwrap_or(0.0),
        valid_ndcg: baseline.ndcg(VALID_K).unwrap_or(0.0),
        lr: 0.0,
    };
    observer(&base_log);
    let mut best = (model.clone(), 0usize, base_log.valid_ndcg);
    let mut logs = vec![base_log];
    let mut trainer = Trainer::new(model, catalog, &split.train, config)?;
    let mut index_hashes = Vec::new();
    let mut stale = 0usize;
    for epoch in 1..=config.stage2_epochs {
        let train_loss = trainer.epoch(index, false, ItemGradients::None, 2, epoch, &mut |_| index_hashes.push(index.payload_hash()))?;
        let report = evaluate(&trainer.model, index, catalog, &split.valid, "valid", &eval_cfg)?;
        let log = EpochLog {
            stage: 2,
            epoch,
            train_loss,
            valid_recall: report.recall(VALID_K).unwrap_or(0.0),
            valid_ndcg: report.ndcg(VALID_K).unwrap_or(0.0),
            lr: trainer.current_lr(),
        };
        observer(&log);
        logs.push(log.clone());
        if log.valid_ndcg > best.2 {
            best = (trainer.model.clone(), epoch, log.valid_ndcg);
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    let (model, best_epoch, best_valid_ndcg) = best;
    Ok(Stage2Outcome { model, best_epoch, best_valid_ndcg, logs, index_hashes, optimizer: trainer.adam })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_of_two_equal_scores_is_ln2() {
        assert!((loss(&[0.3, 0.3], 0, 0.05).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_is_shift_invariant() {
        let a = loss(&[0.1, -0.4, 0.9], 2, 0.05).unwrap();
        let b = loss(&[10.1, 9.6, 10.9], 2, 0.05).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_nan_and_bad_targets() {
        assert!(matches!(loss(&[f64::NAN, 0.0], 1, 0.05), Err(Error::Numerical(_))));
        assert!(loss(&[0.0], 1, 0.05).is_err());
        assert!(loss(&[0.0, f64::NEG_INFINITY], 0, 0.05).is_ok());
    }

    #[test]
    fn warmup_is_linear_then_flat() {
        let c = TrainConfig { lr: 1.0, warmup_steps: 4, ..TrainConfig::default() };
        assert_eq!(c.lr_at(1), 0.25);
        assert_eq!(c.lr_at(4), 1.0);
        assert_eq!(c.lr_at(9), 1.0);
    }

    #[test]
    fn default_temperature() {
        assert_eq!(TrainConfig::default().tau, 0.05);
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::desk() }.validate().is_err());
    }
}
