//! Compact pre-norm transformer encoder with a dimension-reducing projection
//! and span average-pooling into attribute-aware multi-vector representations.
//!
//! The same [`Model`] encodes standalone items and user histories, so item and
//! sequence vectors always come from one parameter state.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemRecord;
use crate::tensor::{Matrix, ParamId, Tape, Var};
use crate::tokenizer::{build_history_input, build_item_input, EncoderInput, Span, TokenizerConfig, Vocabulary};
use crate::{sha256_hex, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Transformer width `d`.
    pub hidden: usize,
    /// Projected width `d'`.
    pub proj_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    /// Apply a layer norm to the last block's output.
    pub final_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            hidden: 64,
            proj_dim: 32,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            max_positions: 512,
            dropout: 0.0,
            final_norm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.vocab_size < 3 {
            return err(format!("vocab_size {} is too small", self.vocab_size));
        }
        if self.hidden == 0 || self.proj_dim == 0 || self.heads == 0 || self.ff_dim == 0 || self.max_positions == 0 {
            return err("encoder dimensions must be positive".into());
        }
        if self.proj_dim > self.hidden {
            return err(format!("projected dim {} exceeds hidden dim {}", self.proj_dim, self.hidden));
        }
        if self.hidden % self.heads != 0 {
            return err(format!("hidden dim {} is not divisible by {} heads", self.hidden, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How token states become representation vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingKind {
    /// Projected `[BOS]` state only.
    Bos,
    /// One mean vector per item.
    Item,
    /// One mean vector per attribute span.
    #[default]
    Attribute,
}

impl PoolingKind {
    /// Number of matching slots for items with `num_attrs` attributes.
    pub fn slots(self, num_attrs: usize) -> usize {
        match self {
            PoolingKind::Attribute => num_attrs,
            PoolingKind::Bos | PoolingKind::Item => 1,
        }
    }
}

impl std::fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolingKind::Bos => "bos",
            PoolingKind::Item => "item",
            PoolingKind::Attribute => "attribute",
        })
    }
}

impl std::str::FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bos" => Ok(PoolingKind::Bos),
            "item" => Ok(PoolingKind::Item),
            "attribute" => Ok(PoolingKind::Attribute),
            other => Err(Error::Config(format!("unknown pooling `{other}` (bos|item|attribute)"))),
        }
    }
}

const PER_LAYER: usize = 16;

/// Indices of one block's tensors.
#[derive(Clone, Copy, Debug)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

const TOK: ParamId = ParamId(0);
const POS: ParamId = ParamId(1);

fn layer_ids(l: usize) -> LayerIds {
    let b = 2 + l * PER_LAYER;
    let p = |k: usize| ParamId(b + k);
    LayerIds {
        ln1_g: p(0),
        ln1_b: p(1),
        wq: p(2),
        bq: p(3),
        wk: p(4),
        bk: p(5),
        wv: p(6),
        bv: p(7),
        wo: p(8),
        bo: p(9),
        ln2_g: p(10),
        ln2_b: p(11),
        w1: p(12),
        b1: p(13),
        w2: p(14),
        b2: p(15),
    }
}

/// All trainable tensors, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    tensors: Vec<Matrix>,
}

fn tensor_specs(c: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let d = c.hidden;
    let mut specs = vec![("tok_emb".to_owned(), c.vocab_size, d), ("pos_emb".to_owned(), c.max_positions, d)];
    for l in 0..c.layers {
        let n = |s: &str| format!("layers.{l}.{s}");
        specs.extend([
            (n("ln1.gamma"), 1, d),
            (n("ln1.beta"), 1, d),
            (n("attn.wq"), d, d),
            (n("attn.bq"), 1, d),
            (n("attn.wk"), d, d),
            (n("attn.bk"), 1, d),
            (n("attn.wv"), d, d),
            (n("attn.bv"), 1, d),
            (n("attn.wo"), d, d),
            (n("attn.bo"), 1, d),
            (n("ln2.gamma"), 1, d),
            (n("ln2.beta"), 1, d),
            (n("ffn.w1"), d, c.ff_dim),
            (n("ffn.b1"), 1, c.ff_dim),
            (n("ffn.w2"), c.ff_dim, d),
            (n("ffn.b2"), 1, d),
        ]);
    }
    specs.extend([
        ("final_ln.gamma".to_owned(), 1, d),
        ("final_ln.beta".to_owned(), 1, d),
        ("proj.weight".to_owned(), d, c.proj_dim),
        ("proj.bias".to_owned(), 1, c.proj_dim),
    ]);
    specs
}

impl EncoderParams {
    /// Scaled-uniform initialization: Glorot limits for dense weights, unit
    /// gains and zero offsets for layer norms and biases.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = tensor_specs(config)
            .into_iter()
            .map(|(name, rows, cols)| {
                let limit = if name == "tok_emb" {
                    Some(1.0)
                } else if name == "pos_emb" {
                    Some(0.2)
                } else if name.ends_with("gamma") {
                    return Matrix::filled(rows, cols, 1.0);
                } else if rows == 1 {
                    None
                } else {
                    Some((6.0 / (rows + cols) as f64).sqrt())
                };
                match limit {
                    None => Matrix::zeros(rows, cols),
                    Some(a) => Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect()),
                }
            })
            .collect();
        Ok(Self { config: config.clone(), tensors })
    }

    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", specs.len(), tensors.len())));
        }
        for ((name, r, c), t) in specs.iter().zip(&tensors) {
            if t.shape() != (*r, *c) {
                return Err(Error::Shape(format!("{name}: expected {r}x{c}, got {}x{}", t.rows(), t.cols())));
            }
            if !t.is_finite() {
                return Err(Error::Numerical(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        tensor_specs(&self.config).into_iter().map(|s| s.0).collect()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn projection_weight(&self) -> &Matrix {
        &self.tensors[self.tensors.len() - 2]
    }

    pub fn projection_bias(&self) -> &Matrix {
        &self.tensors[self.tensors.len() - 1]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    fn final_ids(&self) -> (ParamId, ParamId, ParamId, ParamId) {
        let n = self.tensors.len();
        (ParamId(n - 4), ParamId(n - 3), ParamId(n - 2), ParamId(n - 1))
    }

    /// SHA-256 over shapes and little-endian values of every tensor.
    pub fn hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.num_parameters() * 8 + self.tensors.len() * 16);
        for t in &self.tensors {
            bytes.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            bytes.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }

    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(id, &self.tensors[id.0])
    }
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: Mode, rng: &mut Option<&mut dyn RngCore>) -> Var {
    if mode == Mode::Eval || rate == 0.0 {
        return x;
    }
    let Some(rng) = rng.as_deref_mut() else { return x };
    let n = tape.value(x).data().len();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..n).map(|_| if rng.gen_bool(rate) { 0.0 } else { keep }).collect();
    tape.dropout(x, mask)
}

/// Contextualized hidden states (one `d`-row per token) on `tape`.
/// Dropout is applied only in train mode and only when an RNG is supplied.
pub fn forward_graph(
    tape: &mut Tape,
    params: &EncoderParams,
    token_ids: &[u32],
    mode: Mode,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let c = &params.config;
    if token_ids.is_empty() {
        return Err(Error::Empty("encoder input has no tokens".into()));
    }
    if token_ids.len() > c.max_positions {
        return Err(Error::Shape(format!("{} tokens exceed {} positions", token_ids.len(), c.max_positions)));
    }
    if let Some(&bad) = token_ids.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(Error::Shape(format!("token id {bad} outside vocabulary of {}", c.vocab_size)));
    }
    let ids: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.gather(TOK, params.get(TOK), &ids);
    let pos = tape.gather(POS, params.get(POS), &positions);
    let mut x = tape.add(tok, pos);

    let dh = c.hidden / c.heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    for l in 0..c.layers {
        let ids = layer_ids(l);
        let (g1, b1) = (params.p(tape, ids.ln1_g), params.p(tape, ids.ln1_b));
        let h = tape.layer_norm(x, g1, b1);
        let mut qkv = Vec::with_capacity(3);
        for (w, b) in [(ids.wq, ids.bq), (ids.wk, ids.bk), (ids.wv, ids.bv)] {
            let (w, b) = (params.p(tape, w), params.p(tape, b));
            let y = tape.matmul(h, w);
            qkv.push(tape.add_bias(y, b));
        }
        let mut heads = Vec::with_capacity(c.heads);
        for hd in 0..c.heads {
            let q = tape.slice_cols(qkv[0], hd * dh, dh);
            let k = tape.slice_cols(qkv[1], hd * dh, dh);
            let v = tape.slice_cols(qkv[2], hd * dh, dh);
            let s = tape.matmul_t(q, k);
            let s = tape.scale(s, inv_sqrt);
            let a = tape.softmax(s);
            heads.push(tape.matmul(a, v));
        }
        let o = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let (wo, bo) = (params.p(tape, ids.wo), params.p(tape, ids.bo));
        let o = tape.matmul(o, wo);
        let o = tape.add_bias(o, bo);
        let o = dropout(tape, o, c.dropout, mode, &mut rng);
        x = tape.add(x, o);

        let (g2, b2) = (params.p(tape, ids.ln2_g), params.p(tape, ids.ln2_b));
        let h = tape.layer_norm(x, g2, b2);
        let (w1, bb1) = (params.p(tape, ids.w1), params.p(tape, ids.b1));
        let f = tape.matmul(h, w1);
        let f = tape.add_bias(f, bb1);
        let f = tape.gelu(f);
        let (w2, bb2) = (params.p(tape, ids.w2), params.p(tape, ids.b2));
        let f = tape.matmul(f, w2);
        let f = tape.add_bias(f, bb2);
        let f = dropout(tape, f, c.dropout, mode, &mut rng);
        x = tape.add(x, f);
    }
    if c.final_norm {
        let (g, b, _, _) = params.final_ids();
        let (g, b) = (params.p(tape, g), params.p(tape, b));
        x = tape.layer_norm(x, g, b);
    }
    Ok(x)
}

/// `o' = Wᵀo + b` for every token row, `[BOS]` included.
pub fn project_graph(tape: &mut Tape, params: &EncoderParams, hidden: Var) -> Var {
    let (_, _, w, b) = params.final_ids();
    let (w, b) = (params.p(tape, w), params.p(tape, b));
    let y = tape.matmul(hidden, w);
    tape.add_bias(y, b)
}

/// Value-level forward pass in the given mode (no dropout RNG).
pub fn forward(input: &EncoderInput, params: &EncoderParams, mode: Mode) -> Result<Matrix> {
    let mut tape = Tape::new();
    let h = forward_graph(&mut tape, params, &input.token_ids, mode, None)?;
    Ok(tape.value(h).clone())
}

pub fn project(hidden: &Matrix, params: &EncoderParams) -> Result<Matrix> {
    if hidden.cols() != params.config.hidden {
        return Err(Error::Shape(format!("hidden width {} != {}", hidden.cols(), params.config.hidden)));
    }
    let mut tape = Tape::new();
    let h = tape.constant(hidden.clone());
    let y = project_graph(&mut tape, params, h);
    Ok(tape.value(y).clone())
}

/// One pooled vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprEntry {
    /// Item position `t` (see [`Span::item_pos`]).
    pub pos: usize,
    /// Attribute index for attribute pooling, `0` otherwise.
    pub slot: usize,
    pub vector: Vec<f64>,
}

/// Multi-vector representation of an item or a user history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiVectorRepr {
    pub dim: usize,
    pub slots: usize,
    pub entries: Vec<ReprEntry>,
    /// Projected `[BOS]` state.
    pub bos: Option<Vec<f64>>,
}

impl MultiVectorRepr {
    pub fn slot_entries(&self, slot: usize) -> impl Iterator<Item = &ReprEntry> {
        self.entries.iter().filter(move |e| e.slot == slot)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.vector.iter().all(|v| v.is_finite()))
    }
}

/// Pooling segments for one slot, in span order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotSegments {
    pub positions: Vec<usize>,
    pub segments: Vec<(usize, usize)>,
}

/// Groups spans into per-slot pooling segments. `num_attrs` is the catalog's `m`.
pub fn pooling_segments(spans: &[Span], num_attrs: usize, kind: PoolingKind) -> Vec<Option<SlotSegments>> {
    let slots = kind.slots(num_attrs);
    let mut out: Vec<SlotSegments> = vec![SlotSegments { positions: vec![], segments: vec![] }; slots];
    match kind {
        PoolingKind::Bos => {
            out[0].positions.push(spans.first().map_or(0, |s| s.item_pos));
            out[0].segments.push((0, 1));
        }
        PoolingKind::Attribute => {
            for s in spans.iter().filter(|s| !s.is_empty()) {
                out[s.attr].positions.push(s.item_pos);
                out[s.attr].segments.push((s.start, s.end));
            }
        }
        PoolingKind::Item => {
            for s in spans.iter().filter(|s| !s.is_empty()) {
                let slot = &mut out[0];
                match (slot.positions.last(), slot.segments.last_mut()) {
                    (Some(&p), Some(seg)) if p == s.item_pos && seg.1 == s.start => seg.1 = s.end,
                    _ => {
                        slot.positions.push(s.item_pos);
                        slot.segments.push((s.start, s.end));
                    }
                }
            }
        }
    }
    out.into_iter().map(|s| if s.segments.is_empty() { None } else { Some(s) }).collect()
}

/// Per-slot pooled matrices on a tape (`None` where a slot has no spans).
pub struct GraphRepr {
    pub slots: Vec<Option<(Var, Vec<usize>)>>,
    pub bos: Var,
}

pub fn pool_graph(tape: &mut Tape, projected: Var, spans: &[Span], num_attrs: usize, kind: PoolingKind) -> GraphRepr {
    let slots = pooling_segments(spans, num_attrs, kind)
        .into_iter()
        .map(|s| s.map(|s| (tape.segment_mean(projected, &s.segments), s.positions)))
        .collect();
    let bos = tape.segment_mean(projected, &[(0, 1)]);
    GraphRepr { slots, bos }
}

fn graph_to_repr(tape: &Tape, g: &GraphRepr, dim: usize) -> MultiVectorRepr {
    let mut entries = Vec::new();
    for (slot, s) in g.slots.iter().enumerate() {
        if let Some((v, positions)) = s {
            let m = tape.value(*v);
            for (r, &pos) in positions.iter().enumerate() {
                entries.push(ReprEntry { pos, slot, vector: m.row(r).to_vec() });
            }
        }
    }
    MultiVectorRepr { dim, slots: g.slots.len(), entries, bos: Some(tape.value(g.bos).row(0).to_vec()) }
}

/// Mean of projected token states per span, grouped as `kind` dictates.
pub fn pool_variant(projected: &Matrix, spans: &[Span], num_attrs: usize, kind: PoolingKind) -> MultiVectorRepr {
    let mut tape = Tape::new();
    let p = tape.constant(projected.clone());
    let g = pool_graph(&mut tape, p, spans, num_attrs, kind);
    graph_to_repr(&tape, &g, projected.cols())
}

/// Attribute pooling: one mean vector per span.
pub fn pool_attributes(projected: &Matrix, spans: &[Span], num_attrs: usize) -> MultiVectorRepr {
    pool_variant(projected, spans, num_attrs, PoolingKind::Attribute)
}

/// Parameters plus everything needed to turn item records into vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: EncoderParams,
    pub vocab: Vocabulary,
    pub tokenizer: TokenizerConfig,
    pub pooling: PoolingKind,
    /// Hash of the parameters that produced the item index this model scores
    /// against, when that differs from `params` (frozen-index training).
    pub item_encoder: Option<String>,
}

impl Model {
    pub fn new(params: EncoderParams, vocab: Vocabulary, tokenizer: TokenizerConfig, pooling: PoolingKind) -> Result<Self> {
        if params.config.vocab_size != vocab.len() {
            return Err(Error::Mismatch(format!(
                "encoder expects {} tokens, vocabulary has {}",
                params.config.vocab_size,
                vocab.len()
            )));
        }
        if tokenizer.max_tokens > params.config.max_positions {
            return Err(Error::Config(format!(
                "max_tokens {} exceeds encoder max_positions {}",
                tokenizer.max_tokens, params.config.max_positions
            )));
        }
        Ok(Self { params, vocab, tokenizer, pooling, item_encoder: None })
    }

    /// Hash of the encoder whose item vectors this model expects.
    pub fn item_encoder_hash(&self) -> String {
        self.item_encoder.clone().unwrap_or_else(|| self.params.hash())
    }

    pub fn proj_dim(&self) -> usize {
        self.params.config.proj_dim
    }

    pub fn item_input(&self, item: &ItemRecord) -> EncoderInput {
        build_item_input(item, &self.vocab, self.tokenizer.attr_cap)
    }

    pub fn history_input(&self, history: &[&ItemRecord]) -> EncoderInput {
        build_history_input(history, &self.vocab, &self.tokenizer)
    }

    /// Encode `input` on `tape`: forward, project, pool.
    pub fn encode_graph(
        &self,
        tape: &mut Tape,
        input: &EncoderInput,
        num_attrs: usize,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<GraphRepr> {
        let h = forward_graph(tape, &self.params, &input.token_ids, mode, rng)?;
        let p = project_graph(tape, &self.params, h);
        Ok(pool_graph(tape, p, &input.spans, num_attrs, self.pooling))
    }

    fn encode_input(&self, input: &EncoderInput, num_attrs: usize) -> Result<MultiVectorRepr> {
        let mut tape = Tape::new();
        let g = self.encode_graph(&mut tape, input, num_attrs, Mode::Eval, None)?;
        Ok(graph_to_repr(&tape, &g, self.proj_dim()))
    }

    pub fn encode_item(&self, item: &ItemRecord) -> Result<MultiVectorRepr> {
        self.encode_input(&self.item_input(item), item.attributes.len())
    }

    /// Encode a chronological history (oldest first).
    pub fn encode_sequence(&self, history: &[&ItemRecord]) -> Result<MultiVectorRepr> {
        let num_attrs = history.first().map(|i| i.attributes.len()).ok_or_else(|| Error::Empty("empty history".into()))?;
        self.encode_input(&self.history_input(history), num_attrs)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            encoder: self.params.config.clone(),
            tokenizer: self.tokenizer,
            pooling: self.pooling,
            vocab_hash: self.vocab.hash(),
            params_hash: self.params.hash(),
            tensors: self
                .params
                .names()
                .into_iter()
                .zip(&self.params.tensors)
                .map(|(name, t)| NamedTensor { name, rows: t.rows(), cols: t.cols(), data: t.data().to_vec() })
                .collect(),
            item_encoder: self.item_encoder.clone(),
            optimizer: None,
            provenance: None,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: Vocabulary) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version)));
        }
        if ckpt.vocab_hash != vocab.hash() {
            return Err(Error::Mismatch("vocabulary hash differs from the checkpoint".into()));
        }
        let names = tensor_specs(&ckpt.encoder);
        if names.len() != ckpt.tensors.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", names.len(), ckpt.tensors.len())));
        }
        let mut tensors = Vec::with_capacity(names.len());
        for ((name, _, _), t) in names.iter().zip(&ckpt.tensors) {
            if *name != t.name || t.data.len() != t.rows * t.cols {
                return Err(Error::Format(format!("tensor `{}` does not match layout entry `{name}`", t.name)));
            }
            tensors.push(Matrix::from_vec(t.rows, t.cols, t.data.clone()));
        }
        let params = EncoderParams::from_tensors(ckpt.encoder.clone(), tensors)?;
        if params.hash() != ckpt.params_hash {
            return Err(Error::Format("parameter hash does not match checkpoint contents".into()));
        }
        let mut model = Model::new(params, vocab, ckpt.tokenizer, ckpt.pooling)?;
        model.item_encoder = ckpt.item_encoder.clone();
        Ok(model)
    }
}

pub const CHECKPOINT_FORMAT: &str = "attrec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// JSON checkpoint container. See `docs/formats.md` for the layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderConfig,
    pub tokenizer: TokenizerConfig,
    pub pooling: PoolingKind,
    pub vocab_hash: String,
    pub params_hash: String,
    pub tensors: Vec<NamedTensor>,
    #[serde(default)]
    pub item_encoder: Option<String>,
    #[serde(default)]
    pub optimizer: Option<serde_json::Value>,
    #[serde(default)]
    pub provenance: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
