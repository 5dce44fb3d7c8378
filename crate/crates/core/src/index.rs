//! Precomputed item vectors and top-K recommendation.
//!
//! Storage is attribute-major: all items' slot-0 vectors, then all slot-1
//! vectors, and so on, each block `len × dim` row-major. The on-disk layout
//! (little-endian throughout):
//!
//! ```text
//! magic       8 bytes  "ATRXIDX\0"
//! version     u32      1
//! pooling     u8       0 = attribute, 1 = item, 2 = bos
//! reserved    3 bytes  zero
//! dim         u32
//! slots       u32
//! count       u64
//! encoder     32 bytes SHA-256 of the encoder parameters that built the vectors
//! vocab       32 bytes SHA-256 of the vocabulary file
//! ids         count × (u32 byte length, UTF-8 bytes)
//! payload     slots × count × dim f64
//! checksum    32 bytes SHA-256 of everything above
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Catalog, ItemRecord};
use crate::encoder::{Model, MultiVectorRepr, PoolingKind, ReprEntry};
use crate::matching::{batch_score, match_score, MatchConfig, ScoreBreakdown};
use crate::tensor::norm;
use crate::{sha256_hex, Error, Result};

const MAGIC: &[u8; 8] = b"ATRXIDX\0";
pub const INDEX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ItemIndex {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    dim: usize,
    slots: usize,
    pooling: PoolingKind,
    data: Vec<f64>,
    inv_norms: Vec<f64>,
    encoder_hash: String,
    vocab_hash: String,
}

fn pooling_code(p: PoolingKind) -> u8 {
    match p {
        PoolingKind::Attribute => 0,
        PoolingKind::Item => 1,
        PoolingKind::Bos => 2,
    }
}

impl ItemIndex {
    /// Assembles an index from one representation per item (each with exactly one vector per slot).
    pub fn from_reprs(
        ids: Vec<String>,
        reprs: &[MultiVectorRepr],
        pooling: PoolingKind,
        encoder_hash: String,
        vocab_hash: String,
    ) -> Result<Self> {
        if ids.len() != reprs.len() {
            return Err(Error::Shape(format!("{} ids for {} representations", ids.len(), reprs.len())));
        }
        let first = reprs.first().ok_or_else(|| Error::Empty("cannot index an empty catalog".into()))?;
        let (dim, slots) = (first.dim, first.slots);
        let n = ids.len();
        let mut data = vec![0.0; slots * n * dim];
        for (i, r) in reprs.iter().enumerate() {
            if r.dim != dim || r.slots != slots {
                return Err(Error::Shape(format!("item `{}` has a different shape", ids[i])));
            }
            let mut seen = vec![false; slots];
            for e in &r.entries {
                if seen[e.slot] {
                    return Err(Error::Shape(format!("item `{}` has two vectors for slot {}", ids[i], e.slot)));
                }
                seen[e.slot] = true;
                data[(e.slot * n + i) * dim..(e.slot * n + i + 1) * dim].copy_from_slice(&e.vector);
            }
            if let Some(s) = seen.iter().position(|s| !s) {
                return Err(Error::Shape(format!("item `{}` has no vector for slot {s}", ids[i])));
            }
        }
        Self::from_parts(ids, dim, slots, pooling, data, encoder_hash, vocab_hash)
    }

    fn from_parts(
        ids: Vec<String>,
        dim: usize,
        slots: usize,
        pooling: PoolingKind,
        data: Vec<f64>,
        encoder_hash: String,
        vocab_hash: String,
    ) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("index vectors must be finite".into()));
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(Error::Schema(format!("item `{id}` indexed twice")));
            }
        }
        let inv_norms = data.chunks(dim.max(1)).map(|v| 1.0 / norm(v).max(1e-8)).collect();
        Ok(Self { ids, positions, dim, slots, pooling, data, inv_norms, encoder_hash, vocab_hash })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn pooling(&self) -> PoolingKind {
        self.pooling
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn encoder_hash(&self) -> &str {
        &self.encoder_hash
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    /// Contiguous `len × dim` block of one slot.
    pub fn block(&self, slot: usize) -> &[f64] {
        let n = self.len() * self.dim;
        &self.data[slot * n..(slot + 1) * n]
    }

    /// `1 / max(‖v‖, 1e-8)` for every item of one slot.
    pub fn inv_norms(&self, slot: usize) -> &[f64] {
        &self.inv_norms[slot * self.len()..(slot + 1) * self.len()]
    }

    pub fn vector(&self, item: usize, slot: usize) -> &[f64] {
        &self.block(slot)[item * self.dim..(item + 1) * self.dim]
    }

    pub fn item_repr(&self, item: usize) -> MultiVectorRepr {
        MultiVectorRepr {
            dim: self.dim,
            slots: self.slots,
            entries: (0..self.slots).map(|s| ReprEntry { pos: 0, slot: s, vector: self.vector(item, s).to_vec() }).collect(),
            bos: None,
        }
    }

    /// SHA-256 of the vector payload bytes.
    pub fn payload_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Errors unless `model` is the encoder this index was built for.
    pub fn check_compatible(&self, model: &Model) -> Result<()> {
        if self.vocab_hash != model.vocab.hash() {
            return Err(Error::Mismatch("index was built with a different vocabulary".into()));
        }
        if self.encoder_hash != model.item_encoder_hash() {
            return Err(Error::Mismatch("index was built with a different item encoder".into()));
        }
        if self.pooling != model.pooling || self.dim != model.proj_dim() {
            return Err(Error::Mismatch("index pooling or dimension differs from the model".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(128 + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&[pooling_code(self.pooling), 0, 0, 0]);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.slots as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for h in [&self.encoder_hash, &self.vocab_hash] {
            let raw = hex::decode(h).map_err(|_| Error::Format(format!("hash `{h}` is not hex")))?;
            if raw.len() != 32 {
                return Err(Error::Format(format!("hash `{h}` is not 32 bytes")));
            }
            out.extend_from_slice(&raw);
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("index: {m}"));
        if bytes.len() < 32 + 96 {
            return Err(bad("file too short"));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: body, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let pooling = match r.take(4)?[0] {
            0 => PoolingKind::Attribute,
            1 => PoolingKind::Item,
            2 => PoolingKind::Bos,
            c => return Err(bad(&format!("unknown pooling code {c}"))),
        };
        let dim = r.u32()? as usize;
        let slots = r.u32()? as usize;
        let count = r.u64()? as usize;
        let encoder_hash = hex::encode(r.take(32)?);
        let vocab_hash = hex::encode(r.take(32)?);
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?).map_err(|_| bad("item id is not UTF-8"))?;
            ids.push(s.to_owned());
        }
        let n = slots * count * dim;
        let raw = r.take(n * 8)?;
        if r.at != body.len() {
            return Err(bad("trailing bytes"));
        }
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Self::from_parts(ids, dim, slots, pooling, data, encoder_hash, vocab_hash)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("index: unexpected end of file".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Encodes every catalog item with `model` (in parallel, order preserved).
pub fn build_index(catalog: &Catalog, model: &Model) -> Result<ItemIndex> {
    if catalog.is_empty() {
        return Err(Error::Empty("cannot index an empty catalog".into()));
    }
    let reprs = catalog.items().par_iter().map(|item| model.encode_item(item)).collect::<Result<Vec<_>>>()?;
    ItemIndex::from_reprs(
        catalog.items().iter().map(|i| i.item_id.clone()).collect(),
        &reprs,
        model.pooling,
        model.params.hash(),
        model.vocab.hash(),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommendConfig {
    pub matching: MatchConfig,
    /// Drop items already in the history from the candidates.
    pub mask_history: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item_id: String,
    pub score: f64,
}

/// Sorts by score descending, ties by item id ascending.
pub fn rank_items(scores: &[f64], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    order
}

/// Scores of every indexed item for a chronological history. With history
/// masking on, every history item except `keep` scores `-inf`.
pub fn score_history(
    history: &[&ItemRecord],
    index: &ItemIndex,
    model: &Model,
    config: &RecommendConfig,
    keep: Option<usize>,
) -> Result<(MultiVectorRepr, Vec<f64>)> {
    let user = model.encode_sequence(history)?;
    let mut scores = batch_score(&user, index, &config.matching)?;
    if config.mask_history {
        let seen: HashSet<&str> = history.iter().map(|i| i.item_id.as_str()).collect();
        for (i, (s, id)) in scores.iter_mut().zip(index.ids()).enumerate() {
            if seen.contains(id.as_str()) && keep != Some(i) {
                *s = f64::NEG_INFINITY;
            }
        }
    }
    Ok((user, scores))
}

/// The `k` highest-scoring items for a chronological history.
pub fn recommend_topk(
    history: &[&ItemRecord],
    index: &ItemIndex,
    model: &Model,
    k: usize,
    config: &RecommendConfig,
) -> Result<Vec<Recommendation>> {
    Ok(recommend_explained(history, index, model, k, config)?.into_iter().map(|(r, _)| r).collect())
}

/// [`recommend_topk`] plus the per-attribute breakdown of each returned item.
pub fn recommend_explained(
    history: &[&ItemRecord],
    index: &ItemIndex,
    model: &Model,
    k: usize,
    config: &RecommendConfig,
) -> Result<Vec<(Recommendation, ScoreBreakdown)>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    index.check_compatible(model)?;
    let (user, scores) = score_history(history, index, model, config, None)?;
    rank_items(&scores, index.ids())
        .into_iter()
        .filter(|&i| scores[i] > f64::NEG_INFINITY)
        .take(k)
        .map(|i| {
            let breakdown = match_score(&user, &index.item_repr(i), &config.matching)?;
            Ok((Recommendation { item_id: index.ids()[i].clone(), score: scores[i] }, breakdown))
        })
        .collect()
}

/// Convenience hash for provenance records.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}
