//! Word-level vocabulary and encoder-input construction with attribute spans.
//!
//! A word is a maximal run of alphanumeric characters; every other
//! non-whitespace character is a token of its own. Text is lower-cased, so
//! `Category: Keyboard` becomes `category`, `:`, `keyboard`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributePair, Catalog, InteractionSequence, ItemRecord};
use crate::{sha256_hex, Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BOS: &str = "[BOS]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;

/// Splits text into lower-cased word and punctuation tokens.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_lowercase().collect());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[0] != PAD || tokens[1] != UNK || tokens[2] != BOS {
            return Err(Error::Format("vocabulary must start with [PAD], [UNK], [BOS]".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, ids implicit, special tokens first.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// SHA-256 of the serialized form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

/// Builds a vocabulary over raw texts. Words seen fewer than `min_freq` times
/// are left out (and later map to `[UNK]`). Ordering: frequency descending, then
/// lexicographic.
pub fn build_vocab_from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Result<Vocabulary> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in texts {
        for w in words(t) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("no tokens to build a vocabulary from".into()));
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens = vec![PAD.to_owned(), UNK.to_owned(), BOS.to_owned()];
    tokens.extend(kept.into_iter().map(|(w, _)| w).filter(|w| w != PAD && w != UNK && w != BOS));
    Vocabulary::from_tokens(tokens)
}

/// Vocabulary over every `key: value` attribute text in the catalog.
pub fn build_vocab(catalog: &Catalog, min_freq: usize) -> Result<Vocabulary> {
    if catalog.is_empty() {
        return Err(Error::Empty("cannot build a vocabulary from an empty catalog".into()));
    }
    let texts: Vec<String> = catalog.items().iter().flat_map(|i| i.attributes.iter().map(AttributePair::text)).collect();
    build_vocab_from_texts(texts.iter().map(String::as_str), min_freq)
}

/// Truncation limits for encoder inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Maximum value tokens per attribute; key tokens are never truncated.
    pub attr_cap: usize,
    /// Most recent items kept from a history.
    pub max_items: usize,
    /// Total token budget including `[BOS]`.
    pub max_tokens: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { attr_cap: 32, max_items: 50, max_tokens: 1024 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedAttribute {
    pub ids: Vec<u32>,
    /// Leading key tokens, including the `:` separator.
    pub key_len: usize,
}

/// Tokenizes `key: value`, keeping at most `cap` value tokens.
pub fn tokenize_attribute(attr: &AttributePair, vocab: &Vocabulary, cap: usize) -> TokenizedAttribute {
    let mut ids: Vec<u32> = words(&attr.key).iter().map(|w| vocab.id(w)).collect();
    ids.push(vocab.id(":"));
    let key_len = ids.len();
    ids.extend(words(&attr.value).iter().take(cap).map(|w| vocab.id(w)));
    TokenizedAttribute { ids, key_len }
}

/// Token range `[start, end)` of one attribute of one item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    /// 1-based position of the owning item in the user's history (`0` for a standalone item).
    pub item_pos: usize,
    pub attr: usize,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub token_ids: Vec<u32>,
    pub spans: Vec<Span>,
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// `[BOS]` followed by the item's attributes in catalog order.
pub fn build_item_input(item: &ItemRecord, vocab: &Vocabulary, attr_cap: usize) -> EncoderInput {
    let mut token_ids = vec![BOS_ID];
    let mut spans = Vec::with_capacity(item.attributes.len());
    for (j, attr) in item.attributes.iter().enumerate() {
        let t = tokenize_attribute(attr, vocab, attr_cap);
        let start = token_ids.len();
        token_ids.extend_from_slice(&t.ids);
        spans.push(Span { item_pos: 0, attr: j, start, end: token_ids.len() });
    }
    EncoderInput { token_ids, spans }
}

/// Serializes a chronological history newest-first. `history[k]` gets item
/// position `k + 1`. Only the last `max_items` items are kept, and the stream
/// is cut at `max_tokens`; partially cut attributes keep their surviving
/// tokens, fully cut ones get no span.
pub fn build_history_input(history: &[&ItemRecord], vocab: &Vocabulary, config: &TokenizerConfig) -> EncoderInput {
    let n = history.len();
    let keep_from = n.saturating_sub(config.max_items.max(1));
    let mut token_ids = vec![BOS_ID];
    let mut spans = Vec::new();
    'outer: for idx in (keep_from..n).rev() {
        for (j, attr) in history[idx].attributes.iter().enumerate() {
            let room = config.max_tokens.saturating_sub(token_ids.len());
            if room == 0 {
                break 'outer;
            }
            let t = tokenize_attribute(attr, vocab, config.attr_cap);
            let take = t.ids.len().min(room);
            let start = token_ids.len();
            token_ids.extend_from_slice(&t.ids[..take]);
            spans.push(Span { item_pos: idx + 1, attr: j, start, end: token_ids.len() });
        }
    }
    EncoderInput { token_ids, spans }
}

/// [`build_history_input`] for a sequence of catalog ids.
pub fn build_sequence_input(
    seq: &InteractionSequence,
    catalog: &Catalog,
    vocab: &Vocabulary,
    config: &TokenizerConfig,
) -> Result<EncoderInput> {
    let items = seq
        .item_ids
        .iter()
        .map(|id| catalog.get(id).ok_or_else(|| Error::UnknownItem(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(build_history_input(&items, vocab, config))
}
