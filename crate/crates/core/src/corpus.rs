//! Item catalogs, interaction sequences, core filtering, leave-one-out splits
//! and planted-preference synthetic data.
//!
//! Both on-disk formats are JSON lines:
//!
//! ```text
//! items.jsonl         {"item_id": "A", "attributes": [["Title", "Magic Mouse"], ["Brand", "Apple"]]}
//! interactions.jsonl  {"user_id": "u1", "item_ids": ["A", "B", "C"]}
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One `key: value` attribute. Serialized as a two-element array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct AttributePair {
    pub key: String,
    pub value: String,
}

impl AttributePair {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self { key: key.into(), value: value.into() }
    }

    /// The text the tokenizer sees, e.g. `Category: Keyboard`.
    pub fn text(&self) -> String {
        format!("{}: {}", self.key, self.value)
    }
}

impl From<(String, String)> for AttributePair {
    fn from((key, value): (String, String)) -> Self {
        Self { key, value }
    }
}

impl From<AttributePair> for (String, String) {
    fn from(a: AttributePair) -> Self {
        (a.key, a.value)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub attributes: Vec<AttributePair>,
}

impl ItemRecord {
    fn title(&self) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.key.eq_ignore_ascii_case("title"))
            .map(|a| a.value.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub user_id: String,
    pub item_ids: Vec<String>,
}

/// A schema-consistent set of items with id lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    items: Vec<ItemRecord>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    /// Validates that ids are unique and every item has the same attribute keys in the same order.
    pub fn new(items: Vec<ItemRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        if let Some(first) = items.first() {
            if first.attributes.is_empty() {
                return Err(Error::Schema(format!("item `{}` has no attributes", first.item_id)));
            }
            if let Some(a) = first.attributes.iter().find(|a| a.key.trim().is_empty()) {
                return Err(Error::Schema(format!("item `{}` has an empty attribute key ({a:?})", first.item_id)));
            }
        }
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                let schema = &items[0].attributes;
                let same = item.attributes.len() == schema.len()
                    && item.attributes.iter().zip(schema).all(|(a, b)| a.key == b.key);
                if !same {
                    return Err(Error::Schema(format!(
                        "item `{}` attribute keys {:?} differ from catalog schema {:?}",
                        item.item_id,
                        item.attributes.iter().map(|a| &a.key).collect::<Vec<_>>(),
                        schema.iter().map(|a| &a.key).collect::<Vec<_>>()
                    )));
                }
            }
            if by_id.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate item id `{}`", item.item_id)));
            }
        }
        Ok(Self { items, by_id })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemRecord> {
        self.by_id.get(item_id).map(|&i| &self.items[i])
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.by_id.get(item_id).copied()
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.by_id.contains_key(item_id)
    }

    /// Attribute keys shared by every item (empty for an empty catalog).
    pub fn schema(&self) -> Vec<&str> {
        self.items.first().map_or_else(Vec::new, |i| i.attributes.iter().map(|a| a.key.as_str()).collect())
    }

    /// Number of attributes per item, `m`.
    pub fn num_attributes(&self) -> usize {
        self.items.first().map_or(0, |i| i.attributes.len())
    }
}

/// Result of [`load_items`].
#[derive(Clone, Debug)]
pub struct LoadedItems {
    pub catalog: Catalog,
    pub dropped_untitled: usize,
}

pub fn load_items(path: impl AsRef<Path>) -> Result<LoadedItems> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_items(BufReader::new(file))
}

/// Parses JSON-lines items. Items whose title attribute is missing or blank are dropped.
pub fn parse_items(reader: impl BufRead) -> Result<LoadedItems> {
    let mut items = Vec::new();
    let mut dropped_untitled = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: ItemRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
        match item.title() {
            Some(t) if t.trim().is_empty() => dropped_untitled += 1,
            _ => items.push(item),
        }
    }
    Ok(LoadedItems { catalog: Catalog::new(items)?, dropped_untitled })
}

pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<InteractionSequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file))
}

pub fn parse_interactions(reader: impl BufRead) -> Result<Vec<InteractionSequence>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(&row).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_items(path: impl AsRef<Path>, catalog: &Catalog) -> Result<()> {
    write_jsonl(path.as_ref(), catalog.items())
}

pub fn write_interactions(path: impl AsRef<Path>, sequences: &[InteractionSequence]) -> Result<()> {
    write_jsonl(path.as_ref(), sequences)
}

/// Iterated k-core filter. Interactions with items absent from the catalog are
/// dropped first; then users and items with fewer than `k` interactions are
/// removed until nothing changes. Input order is preserved.
pub fn apply_core_filter(
    sequences: &[InteractionSequence],
    catalog: &Catalog,
    k: usize,
) -> (Vec<InteractionSequence>, Catalog) {
    let k = k.max(1);
    let mut seqs: Vec<InteractionSequence> = sequences
        .iter()
        .map(|s| InteractionSequence {
            user_id: s.user_id.clone(),
            item_ids: s.item_ids.iter().filter(|id| catalog.contains(id)).cloned().collect(),
        })
        .collect();
    let mut alive: HashSet<&str> = catalog.items().iter().map(|i| i.item_id.as_str()).collect();

    loop {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in &seqs {
            for id in &s.item_ids {
                *counts.entry(id.as_str()).or_default() += 1;
            }
        }
        let before_items = alive.len();
        alive.retain(|id| counts.get(id).copied().unwrap_or(0) >= k);
        let before_users = seqs.len();
        let mut changed = alive.len() != before_items;
        for s in &mut seqs {
            let len = s.item_ids.len();
            s.item_ids.retain(|id| alive.contains(id.as_str()));
            changed |= s.item_ids.len() != len;
        }
        seqs.retain(|s| s.item_ids.len() >= k);
        changed |= seqs.len() != before_users;
        if !changed {
            break;
        }
    }

    let items = catalog.items().iter().filter(|i| alive.contains(i.item_id.as_str())).cloned().collect();
    let filtered = Catalog::new(items).expect("a subset of a valid catalog is valid");
    (seqs, filtered)
}

/// One next-item prediction case: `prefix` (chronological) → `target`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub user_id: String,
    pub prefix: Vec<String>,
    pub target: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
    /// Sequences with fewer than three items.
    pub excluded: usize,
}

/// Leave-one-out split: the last item is the test target, the second-to-last the
/// validation target, and every earlier next-item step is a training example.
pub fn split_leave_one_out(sequences: &[InteractionSequence]) -> DatasetSplit {
    let mut split = DatasetSplit::default();
    for s in sequences {
        let n = s.item_ids.len();
        if n < 3 {
            split.excluded += 1;
            continue;
        }
        let ex = |end: usize| Example {
            user_id: s.user_id.clone(),
            prefix: s.item_ids[..end].to_vec(),
            target: s.item_ids[end].clone(),
        };
        for end in 1..n - 2 {
            split.train.push(ex(end));
        }
        split.valid.push(ex(n - 2));
        split.test.push(ex(n - 1));
    }
    split
}

/// Parameters of the planted-preference generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub brands: usize,
    pub categories: usize,
    pub items: usize,
    pub users: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a non-final history item carries the user's preferred value.
    pub sharpness: f64,
    /// Distinct words available for item titles.
    pub title_words: usize,
    /// Probability that an item after the first is restricted to values of the
    /// non-preferred attribute already present earlier in the sequence. The
    /// restriction is skipped when no unused item satisfies it.
    pub echo: f64,
    /// Ignore preferences entirely and sample items uniformly.
    pub uniform: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            brands: 16,
            categories: 16,
            items: 240,
            users: 600,
            min_len: 5,
            max_len: 8,
            sharpness: 0.9,
            title_words: 60,
            echo: 0.0,
            uniform: false,
            seed: 7,
        }
    }
}

/// Which attribute a synthetic user is loyal to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreferredKey {
    Brand,
    Category,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preference {
    pub key: PreferredKey,
    pub value: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub catalog: Catalog,
    pub sequences: Vec<InteractionSequence>,
    /// Hidden preference per user, `None` in uniform mode.
    pub preferences: Vec<Option<Preference>>,
}

pub const SYNTH_TITLE: usize = 0;
pub const SYNTH_BRAND: usize = 1;
pub const SYNTH_CATEGORY: usize = 2;

pub fn brand_name(b: usize) -> String {
    format!("brand{b:02}")
}

pub fn category_name(c: usize) -> String {
    format!("genre{c:02}")
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.brands == 0 || self.categories == 0 || self.items == 0 || self.users == 0 || self.title_words == 0 {
            return err("brands, categories, items, users and title_words must all be positive".into());
        }
        if !(0.0..=1.0).contains(&self.sharpness) {
            return err(format!("sharpness {} outside [0, 1]", self.sharpness));
        }
        if !(0.0..=1.0).contains(&self.echo) {
            return err(format!("echo {} outside [0, 1]", self.echo));
        }
        if self.min_len < 3 || self.min_len > self.max_len {
            return err(format!("sequence length range [{}, {}] must satisfy 3 <= min <= max", self.min_len, self.max_len));
        }
        if self.brands > self.items || self.categories > self.items {
            return err(format!(
                "{} brands / {} categories cannot all be preferred with only {} items",
                self.brands, self.categories, self.items
            ));
        }
        let per_value = (self.items / self.brands).min(self.items / self.categories);
        if !self.uniform && per_value < self.max_len {
            return err(format!(
                "each preferred value owns about {per_value} items, fewer than max_len {}",
                self.max_len
            ));
        }
        if self.items < self.max_len * 2 {
            return err(format!("{} items cannot fill sequences of length {}", self.items, self.max_len));
        }
        Ok(())
    }
}

/// Generates a catalog with `Title`/`Brand`/`Category` attributes and user
/// sequences that each follow one hidden attribute preference. The final item
/// of every sequence always carries the preferred value; earlier items carry it
/// with probability `sharpness`. Sequences never repeat an item.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut brands: Vec<usize> = (0..config.items).map(|i| i % config.brands).collect();
    let mut cats: Vec<usize> = (0..config.items).map(|i| i % config.categories).collect();
    brands.shuffle(&mut rng);
    cats.shuffle(&mut rng);

    let items: Vec<ItemRecord> = (0..config.items)
        .map(|i| {
            let w1 = rng.gen_range(0..config.title_words);
            let w2 = rng.gen_range(0..config.title_words);
            ItemRecord {
                item_id: format!("i{i:04}"),
                attributes: vec![
                    AttributePair::new("Title", format!("w{w1:03} w{w2:03}")),
                    AttributePair::new("Brand", brand_name(brands[i])),
                    AttributePair::new("Category", category_name(cats[i])),
                ],
            }
        })
        .collect();

    let mut sequences = Vec::with_capacity(config.users);
    let mut preferences = Vec::with_capacity(config.users);
    for u in 0..config.users {
        let len = rng.gen_range(config.min_len..=config.max_len);
        let mut used = vec![false; config.items];
        let mut seq = Vec::with_capacity(len);
        let mut seq_pos = Vec::with_capacity(len);
        let pref = if config.uniform {
            None
        } else if rng.gen_bool(0.5) {
            Some(Preference { key: PreferredKey::Brand, value: rng.gen_range(0..config.brands) })
        } else {
            Some(Preference { key: PreferredKey::Category, value: rng.gen_range(0..config.categories) })
        };
        let matches = |i: usize| match pref {
            Some(Preference { key: PreferredKey::Brand, value }) => brands[i] == value,
            Some(Preference { key: PreferredKey::Category, value }) => cats[i] == value,
            None => true,
        };
        for pos in 0..len {
            let want = match pref {
                None => None,
                Some(_) if pos + 1 == len => Some(true),
                Some(_) => Some(rng.gen_bool(config.sharpness)),
            };
            let mut pool: Vec<usize> =
                (0..config.items).filter(|&i| !used[i] && want.map_or(true, |w| matches(i) == w)).collect();
            if let Some(p) = pref {
                if pos > 0 && config.echo > 0.0 && rng.gen_bool(config.echo) {
                    let other = |i: usize| match p.key {
                        PreferredKey::Brand => cats[i],
                        PreferredKey::Category => brands[i],
                    };
                    let seen: Vec<usize> = seq_pos.iter().map(|&i| other(i)).collect();
                    let echoed: Vec<usize> = pool.iter().copied().filter(|&i| seen.contains(&other(i))).collect();
                    if !echoed.is_empty() {
                        pool = echoed;
                    }
                }
            }
            let &pick = pool
                .choose(&mut rng)
                .ok_or_else(|| Error::Config(format!("user {u}: no unused item left to sample")))?;
            used[pick] = true;
            seq_pos.push(pick);
            seq.push(items[pick].item_id.clone());
        }
        sequences.push(InteractionSequence { user_id: format!("u{u:04}"), item_ids: seq });
        preferences.push(pref);
    }

    Ok(SyntheticData { catalog: Catalog::new(items)?, sequences, preferences })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(user: &str, items: &[&str]) -> InteractionSequence {
        InteractionSequence { user_id: user.into(), item_ids: items.iter().map(|s| s.to_string()).collect() }
    }

    fn catalog_of(ids: &[&str]) -> Catalog {
        Catalog::new(
            ids.iter()
                .map(|id| ItemRecord {
                    item_id: id.to_string(),
                    attributes: vec![AttributePair::new("Title", format!("t {id}"))],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loads_keyed_attribute_item() {
        let line = r#"{"item_id":"A","attributes":[["Title","Magic Mouse"],["Brand","Apple"],["Category","Mouse"]]}"#;
        let loaded = parse_items(line.as_bytes()).unwrap();
        assert_eq!(loaded.catalog.len(), 1);
        assert_eq!(loaded.catalog.num_attributes(), 3);
        assert_eq!(loaded.catalog.schema(), vec!["Title", "Brand", "Category"]);
    }

    #[test]
    fn empty_file_is_empty_catalog() {
        let loaded = parse_items("".as_bytes()).unwrap();
        assert!(loaded.catalog.is_empty());
        assert_eq!(loaded.dropped_untitled, 0);
    }

    #[test]
    fn untitled_items_are_dropped_and_counted() {
        let text = [
            r#"{"item_id":"a","attributes":[["Title","x"],["Brand","b"]]}"#,
            r#"{"item_id":"b","attributes":[["Title",""],["Brand","b"]]}"#,
            r#"{"item_id":"c","attributes":[["Title","y"],["Brand",""]]}"#,
            r#"{"item_id":"d","attributes":[["Title","z"],["Brand","q"]]}"#,
            r#"{"item_id":"e","attributes":[["Title","w"],["Brand","q"]]}"#,
        ]
        .join("\n");
        let loaded = parse_items(text.as_bytes()).unwrap();
        assert_eq!(loaded.dropped_untitled, 1);
        assert_eq!(loaded.catalog.len(), 4);
        assert_eq!(loaded.catalog.get("c").unwrap().attributes[1].value, "");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"item_id\":\"a\",\"attributes\":[[\"Title\",\"x\"]]}\n\nnot json\n";
        match parse_items(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_schema_is_rejected() {
        let text = [
            r#"{"item_id":"a","attributes":[["Title","x"],["Brand","b"]]}"#,
            r#"{"item_id":"b","attributes":[["Brand","b"],["Title","y"]]}"#,
        ]
        .join("\n");
        assert!(matches!(parse_items(text.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn core_filter_k1_keeps_fully_used_input() {
        let cat = catalog_of(&["a", "b", "c"]);
        let seqs = vec![seq("u1", &["a", "b"]), seq("u2", &["c"])];
        let (out, c) = apply_core_filter(&seqs, &cat, 1);
        assert_eq!(out, seqs);
        assert_eq!(c, cat);
    }

    #[test]
    fn core_filter_single_short_user_empties() {
        let cat = catalog_of(&["a", "b", "c", "d"]);
        let (out, c) = apply_core_filter(&[seq("u", &["a", "b", "c", "d"])], &cat, 5);
        assert!(out.is_empty());
        assert!(c.is_empty());
    }

    /// Naive reference: remove every under-threshold user/item one round at a
    /// time, recounting from scratch, until stable.
    fn brute_core(seqs: &[InteractionSequence], k: usize) -> Vec<InteractionSequence> {
        let mut cur: Vec<InteractionSequence> = seqs.to_vec();
        loop {
            let mut next = Vec::new();
            let all: Vec<&String> = cur.iter().flat_map(|s| s.item_ids.iter()).collect();
            for s in &cur {
                let kept: Vec<String> =
                    s.item_ids.iter().filter(|id| all.iter().filter(|x| **x == *id).count() >= k).cloned().collect();
                if kept.len() >= k {
                    next.push(InteractionSequence { user_id: s.user_id.clone(), item_ids: kept });
                }
            }
            if next == cur {
                return cur;
            }
            cur = next;
        }
    }

    #[test]
    fn core_filter_matches_brute_force_fixpoint() {
        // 10 users over items a..h; `h` and `g` are rare and cascade.
        let users = [
            vec!["a", "b", "c", "d", "e"],
            vec!["a", "b", "c", "d", "e", "h"],
            vec!["a", "b", "c", "d", "e"],
            vec!["a", "b", "c", "d", "g"],
            vec!["a", "b", "c", "e", "g"],
            vec!["a", "b", "d", "e", "f", "f"],
            vec!["a", "c", "d", "e", "f"],
            vec!["b", "c", "d", "e", "f"],
            vec!["g", "h", "f", "a"],
            vec!["f", "b", "c", "d", "e"],
        ];
        let seqs: Vec<_> = users.iter().enumerate().map(|(i, u)| seq(&format!("u{i}"), u)).collect();
        let cat = catalog_of(&["a", "b", "c", "d", "e", "f", "g", "h"]);
        let (out, c) = apply_core_filter(&seqs, &cat, 5);
        assert_eq!(out, brute_core(&seqs, 5));
        assert!(!c.contains("g") && !c.contains("h"));
        // Fixpoint: applying again changes nothing.
        let (again, c2) = apply_core_filter(&out, &c, 5);
        assert_eq!(again, out);
        assert_eq!(c2, c);
    }

    #[test]
    fn split_minimal_and_four_item_sequences() {
        let s = split_leave_one_out(&[seq("u", &["a", "b", "c"])]);
        assert!(s.train.is_empty());
        assert_eq!(s.valid[0].prefix, vec!["a"]);
        assert_eq!(s.valid[0].target, "b");
        assert_eq!(s.test[0].prefix, vec!["a", "b"]);
        assert_eq!(s.test[0].target, "c");

        let s = split_leave_one_out(&[seq("u", &["a", "b", "c", "d"])]);
        assert_eq!(s.train.len(), 1);
        assert_eq!((s.train[0].prefix.clone(), s.train[0].target.clone()), (vec!["a".to_string()], "b".to_string()));
        assert_eq!(s.valid[0].target, "c");
        assert_eq!(s.test[0].target, "d");
    }

    #[test]
    fn short_sequences_are_excluded() {
        let s = split_leave_one_out(&[seq("u", &["a", "b"]), seq("v", &["a"]), seq("w", &["a", "b", "c"])]);
        assert_eq!(s.excluded, 2);
        assert_eq!(s.test.len(), 1);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig { users: 50, ..SynthConfig::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.sequences, b.sequences);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(generate_synthetic(&other).unwrap().sequences, a.sequences);
    }

    #[test]
    fn infeasible_synthetic_config_is_rejected() {
        let cfg = SynthConfig { brands: 100, items: 50, ..SynthConfig::default() };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig { brands: 60, items: 240, max_len: 8, ..SynthConfig::default() };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig { sharpness: 1.5, ..SynthConfig::default() };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }
}
