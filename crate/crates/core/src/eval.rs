//! Leave-one-out ranking metrics.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, Example, ItemRecord};
use crate::encoder::{Model, PoolingKind};
use crate::index::{score_history, ItemIndex, RecommendConfig};
use crate::matching::MatchConfig;
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// 1-based rank of `target`: one plus the number of items scoring strictly
/// higher, plus the number scoring equal whose id sorts before the target's.
pub fn rank_of_target(scores: &[f64], ids: &[String], target: usize) -> usize {
    let t = scores[target];
    let tid = &ids[target];
    1 + scores
        .iter()
        .zip(ids)
        .enumerate()
        .filter(|&(i, (&s, id))| i != target && (s > t || (s == t && id < tid)))
        .count()
}

pub fn recall_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// `1 / log2(rank + 1)` inside the cut-off, zero outside.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub matching: MatchConfig,
    pub mask_history: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![5, 10, 20, 50], matching: MatchConfig::default(), mask_history: false }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("metric cut-offs must be a non-empty list of positive integers".into()));
        }
        self.matching.validate()
    }

    pub fn recommend_config(&self) -> RecommendConfig {
        RecommendConfig { matching: self.matching, mask_history: self.mask_history }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub split: String,
    pub users: usize,
    pub catalog_size: usize,
    pub pooling: PoolingKind,
    pub config: EvalConfig,
    /// `recall@K` and `ndcg@K` for every configured K.
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    /// Run settings and input hashes attached by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.metric(&format!("recall@{k}"))
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.metric(&format!("ndcg@{k}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON without wall-clock fields, for reproducibility comparisons.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.timing = None;
        serde_json::to_string(&c).expect("report serializes")
    }
}

/// Target rank of every example, in input order.
pub fn target_ranks(
    model: &Model,
    index: &ItemIndex,
    catalog: &Catalog,
    examples: &[Example],
    config: &RecommendConfig,
) -> Result<Vec<usize>> {
    index.check_compatible(model)?;
    examples
        .par_iter()
        .map(|ex| {
            let history = resolve(catalog, &ex.prefix)?;
            let target = index.position(&ex.target).ok_or_else(|| Error::UnknownItem(ex.target.clone()))?;
            let (_, scores) = score_history(&history, index, model, config, Some(target))?;
            if scores.iter().any(|s| s.is_nan()) {
                return Err(Error::Numerical(format!("NaN score for user `{}`", ex.user_id)));
            }
            Ok(rank_of_target(&scores, index.ids(), target))
        })
        .collect()
}

fn resolve<'a>(catalog: &'a Catalog, ids: &[String]) -> Result<Vec<&'a ItemRecord>> {
    ids.iter().map(|id| catalog.get(id).ok_or_else(|| Error::UnknownItem(id.clone()))).collect()
}

/// Mean Recall@K and NDCG@K over `examples`.
pub fn evaluate(
    model: &Model,
    index: &ItemIndex,
    catalog: &Catalog,
    examples: &[Example],
    split: &str,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty(format!("the {split} split has no users")));
    }
    let started = Instant::now();
    let ranks = target_ranks(model, index, catalog, examples, &config.recommend_config())?;
    let metrics = metrics_from_ranks(&ranks, &config.ks);
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        split: split.to_owned(),
        users: examples.len(),
        catalog_size: index.len(),
        pooling: model.pooling,
        config: config.clone(),
        metrics,
        timing: Some(Timing { seconds: started.elapsed().as_secs_f64() }),
        provenance: None,
    })
}

/// Averages the per-user metrics; sums run in input order.
pub fn metrics_from_ranks(ranks: &[usize], ks: &[usize]) -> BTreeMap<String, f64> {
    let n = ranks.len() as f64;
    let mut out = BTreeMap::new();
    for &k in ks {
        out.insert(format!("recall@{k}"), ranks.iter().map(|&r| recall_at_k(r, k)).sum::<f64>() / n);
        out.insert(format!("ndcg@{k}"), ranks.iter().map(|&r| ndcg_at_k(r, k)).sum::<f64>() / n);
    }
    out
}
