//! Attribute-wise late-interaction scoring.
//!
//! For each attribute slot `j`, the item's vector is compared by cosine with
//! every user vector of the same slot and the similarities are reduced by max
//! (or mean, for the ablation). The total score is the sum over slots.

use serde::{Deserialize, Serialize};

use crate::encoder::MultiVectorRepr;
use crate::index::ItemIndex;
use crate::tensor::{dot, norm};
use crate::{Error, Result};

/// Score contributed by a slot for which the user has no vectors.
pub const MISSING_SLOT_SCORE: f64 = -1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Config(format!("unknown aggregation `{other}` (max|mean)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub aggregation: Aggregation,
    pub eps: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { aggregation: Aggregation::Max, eps: 1e-8 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps > 0.0 && self.eps.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("cosine epsilon must be positive, got {}", self.eps)))
        }
    }
}

/// `u·v / (max(‖u‖, eps) · max(‖v‖, eps))`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64], eps: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine of {}-dim and {}-dim vectors", u.len(), v.len())));
    }
    Ok(cosine_unchecked(u, v, eps))
}

#[inline]
fn cosine_unchecked(u: &[f64], v: &[f64], eps: f64) -> f64 {
    (dot(u, v) / (norm(u).max(eps) * norm(v).max(eps))).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributeMatch {
    pub score: f64,
    /// Item position of the best-matching user vector (max aggregation only).
    pub best_pos: Option<usize>,
    /// The user had no vector for this slot.
    pub missing: bool,
}

/// Score of one slot. Max ties go to the most recent (largest) item position.
pub fn attribute_match(
    user: &MultiVectorRepr,
    item: &MultiVectorRepr,
    slot: usize,
    config: &MatchConfig,
) -> Result<AttributeMatch> {
    if user.dim != item.dim {
        return Err(Error::Shape(format!("user dim {} != item dim {}", user.dim, item.dim)));
    }
    let target = item
        .slot_entries(slot)
        .next()
        .ok_or_else(|| Error::Shape(format!("item has no vector for slot {slot}")))?;
    let mut best: Option<(f64, usize)> = None;
    let mut sum = 0.0;
    let mut count = 0usize;
    for e in user.slot_entries(slot) {
        let c = cosine(&e.vector, &target.vector, config.eps)?;
        sum += c;
        count += 1;
        best = match best {
            Some((b, p)) if b > c || (b == c && p >= e.pos) => Some((b, p)),
            _ => Some((c, e.pos)),
        };
    }
    if count == 0 {
        return Ok(AttributeMatch { score: MISSING_SLOT_SCORE, best_pos: None, missing: true });
    }
    Ok(match config.aggregation {
        Aggregation::Max => {
            let (score, pos) = best.expect("count > 0");
            AttributeMatch { score, best_pos: Some(pos), missing: false }
        }
        Aggregation::Mean => AttributeMatch { score: sum / count as f64, best_pos: None, missing: false },
    })
}

/// Per-slot scores and their sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub per_attribute: Vec<f64>,
    pub total: f64,
    pub best_positions: Vec<Option<usize>>,
    pub missing: Vec<bool>,
}

pub fn match_score(user: &MultiVectorRepr, item: &MultiVectorRepr, config: &MatchConfig) -> Result<ScoreBreakdown> {
    if user.slots != item.slots {
        return Err(Error::Shape(format!("user has {} slots, item has {}", user.slots, item.slots)));
    }
    let mut b = ScoreBreakdown {
        per_attribute: Vec::with_capacity(item.slots),
        total: 0.0,
        best_positions: Vec::with_capacity(item.slots),
        missing: Vec::with_capacity(item.slots),
    };
    for slot in 0..item.slots {
        let m = attribute_match(user, item, slot, config)?;
        b.per_attribute.push(m.score);
        b.best_positions.push(m.best_pos);
        b.missing.push(m.missing);
    }
    b.total = b.per_attribute.iter().sum();
    Ok(b)
}

/// Scores `user` against every item of `index`, in index order.
///
/// Each user vector is swept once over the slot's contiguous block, so the
/// work per slot is a dense matrix-vector product.
pub fn batch_score(user: &MultiVectorRepr, index: &ItemIndex, config: &MatchConfig) -> Result<Vec<f64>> {
    if user.dim != index.dim() {
        return Err(Error::Shape(format!("user dim {} != index dim {}", user.dim, index.dim())));
    }
    if user.slots != index.slots() {
        return Err(Error::Shape(format!("user has {} slots, index has {}", user.slots, index.slots())));
    }
    let n = index.len();
    let dim = index.dim();
    let mut total = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for slot in 0..index.slots() {
        let block = index.block(slot);
        let inv = index.inv_norms(slot);
        let mut count = 0usize;
        match config.aggregation {
            Aggregation::Max => acc.fill(f64::NEG_INFINITY),
            Aggregation::Mean => acc.fill(0.0),
        }
        for e in user.slot_entries(slot) {
            count += 1;
            let u_inv = 1.0 / norm(&e.vector).max(config.eps);
            for (i, a) in acc.iter_mut().enumerate() {
                let c = (dot(&e.vector, &block[i * dim..(i + 1) * dim]) * u_inv * inv[i]).clamp(-1.0, 1.0);
                match config.aggregation {
                    Aggregation::Max => *a = a.max(c),
                    Aggregation::Mean => *a += c,
                }
            }
        }
        if count == 0 {
            total.iter_mut().for_each(|t| *t += MISSING_SLOT_SCORE);
            continue;
        }
        let scale = match config.aggregation {
            Aggregation::Max => 1.0,
            Aggregation::Mean => 1.0 / count as f64,
        };
        for (t, a) in total.iter_mut().zip(&acc) {
            *t += a * scale;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ReprEntry;

    fn repr(slots: usize, entries: &[(usize, usize, Vec<f64>)]) -> MultiVectorRepr {
        MultiVectorRepr {
            dim: entries[0].2.len(),
            slots,
            entries: entries.iter().map(|(p, s, v)| ReprEntry { pos: *p, slot: *s, vector: v.clone() }).collect(),
            bos: None,
        }
    }

    #[test]
    fn cosine_closed_forms() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0], 1e-8).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0], 1e-8).unwrap(), 0.0);
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0], 1e-8).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(cosine(&[1.0], &[1.0, 0.0], 1e-8).is_err());
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0], 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn max_and_mean_on_exact_match() {
        let user = repr(1, &[(2, 0, vec![1.0, 0.0]), (1, 0, vec![0.0, 1.0])]);
        let item = repr(1, &[(0, 0, vec![1.0, 0.0])]);
        let m = attribute_match(&user, &item, 0, &MatchConfig::default()).unwrap();
        assert_eq!((m.score, m.best_pos), (1.0, Some(2)));
        let cfg = MatchConfig { aggregation: Aggregation::Mean, ..Default::default() };
        assert_eq!(attribute_match(&user, &item, 0, &cfg).unwrap().score, 0.5);
    }

    #[test]
    fn max_ties_prefer_recent_items() {
        let user = repr(1, &[(1, 0, vec![2.0, 0.0]), (5, 0, vec![1.0, 0.0]), (3, 0, vec![3.0, 0.0])]);
        let item = repr(1, &[(0, 0, vec![1.0, 0.0])]);
        assert_eq!(attribute_match(&user, &item, 0, &MatchConfig::default()).unwrap().best_pos, Some(5));
    }

    #[test]
    fn missing_slot_scores_sentinel() {
        let user = repr(2, &[(1, 0, vec![1.0, 0.0])]);
        let item = repr(2, &[(0, 0, vec![1.0, 0.0]), (0, 1, vec![0.0, 1.0])]);
        let b = match_score(&user, &item, &MatchConfig::default()).unwrap();
        assert_eq!(b.per_attribute, vec![1.0, -1.0]);
        assert_eq!(b.missing, vec![false, true]);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn single_slot_total_is_that_slot() {
        let user = repr(1, &[(1, 0, vec![0.3, 0.4])]);
        let item = repr(1, &[(0, 0, vec![0.5, -0.2])]);
        let b = match_score(&user, &item, &MatchConfig::default()).unwrap();
        assert_eq!(b.total, b.per_attribute[0]);
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let user = repr(1, &[(1, 0, vec![0.3, 0.4])]);
        let item = repr(2, &[(0, 0, vec![0.5, -0.2]), (0, 1, vec![0.5, -0.2])]);
        assert!(match_score(&user, &item, &MatchConfig::default()).is_err());
    }
}
