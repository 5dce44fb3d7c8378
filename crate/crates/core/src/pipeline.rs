//! End-to-end runs shared by the command line and the test suites.

use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, DatasetSplit};
use crate::encoder::{EncoderConfig, EncoderParams, Model, PoolingKind};
use crate::eval::{evaluate, EvalReport};
use crate::index::ItemIndex;
use crate::matching::Aggregation;
use crate::tokenizer::{build_vocab, TokenizerConfig};
use crate::training::{train_stage1, train_stage2, EpochLog, ItemGradients, Stage1Outcome, Stage2Outcome, TrainConfig};
use crate::{Error, Result};

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `vocab_size` is filled in from the data.
    pub encoder: EncoderConfig,
    pub tokenizer: TokenizerConfig,
    pub pooling: PoolingKind,
    /// Minimum token frequency for the vocabulary.
    pub min_freq: usize,
    pub train: TrainConfig,
    /// Cut-offs of the final reports.
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            tokenizer: TokenizerConfig::default(),
            pooling: PoolingKind::Attribute,
            min_freq: 1,
            train: TrainConfig::default(),
            ks: vec![5, 10, 20, 50],
        }
    }
}

impl RunConfig {
    /// Small encoder and short schedule for synthetic catalogs on a CPU.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig { hidden: 32, proj_dim: 16, layers: 2, heads: 2, ff_dim: 64, max_positions: 128, ..EncoderConfig::default() },
            tokenizer: TokenizerConfig { attr_cap: 8, max_items: 8, max_tokens: 128 },
            train: TrainConfig {
                lr: 3e-3,
                max_epochs: 8,
                item_gradients: ItemGradients::None,
                mask_history: true,
                ..TrainConfig::desk()
            },
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, pooling: PoolingKind, aggregation: Aggregation) -> Self {
        self.pooling = pooling;
        self.train.matching.aggregation = aggregation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        self.train.validate()?;
        self.train.eval_config(&self.ks).validate()
    }
}

/// Fresh model for `catalog`: vocabulary from the catalog, weights from `train.seed`.
pub fn build_model(catalog: &Catalog, run: &RunConfig) -> Result<Model> {
    run.validate()?;
    let vocab = build_vocab(catalog, run.min_freq)?;
    let enc = EncoderConfig { vocab_size: vocab.len(), ..run.encoder.clone() };
    let params = EncoderParams::init(&enc, run.train.seed)?;
    Model::new(params, vocab, run.tokenizer, run.pooling)
}

pub struct TrainedRun {
    pub stage1: Stage1Outcome,
    pub stage2: Stage2Outcome,
}

impl TrainedRun {
    /// Final history-side model, to be used with [`TrainedRun::index`].
    pub fn model(&self) -> &Model {
        &self.stage2.model
    }

    /// The frozen item index of stage 2.
    pub fn index(&self) -> &ItemIndex {
        &self.stage1.index
    }

    pub fn logs(&self) -> impl Iterator<Item = &EpochLog> {
        self.stage1.logs.iter().chain(&self.stage2.logs)
    }

    pub fn evaluate(&self, catalog: &Catalog, split: &DatasetSplit, name: &str, run: &RunConfig) -> Result<EvalReport> {
        let examples = match name {
            "valid" => &split.valid,
            "test" => &split.test,
            "train" => &split.train,
            other => return Err(Error::Config(format!("unknown split `{other}` (train|valid|test)"))),
        };
        evaluate(self.model(), self.index(), catalog, examples, name, &run.train.eval_config(&run.ks))
    }
}

/// Stage 1 followed by stage 2.
pub fn train(
    catalog: &Catalog,
    split: &DatasetSplit,
    run: &RunConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainedRun> {
    let model = build_model(catalog, run)?;
    let stage1 = train_stage1(model, catalog, split, &run.train, observer)?;
    let stage2 = train_stage2(&stage1, catalog, split, &run.train, observer)?;
    Ok(TrainedRun { stage1, stage2 })
}

/// Pooling and aggregation variants compared by `ablate`, full model first.
pub const ABLATION_GRID: [(PoolingKind, Aggregation); 6] = [
    (PoolingKind::Attribute, Aggregation::Max),
    (PoolingKind::Attribute, Aggregation::Mean),
    (PoolingKind::Item, Aggregation::Max),
    (PoolingKind::Item, Aggregation::Mean),
    (PoolingKind::Bos, Aggregation::Max),
    (PoolingKind::Bos, Aggregation::Mean),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pooling: PoolingKind,
    pub aggregation: Aggregation,
    pub best_valid_ndcg: f64,
    pub test: EvalReport,
}

/// Trains and tests every variant with otherwise identical settings.
pub fn ablate(
    catalog: &Catalog,
    split: &DatasetSplit,
    run: &RunConfig,
    variants: &[(PoolingKind, Aggregation)],
    observer: &mut dyn FnMut(PoolingKind, Aggregation, &EpochLog),
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&(pooling, aggregation)| {
            let cfg = run.clone().with_variant(pooling, aggregation);
            let trained = train(catalog, split, &cfg, &mut |l| observer(pooling, aggregation, l))?;
            Ok(AblationRow {
                pooling,
                aggregation,
                best_valid_ndcg: trained.stage2.best_valid_ndcg,
                test: trained.evaluate(catalog, split, "test", &cfg)?,
            })
        })
        .collect()
}
