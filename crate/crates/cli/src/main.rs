use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use attrec::corpus::{
    apply_core_filter, generate_synthetic, load_interactions, load_items, split_leave_one_out, write_interactions,
    write_items, Catalog, InteractionSequence, SynthConfig,
};
use attrec::encoder::{Checkpoint, Model};
use attrec::eval::{evaluate, EvalConfig};
use attrec::index::{build_index, file_hash, recommend_explained, ItemIndex, RecommendConfig};
use attrec::matching::{Aggregation, MatchConfig};
use attrec::pipeline::{self, RunConfig, ABLATION_GRID};
use attrec::tokenizer::Vocabulary;
use attrec::Error;
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

const ITEMS: &str = "items.jsonl";
const INTERACTIONS: &str = "interactions.jsonl";
const VOCAB: &str = "vocab.txt";
const INDEX: &str = "index.bin";

#[derive(Parser)]
#[command(name = "attrec", version, about = "Attribute-aware multi-vector sequential recommender")]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Run every parallel section on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load raw items and interactions, drop untitled items, k-core filter, write a dataset directory.
    Prepare {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long, env = "ATTREC_OUT", default_value = "attrec-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        core: usize,
    },
    /// Generate a planted-preference dataset directory.
    Synth {
        /// JSON generator settings; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "ATTREC_OUT", default_value = "attrec-out")]
        out: PathBuf,
    },
    /// Two-stage training; writes checkpoints, the frozen index, logs and reports.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON run settings; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from the small CPU preset instead of the full defaults.
        #[arg(long)]
        desk: bool,
        #[arg(long, env = "ATTREC_OUT", default_value = "attrec-out")]
        out: PathBuf,
    },
    /// Encode a catalog with a checkpoint and persist the index.
    Index {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-out metrics on a split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Persisted index; built from the checkpoint when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 50])]
        ks: Vec<usize>,
        #[arg(long, default_value = "max")]
        aggregation: Aggregation,
        #[arg(long)]
        mask_history: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-K items with per-attribute scores for each sequence of a JSON-lines file.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// JSON lines of `{"user_id", "item_ids"}`, oldest item first.
        #[arg(long)]
        sequences: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "max")]
        aggregation: Aggregation,
        #[arg(long)]
        mask_history: bool,
    },
    /// Train and test every pooling × aggregation variant.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        desk: bool,
        /// Also write the rows as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient, MaxSim, metric and loss oracles.
    Selfcheck {
        #[arg(long, default_value_t = 3)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = if cli.deterministic { 1 } else { cli.threads };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 1,
        Some(Error::Numerical(_)) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Prepare { items, interactions, out, core } => prepare(&items, &interactions, &out, core)?,
        Command::Synth { config, seed, out } => synth(config.as_deref(), seed, &out)?,
        Command::Train { data, config, desk, out } => train(&data, &run_config(config.as_deref(), desk)?, &out)?,
        Command::Index { checkpoint, data, out } => {
            let (catalog, _) = load_dataset(&data)?;
            let model = load_model(&checkpoint)?;
            if model.item_encoder.is_some() {
                return Err(Error::Config(format!(
                    "{} scores against a frozen index; index with the stage-1 checkpoint instead",
                    checkpoint.display()
                ))
                .into());
            }
            build_index(&catalog, &model)?.save(&out)?;
            println!("indexed {} items into {}", catalog.len(), out.display());
        }
        Command::Evaluate { checkpoint, index, data, split, ks, aggregation, mask_history, out } => {
            let (catalog, seqs) = load_dataset(&data)?;
            let split_data = split_leave_one_out(&seqs);
            let model = load_model(&checkpoint)?;
            let index = load_or_build_index(index.as_deref(), &checkpoint, &catalog, &model)?;
            let examples = match split.as_str() {
                "valid" => &split_data.valid,
                "test" => &split_data.test,
                "train" => &split_data.train,
                other => return Err(Error::Config(format!("unknown split `{other}` (train|valid|test)")).into()),
            };
            let config = EvalConfig {
                ks,
                matching: MatchConfig { aggregation, ..Default::default() },
                mask_history,
            };
            let mut report = evaluate(&model, &index, &catalog, examples, &split, &config)?;
            report.provenance = Some(json!({
                "checkpoint": file_hash(&checkpoint)?,
                "items": file_hash(data.join(ITEMS))?,
                "interactions": file_hash(data.join(INTERACTIONS))?,
                "run": Checkpoint::load(&checkpoint)?.provenance.and_then(|p| p.get("run").cloned()),
            }));
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!("{}", report.to_json()),
            }
        }
        Command::Recommend { checkpoint, index, data, sequences, k, aggregation, mask_history } => {
            let (catalog, _) = load_dataset(&data)?;
            let model = load_model(&checkpoint)?;
            let index = load_or_build_index(index.as_deref(), &checkpoint, &catalog, &model)?;
            let config =
                RecommendConfig { matching: MatchConfig { aggregation, ..Default::default() }, mask_history };
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            for seq in load_interactions(&sequences)? {
                writeln!(w, "{}", serde_json::to_string(&recommend(&catalog, &index, &model, &seq, k, &config)?)?)?;
            }
            w.flush()?;
        }
        Command::Ablate { data, config, desk, out } => {
            let run = run_config(config.as_deref(), desk)?;
            let (catalog, seqs) = load_dataset(&data)?;
            let split = split_leave_one_out(&seqs);
            let rows = pipeline::ablate(&catalog, &split, &run, &ABLATION_GRID, &mut |p, a, l| {
                eprintln!("{p}/{a} stage {} epoch {} valid ndcg@10 {:.4}", l.stage, l.epoch, l.valid_ndcg)
            })?;
            println!("{:<10} {:<5} {:>10} {:>10}", "pooling", "agg", "recall@10", "ndcg@10");
            for r in &rows {
                let (rc, nd) = (r.test.recall(10).unwrap_or(f64::NAN), r.test.ndcg(10).unwrap_or(f64::NAN));
                println!("{:<10} {:<5} {:>10.4} {:>10.4}", r.pooling.to_string(), r.aggregation.to_string(), rc, nd);
            }
            if let Some(path) = out {
                write_json(&path, &json!({ "run": run, "data": dataset_hashes(&data)?, "rows": rows }))?;
            }
        }
        Command::Selfcheck { seed } => {
            let results = attrec::selfcheck::run_all(seed);
            for r in &results {
                println!("{} {:<9} {:>7.2}s  {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn prepare(items: &Path, interactions: &Path, out: &Path, core: usize) -> anyhow::Result<()> {
    let loaded = load_items(items)?;
    let seqs = load_interactions(interactions)?;
    let raw_users = seqs.len();
    let (seqs, catalog) = apply_core_filter(&seqs, &loaded.catalog, core);
    let split = split_leave_one_out(&seqs);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_items(out.join(ITEMS), &catalog)?;
    write_interactions(out.join(INTERACTIONS), &seqs)?;
    let stats = json!({
        "raw_items": loaded.catalog.len() + loaded.dropped_untitled,
        "dropped_untitled": loaded.dropped_untitled,
        "raw_users": raw_users,
        "core": core,
        "users": seqs.len(),
        "items": catalog.len(),
        "interactions": seqs.iter().map(|s| s.item_ids.len()).sum::<usize>(),
        "train_examples": split.train.len(),
        "excluded_short": split.excluded,
        "inputs": { "items": file_hash(items)?, "interactions": file_hash(interactions)? },
    });
    write_json(&out.join("stats.json"), &stats)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = generate_synthetic(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_items(out.join(ITEMS), &data.catalog)?;
    write_interactions(out.join(INTERACTIONS), &data.sequences)?;
    let prefs: Vec<_> = data
        .sequences
        .iter()
        .zip(&data.preferences)
        .map(|(s, p)| json!({ "user_id": s.user_id, "preference": p }))
        .collect();
    write_json(&out.join("preferences.json"), &prefs)?;
    write_json(&out.join("synth.json"), &cfg)?;
    println!("{} items, {} users written to {}", data.catalog.len(), data.sequences.len(), out.display());
    Ok(())
}

fn train(data: &Path, run: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let (catalog, seqs) = load_dataset(data)?;
    let split = split_leave_one_out(&seqs);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("run.json"), run)?;
    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut log_err = None;
    let trained = pipeline::train(&catalog, &split, run, &mut |l| {
        eprintln!(
            "stage {} epoch {:>3} loss {:.4} valid recall@10 {:.4} ndcg@10 {:.4}",
            l.stage, l.epoch, l.train_loss, l.valid_recall, l.valid_ndcg
        );
        if let Err(e) = serde_json::to_string(l).map_err(anyhow::Error::from).and_then(|s| Ok(writeln!(log, "{s}")?)) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.context("writing the training log"));
    }
    log.flush()?;

    let provenance = json!({ "run": run, "data": dataset_hashes(data)? });
    trained.stage1.model.vocab.save(out.join(VOCAB))?;
    let mut ckpt = trained.stage1.model.to_checkpoint();
    ckpt.provenance = Some(json!({ "run": run, "data": provenance["data"], "stage": 1, "epoch": trained.stage1.best_epoch }));
    ckpt.optimizer = Some(serde_json::to_value(&trained.stage1.optimizer)?);
    ckpt.save(out.join("stage1_best.ckpt.json"))?;
    let mut ckpt = trained.model().to_checkpoint();
    ckpt.provenance = Some(json!({ "run": run, "data": provenance["data"], "stage": 2, "epoch": trained.stage2.best_epoch }));
    ckpt.optimizer = Some(serde_json::to_value(&trained.stage2.optimizer)?);
    ckpt.save(out.join("final.ckpt.json"))?;
    trained.index().save(out.join(INDEX))?;

    for name in ["valid", "test"] {
        let mut report = trained.evaluate(&catalog, &split, name, run)?;
        report.provenance = Some(provenance.clone());
        write_json(&out.join(format!("{name}_report.json")), &report)?;
        let metrics: Vec<String> = report.metrics.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
        println!("{name}: {}", metrics.join("  "));
    }
    Ok(())
}

#[derive(Serialize)]
struct AttributeExplanation {
    key: String,
    score: f64,
    /// History item whose vector matched best (max aggregation).
    matched_item: Option<String>,
    missing: bool,
}

#[derive(Serialize)]
struct Recommended {
    item_id: String,
    score: f64,
    attributes: Vec<AttributeExplanation>,
}

fn recommend(
    catalog: &Catalog,
    index: &ItemIndex,
    model: &Model,
    seq: &InteractionSequence,
    k: usize,
    config: &RecommendConfig,
) -> anyhow::Result<serde_json::Value> {
    let history = seq
        .item_ids
        .iter()
        .map(|id| catalog.get(id).ok_or_else(|| Error::UnknownItem(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let keys: Vec<String> = match index.slots() {
        1 => vec![index.pooling().to_string()],
        _ => catalog.schema().into_iter().map(str::to_owned).collect(),
    };
    let recs = recommend_explained(&history, index, model, k, config)?
        .into_iter()
        .map(|(r, b)| Recommended {
            item_id: r.item_id,
            score: r.score,
            attributes: keys
                .iter()
                .enumerate()
                .map(|(j, key)| AttributeExplanation {
                    key: key.clone(),
                    score: b.per_attribute[j],
                    matched_item: b.best_positions[j].and_then(|p| seq.item_ids.get(p.wrapping_sub(1)).cloned()),
                    missing: b.missing[j],
                })
                .collect(),
        })
        .collect::<Vec<_>>();
    Ok(json!({ "user_id": seq.user_id, "recommendations": recs }))
}

fn run_config(path: Option<&Path>, desk: bool) -> anyhow::Result<RunConfig> {
    let base = if desk { RunConfig::desk() } else { RunConfig::default() };
    let run = match path {
        Some(p) => {
            let mut merged = serde_json::to_value(&base)?;
            merge(&mut merged, read_json::<serde_json::Value>(p)?);
            serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => base,
    };
    run.validate()?;
    Ok(run)
}

/// Overlays `patch` onto `base`, object keys recursively.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn load_dataset(dir: &Path) -> anyhow::Result<(Catalog, Vec<InteractionSequence>)> {
    let loaded = load_items(dir.join(ITEMS))?;
    let seqs = load_interactions(dir.join(INTERACTIONS))?;
    for s in &seqs {
        if let Some(id) = s.item_ids.iter().find(|id| !loaded.catalog.contains(id)) {
            return Err(Error::UnknownItem(id.clone())).with_context(|| format!("user `{}`", s.user_id));
        }
    }
    Ok((loaded.catalog, seqs))
}

fn dataset_hashes(dir: &Path) -> anyhow::Result<serde_json::Value> {
    Ok(json!({ "items": file_hash(dir.join(ITEMS))?, "interactions": file_hash(dir.join(INTERACTIONS))? }))
}

/// Loads a checkpoint and the vocabulary stored next to it.
fn load_model(checkpoint: &Path) -> anyhow::Result<Model> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let vocab_path = checkpoint.parent().unwrap_or(Path::new(".")).join(VOCAB);
    let vocab = Vocabulary::load(&vocab_path).with_context(|| format!("vocabulary for {}", checkpoint.display()))?;
    Ok(Model::from_checkpoint(&ckpt, vocab)?)
}

/// Without an explicit path, a checkpoint with a frozen item encoder uses the
/// index saved next to it; any other checkpoint encodes the catalog afresh.
fn load_or_build_index(path: Option<&Path>, checkpoint: &Path, catalog: &Catalog, model: &Model) -> anyhow::Result<ItemIndex> {
    let index = match path {
        Some(p) => ItemIndex::load(p)?,
        None if model.item_encoder.is_some() => ItemIndex::load(checkpoint.parent().unwrap_or(Path::new(".")).join(INDEX))?,
        None => build_index(catalog, model)?,
    };
    index.check_compatible(model)?;
    if index.len() != catalog.len() || catalog.items().iter().any(|i| index.position(&i.item_id).is_none()) {
        bail!(Error::Mismatch("index items differ from the dataset catalog".into()));
    }
    Ok(index)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}
