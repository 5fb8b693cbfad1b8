//! Pipeline stages. Each `cmd_*` reads its inputs from and writes its
//! outputs to the run's output directory; the in-memory stage functions
//! they wrap are public so experiments can chain stages without disk I/O.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::cluster::{build_group_table, kmeans, GroupEmbeddingTable, GroupProvenance};
use crate::config::{DataSource, RunConfig};
use crate::container::hex_digest;
use crate::data::synthetic::{generate, SyntheticSpec};
use crate::data::{
    bundle, parse_movielens, parse_tsv_corpus, positive_examples, with_negatives, Corpus, Dataset,
    PositiveIndex, PrepareOptions,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, item_matrix, user_encodings, EvalReport};
use crate::features::{candidate_columns, select_bias_features, BiasFeatureSet};
use crate::model::{
    train, BaselineTwoTower, ColdWarmModel, EpochLog, FeatureEncoder, FeatureSchema, Recommender,
};
use crate::pretrain::{export_active_embeddings, pretrain_baseline};
use crate::tensor::{derive_seed, seeded_rng};

/// File layout of one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.bin")
    }
    pub fn baseline(&self) -> PathBuf {
        self.dir.join("baseline.ckpt")
    }
    pub fn groups(&self) -> PathBuf {
        self.dir.join("groups.ckpt")
    }
    pub fn bias_features(&self) -> PathBuf {
        self.dir.join("bias_features.json")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }
    pub fn train_log(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }
    pub fn pretrain_log(&self) -> PathBuf {
        self.dir.join("pretrain_log.jsonl")
    }
    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.dir.join("report.txt")
    }
    pub fn user_embeddings(&self) -> PathBuf {
        self.dir.join("user_embeddings.tsv")
    }
    pub fn item_embeddings(&self) -> PathBuf {
        self.dir.join("item_embeddings.tsv")
    }
    pub fn config_snapshot(&self) -> PathBuf {
        self.dir.join("config.json")
    }
}

fn require(stage: &'static str, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { stage, path })
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out += &serde_json::to_string(r)?;
        out.push('\n');
    }
    Ok(out)
}

pub fn load_corpus(source: &DataSource, seed: u64) -> Result<Corpus> {
    match source {
        DataSource::Movielens { dir } => {
            let file = |name: &str| -> Result<PathBuf> {
                let p = dir.join(name);
                if p.exists() {
                    Ok(p)
                } else {
                    Err(Error::io(&p, std::io::Error::from(std::io::ErrorKind::NotFound)))
                }
            };
            parse_movielens(&file("ratings.dat")?, &file("users.dat")?, &file("movies.dat")?)
        }
        DataSource::Tsv {
            interactions,
            user_features,
            item_features,
        } => parse_tsv_corpus(interactions, user_features.as_deref(), item_features.as_deref()),
        DataSource::Synthetic {
            users,
            items,
            groups,
            min_interactions,
            max_interactions,
            affinity,
        } => Ok(generate(
            &SyntheticSpec {
                users: *users,
                items: *items,
                groups: *groups,
                min_interactions: *min_interactions,
                max_interactions: *max_interactions,
                affinity: *affinity,
            },
            derive_seed(seed, "synthetic"),
        )),
    }
}

pub fn prepare_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let corpus = load_corpus(&cfg.data, cfg.seed)?;
    let options = PrepareOptions {
        thresholds: cfg.thresholds,
        cold_simulation_fraction: cfg.cold_simulation_fraction,
        seed: cfg.seed,
    };
    Dataset::from_corpus(&corpus, &options, &mut seeded_rng(derive_seed(cfg.seed, "prepare")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub interactions: usize,
    pub train: usize,
    pub test: usize,
    pub users: usize,
    pub items: usize,
    pub simulated_cold_users: usize,
    pub dropped_interactions: usize,
    pub cohorts: BTreeMap<String, usize>,
}

impl PrepareSummary {
    pub fn of(ds: &Dataset) -> Self {
        let sim = &ds.protocol.cold_simulation;
        Self {
            interactions: ds.train.len() + ds.test.len() + sim.dropped_interactions,
            train: ds.train.len(),
            test: ds.test.len(),
            users: ds.n_users(),
            items: ds.n_items(),
            simulated_cold_users: sim.users.len(),
            dropped_interactions: sim.dropped_interactions,
            cohorts: ds
                .cohort_counts()
                .into_iter()
                .map(|(c, n)| (c.as_str().to_string(), n))
                .collect(),
        }
    }
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    let art = Artifacts::new(&cfg.output_dir);
    ensure_dir(&art.dir)?;
    let ds = prepare_dataset(cfg)?;
    bundle::save(&ds, &art.dataset())?;
    cfg.save(&art.config_snapshot())?;
    Ok(PrepareSummary::of(&ds))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let art = Artifacts::new(&cfg.output_dir);
    bundle::load(&require("prepare", art.dataset())?)
}

pub fn pretrain(cfg: &RunConfig, ds: &Dataset) -> Result<(BaselineTwoTower, Vec<EpochLog>)> {
    let schema = FeatureSchema::from_dataset(ds, &[])?;
    let encoder = FeatureEncoder::new(ds, &schema, cfg.history_cap);
    pretrain_baseline(&encoder, schema.clone(), cfg.baseline_config(), &cfg.pretrain_options())
}

fn provenance(cfg: &RunConfig, stage: &str) -> serde_json::Value {
    serde_json::json!({ "stage": stage, "seed": cfg.seed, "config": cfg })
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<Vec<EpochLog>> {
    let art = Artifacts::new(&cfg.output_dir);
    let ds = load_dataset(cfg)?;
    let (model, logs) = pretrain(cfg, &ds)?;
    Checkpoint::Baseline(model).save(&art.baseline(), provenance(cfg, "pretrain"))?;
    write_text(&art.pretrain_log(), &jsonl(&logs)?)?;
    Ok(logs)
}

/// Clusters the active users' baseline embeddings into `E_ug`.
pub fn build_groups(
    cfg: &RunConfig,
    ds: &Dataset,
    baseline: &BaselineTwoTower,
    checkpoint_digest: String,
) -> Result<GroupEmbeddingTable> {
    let encoder = FeatureEncoder::new(ds, &baseline.schema, cfg.history_cap);
    let active = export_active_embeddings(baseline, &encoder)?;
    let options = cfg.kmeans_options();
    if active.users.len() < options.m {
        return Err(Error::Data(format!(
            "m = {} exceeds the {} active users; lower `m` or `thresholds.warm_max`",
            options.m,
            active.users.len()
        )));
    }
    let mut rng = seeded_rng(derive_seed(cfg.seed, "kmeans"));
    let result = kmeans(&active.embeddings, &options, &mut rng)?;
    let (table, sizes) = build_group_table(&result.assignments, &active.embeddings, options.m);
    Ok(GroupEmbeddingTable {
        table,
        sizes,
        provenance: GroupProvenance {
            pretrain_checkpoint: checkpoint_digest,
            m: options.m,
            seed: cfg.seed,
            points: active.users.len(),
            iterations: result.iterations,
            objective: result.objective.last().copied().unwrap_or(0.0),
        },
    })
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<GroupEmbeddingTable> {
    let art = Artifacts::new(&cfg.output_dir);
    let ds = load_dataset(cfg)?;
    let path = require("pretrain", art.baseline())?;
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let baseline = match Checkpoint::load(&path)?.0 {
        Checkpoint::Baseline(m) => m,
        other => {
            return Err(Error::Corrupt(format!(
                "{} holds a `{}` checkpoint, expected a baseline",
                path.display(),
                other.kind()
            )))
        }
    };
    let groups = build_groups(cfg, &ds, &baseline, hex_digest(&bytes))?;
    groups.save(&art.groups())?;
    Ok(groups)
}

pub fn select_features(cfg: &RunConfig, ds: &Dataset) -> Result<BiasFeatureSet> {
    let index = PositiveIndex::from_dataset(ds);
    let mut rng = seeded_rng(derive_seed(cfg.seed, "select-features"));
    let examples = with_negatives(&positive_examples(ds), cfg.negatives, ds.n_items(), &index, &mut rng)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    select_bias_features(&candidate_columns(ds, &examples), &labels, cfg.beta)
}

pub fn cmd_select_features(cfg: &RunConfig) -> Result<BiasFeatureSet> {
    let art = Artifacts::new(&cfg.output_dir);
    let ds = load_dataset(cfg)?;
    let set = select_features(cfg, &ds)?;
    set.save(&art.bias_features())?;
    Ok(set)
}

/// Builds the Cold & Warm model from its upstream artifacts and trains it.
pub fn train_model(
    cfg: &RunConfig,
    ds: &Dataset,
    groups: &GroupEmbeddingTable,
    features: &BiasFeatureSet,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(ColdWarmModel, Vec<EpochLog>)> {
    let schema = FeatureSchema::from_dataset(ds, &features.names())?;
    let mut rng = seeded_rng(derive_seed(cfg.seed, "coldwarm-init"));
    let mut model = ColdWarmModel::new(cfg.model_config(), schema.clone(), groups.table.clone(), &mut rng)?;
    let encoder = FeatureEncoder::new(ds, &schema, cfg.history_cap);
    let logs = train(&mut model, &encoder, &cfg.main_train_options(), &cfg.objective(), on_epoch)?;
    Ok((model, logs))
}

pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
    let art = Artifacts::new(&cfg.output_dir);
    let ds = load_dataset(cfg)?;
    let groups = GroupEmbeddingTable::load(&require("cluster", art.groups())?)?;
    let features = BiasFeatureSet::load(&require("select-features", art.bias_features())?)?;
    let (model, logs) = train_model(cfg, &ds, &groups, &features, on_epoch)?;
    let prov = serde_json::json!({
        "stage": "train",
        "seed": cfg.seed,
        "config": cfg,
        "groups": groups.provenance,
        "bias_features": features.names(),
    });
    Checkpoint::ColdWarm(model).save(&art.model(), prov)?;
    write_text(&art.train_log(), &jsonl(&logs)?)?;
    Ok(logs)
}

fn schema_of(ckpt: &Checkpoint) -> &FeatureSchema {
    match ckpt {
        Checkpoint::ColdWarm(m) => &m.schema,
        Checkpoint::Baseline(m) => &m.schema,
    }
}

fn check_compatible(schema: &FeatureSchema, ds: &Dataset) -> Result<()> {
    let expected = FeatureSchema::from_dataset(ds, &[])?;
    if schema.item_rows != expected.item_rows
        || schema.user_fields != expected.user_fields
        || schema.item_fields != expected.item_fields
    {
        return Err(Error::Config(
            "checkpoint was built for a different dataset bundle".into(),
        ));
    }
    Ok(())
}

pub fn evaluate_checkpoint(cfg: &RunConfig, ds: &Dataset, ckpt: &Checkpoint) -> Result<EvalReport> {
    let schema = schema_of(ckpt);
    check_compatible(schema, ds)?;
    let encoder = FeatureEncoder::new(ds, schema, cfg.history_cap);
    let options = cfg.eval_options();
    match ckpt {
        Checkpoint::ColdWarm(m) => evaluate(m, "cold_warm", &encoder, &options),
        Checkpoint::Baseline(m) => evaluate(m, "baseline_two_tower", &encoder, &options),
    }
}

/// Evaluates `checkpoint` (the trained model by default) and writes the
/// JSON and text reports.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let art = Artifacts::new(&cfg.output_dir);
    let ds = load_dataset(cfg)?;
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => require("train", art.model())?,
    };
    let (ckpt, _) = Checkpoint::load(&path)?;
    let report = evaluate_checkpoint(cfg, &ds, &ckpt)?;
    report.save_json(&art.report_json())?;
    write_text(&art.report_txt(), &report.to_table())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub users: usize,
    pub items: usize,
    pub user_path: PathBuf,
    pub item_path: PathBuf,
}

/// 17 significant digits, enough to round-trip any `f64`.
fn push_row(out: &mut String, id: &str, values: &[f64]) {
    out.push_str(id);
    for v in values {
        let _ = write!(out, "\t{v:.16e}");
    }
    out.push('\n');
}

fn export_with<R: Recommender>(model: &R, encoder: &FeatureEncoder<'_>, art: &Artifacts) -> Result<ExportSummary> {
    let ds = encoder.dataset();
    let users = user_encodings(model, encoder)?;
    let mut text = String::new();
    for u in ds.user_indices() {
        let enc = users[u as usize].as_ref().expect("user row");
        push_row(&mut text, ds.users.decode(u).unwrap_or(""), &enc.e_u);
    }
    write_text(&art.user_embeddings(), &text)?;
    let items = item_matrix(model, encoder)?;
    let mut text = String::new();
    for i in ds.catalog() {
        push_row(&mut text, ds.items.decode(i).unwrap_or(""), items.row(i as usize));
    }
    write_text(&art.item_embeddings(), &text)?;
    Ok(ExportSummary {
        users: ds.n_users(),
        items: ds.n_items(),
        user_path: art.user_embeddings(),
        item_path: art.item_embeddings(),
    })
}

/// Writes serving-time user embeddings (gate-mixed for the Cold & Warm
/// model) and item embeddings as TSV: id followed by d values.
pub fn cmd_export(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ExportSummary> {
    let art = Artifacts::new(&cfg.output_dir);
    let ds = load_dataset(cfg)?;
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => require("train", art.model())?,
    };
    let (ckpt, _) = Checkpoint::load(&path)?;
    let schema = schema_of(&ckpt);
    check_compatible(schema, &ds)?;
    let encoder = FeatureEncoder::new(&ds, schema, cfg.history_cap);
    match &ckpt {
        Checkpoint::ColdWarm(m) => export_with(m, &encoder, &art),
        Checkpoint::Baseline(m) => export_with(m, &encoder, &art),
    }
}

/// Parses an exported TSV back into `(id, values)` rows.
pub fn read_embedding_tsv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let mut parts = line.split('\t');
            let id = parts.next().unwrap_or_default().to_string();
            let values = parts
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        message: format!("bad value `{v}`: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id, values))
        })
        .collect()
}
