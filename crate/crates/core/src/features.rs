//! Mutual-information ranking of categorical user features against the
//! binary interaction label; the top-β become the bias-net inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{activity_bucket, Dataset, TrainingExample, ACTIVITY_FIELD};
use crate::error::{Error, Result};

/// `counts[value][label]` over a set of examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub feature: String,
    counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(feature: impl Into<String>, values: usize, labels: usize) -> Self {
        Self {
            feature: feature.into(),
            counts: vec![vec![0; labels]; values],
        }
    }

    pub fn from_counts(feature: impl Into<String>, counts: Vec<Vec<u64>>) -> Self {
        Self {
            feature: feature.into(),
            counts,
        }
    }

    pub fn observe(&mut self, value: usize, label: usize) {
        self.counts[value][label] += 1;
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn value_marginals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn label_marginals(&self) -> Vec<u64> {
        let labels = self.counts.first().map_or(0, Vec::len);
        (0..labels)
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transposed(&self) -> Self {
        let labels = self.counts.first().map_or(0, Vec::len);
        let counts = (0..labels)
            .map(|j| self.counts.iter().map(|r| r[j]).collect())
            .collect();
        Self {
            feature: self.feature.clone(),
            counts,
        }
    }
}

/// Plug-in mutual information in nats, with `0·ln 0 = 0`.
pub fn empirical_mi(table: &ContingencyTable) -> f64 {
    let n = table.total() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let rows = table.value_marginals();
    let cols = table.label_marginals();
    let mut mi = 0.0;
    for (x, row) in table.counts().iter().enumerate() {
        for (y, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * (c * n / (rows[x] as f64 * cols[y] as f64)).ln();
        }
    }
    mi.max(0.0)
}

/// One categorical feature observed per example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    pub cardinality: usize,
    pub values: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub mi: f64,
}

/// Selected bias features, MI non-increasing, at most β long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFeatureSet {
    pub beta: usize,
    pub label: String,
    pub selected: Vec<RankedFeature>,
    /// Every candidate with its score, in rank order.
    pub ranking: Vec<RankedFeature>,
}

impl BiasFeatureSet {
    pub fn names(&self) -> Vec<String> {
        self.selected.iter().map(|f| f.name.clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn contingency(column: &FeatureColumn, labels: &[u8]) -> ContingencyTable {
    let mut t = ContingencyTable::new(&column.name, column.cardinality, 2);
    for (&v, &l) in column.values.iter().zip(labels) {
        t.observe(v as usize, usize::from(l > 0));
    }
    t
}

/// Ranks candidates by MI (descending, ties by name) and keeps the top β.
pub fn select_bias_features(
    candidates: &[FeatureColumn],
    labels: &[u8],
    beta: usize,
) -> Result<BiasFeatureSet> {
    if beta == 0 {
        return Err(Error::Config("beta must be at least 1".into()));
    }
    if beta > candidates.len() {
        log::warn!(
            "beta = {beta} exceeds the {} candidate features; selecting all",
            candidates.len()
        );
    }
    let mut ranking: Vec<RankedFeature> = candidates
        .iter()
        .map(|c| RankedFeature {
            name: c.name.clone(),
            mi: empirical_mi(&contingency(c, labels)),
        })
        .collect();
    ranking.sort_by(|a, b| b.mi.total_cmp(&a.mi).then_with(|| a.name.cmp(&b.name)));
    Ok(BiasFeatureSet {
        beta,
        label: "binary interaction label (train positives + sampled negatives)".into(),
        selected: ranking.iter().take(beta).cloned().collect(),
        ranking,
    })
}

/// Candidate bias features for a dataset: every user profile field plus the
/// per-example activity bucket, observed on `examples`.
pub fn candidate_columns(ds: &Dataset, examples: &[TrainingExample]) -> Vec<FeatureColumn> {
    let mut cols: Vec<FeatureColumn> = ds
        .user_fields
        .iter()
        .map(|f| FeatureColumn {
            name: f.name.clone(),
            cardinality: f.vocab.len(),
            values: examples.iter().map(|e| f.values[e.user as usize]).collect(),
        })
        .collect();
    cols.push(FeatureColumn {
        name: ACTIVITY_FIELD.into(),
        cardinality: Dataset::activity_vocab().len(),
        values: examples
            .iter()
            .map(|e| activity_bucket(e.prefix as usize))
            .collect(),
    });
    cols
}
