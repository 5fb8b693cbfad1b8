//! Brute-force top-K retrieval and per-cohort metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::data::{sample_negatives, Cohort, PositiveIndex, TrainingExample};
use crate::error::{Error, Result};
use crate::model::{FeatureEncoder, Recommender, UserEncoding};
use crate::tensor::{cosine, derive_seed, dot, seeded_rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub item: u32,
    pub score: f64,
}

/// Top `k` of `(item, score)` pairs: score descending, ties by item index
/// ascending.
pub fn top_k_from_scores(mut scored: Vec<Ranked>, k: usize) -> Vec<Ranked> {
    // `+ 0.0` maps -0.0 to 0.0 so that signed zeros tie.
    let cmp = |a: &Ranked, b: &Ranked| {
        (b.score + 0.0)
            .total_cmp(&(a.score + 0.0))
            .then(a.item.cmp(&b.item))
    };
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored
}

/// Exact top-K over item rows `1..items.rows()` by inner product (or cosine),
/// skipping the sorted `exclude` list.
pub fn retrieve_top_k(
    user: &[f64],
    items: &Tensor,
    exclude: &[u32],
    k: usize,
    cosine_scores: bool,
) -> Vec<Ranked> {
    let scored = (1..items.rows() as u32)
        .filter(|i| exclude.binary_search(i).is_err())
        .map(|item| {
            let row = items.row(item as usize);
            let score = if cosine_scores {
                cosine(user, row).value
            } else {
                dot(user, row)
            };
            Ranked { item, score }
        })
        .collect();
    top_k_from_scores(scored, k)
}

/// 1-based rank of `target` in `ranking`.
fn rank_of(ranking: &[u32], target: u32) -> Option<usize> {
    ranking.iter().position(|&i| i == target).map(|p| p + 1)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Fraction of users whose target is in their top `k`. `None` without users.
pub fn hit_rate_at_k(rankings: &[Vec<u32>], targets: &[u32], k: usize) -> Option<f64> {
    mean(rankings.iter().zip(targets).map(|(r, &t)| {
        let hit = rank_of(&r[..k.min(r.len())], t).is_some();
        f64::from(u8::from(hit))
    }))
}

/// Binary-relevance NDCG with a single target: `1/log2(1 + rank)` inside the
/// top `k`, else 0 (the ideal DCG is 1).
pub fn ndcg_at_k(rankings: &[Vec<u32>], targets: &[u32], k: usize) -> Option<f64> {
    mean(rankings.iter().zip(targets).map(|(r, &t)| {
        match rank_of(&r[..k.min(r.len())], t) {
            Some(rank) => 1.0 / ((1 + rank) as f64).log2(),
            None => 0.0,
        }
    }))
}

/// Mann-Whitney AUC with tied scores counted as one half. `None` unless both
/// classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&o| labels[o]).count();
        rank_sum += avg * pos_in_tie as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Some(u / (p * negatives as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub hr_ks: Vec<usize>,
    pub ndcg_ks: Vec<usize>,
    /// Sampled negatives per positive in the AUC pairs.
    pub auc_negatives: usize,
    /// Train events per user entering the train-split AUC.
    pub auc_train_positives: usize,
    pub cosine_serving: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            hr_ks: vec![50, 100],
            ndcg_ks: vec![10, 50],
            auc_negatives: 4,
            auc_train_positives: 10,
            cosine_serving: false,
            seed: 0,
        }
    }
}

/// AUC of the mixed model and of each expert head over one set of pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AucSet {
    pub pairs: usize,
    pub model: Option<f64>,
    pub cold_expert: Option<f64>,
    pub warm_expert: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    /// `full`, `cold`, `warm` or `active`.
    pub cohort: String,
    pub users: usize,
    pub test_users: usize,
    pub hr: BTreeMap<usize, Option<f64>>,
    pub ndcg: BTreeMap<usize, Option<f64>>,
    /// Held-out target plus sampled negatives, serving-time user view.
    pub auc_test: AucSet,
    /// Train events plus sampled negatives, training-time user view.
    pub auc_train: AucSet,
    pub mean_w_cold: Option<f64>,
    pub mean_w_warm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub items: usize,
    pub options: EvalOptions,
    pub cohorts: Vec<CohortReport>,
}

impl EvalReport {
    pub fn cohort(&self, name: &str) -> Option<&CohortReport> {
        self.cohorts.iter().find(|c| c.cohort == name)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Plain-text table, one row per cohort.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut header = format!("{:<8} {:>6}", "cohort", "users");
        for k in &self.options.hr_ks {
            header += &format!(" {:>8}", format!("HR@{k}"));
        }
        for k in &self.options.ndcg_ks {
            header += &format!(" {:>8}", format!("NDCG@{k}"));
        }
        header += &format!(
            " {:>8} {:>8} {:>8} {:>8} {:>8}",
            "AUC", "AUCc/tr", "AUCw/tr", "w_cold", "w_warm"
        );
        let mut out = format!("model: {}\n{header}\n", self.model);
        for c in &self.cohorts {
            let mut line = format!("{:<8} {:>6}", c.cohort, c.users);
            for k in &self.options.hr_ks {
                line += &format!(" {:>8}", fmt(c.hr.get(k).copied().flatten()));
            }
            for k in &self.options.ndcg_ks {
                line += &format!(" {:>8}", fmt(c.ndcg.get(k).copied().flatten()));
            }
            let _ = writeln!(
                out,
                "{line} {:>8} {:>8} {:>8} {:>8} {:>8}",
                fmt(c.auc_test.model),
                fmt(c.auc_train.cold_expert),
                fmt(c.auc_train.warm_expert),
                fmt(c.mean_w_cold),
                fmt(c.mean_w_warm)
            );
        }
        out
    }
}

/// Logits of one labelled pair under the mixed model and each expert head.
#[derive(Debug, Clone, Copy)]
struct PairLogits {
    user: u32,
    label: bool,
    model: f64,
    cold: Option<f64>,
    warm: Option<f64>,
}

fn pair_logits(tau: f64, enc: &UserEncoding, user: u32, e_i: &[f64], label: bool) -> PairLogits {
    let b = enc.bias_score;
    let head = |e: &[f64]| tau * cosine(e, e_i).value + b;
    PairLogits {
        user,
        label,
        model: head(&enc.e_u),
        cold: enc.experts.as_ref().map(|x| head(&x.e_cold)),
        warm: enc.experts.as_ref().map(|x| head(&x.e_warm)),
    }
}

fn auc_set<'a>(pairs: impl Iterator<Item = &'a PairLogits> + Clone) -> AucSet {
    let labels: Vec<bool> = pairs.clone().map(|p| p.label).collect();
    let col = |f: &dyn Fn(&PairLogits) -> Option<f64>| -> Option<f64> {
        let scores: Option<Vec<f64>> = pairs.clone().map(f).collect();
        scores.and_then(|s| auc(&s, &labels))
    };
    AucSet {
        pairs: labels.len(),
        model: col(&|p| Some(p.model)),
        cold_expert: col(&|p| p.cold),
        warm_expert: col(&|p| p.warm),
    }
}

/// Item embeddings for every item row, in row order.
pub fn item_matrix<R: Recommender>(model: &R, encoder: &FeatureEncoder<'_>) -> Result<Tensor> {
    let items = encoder.items();
    let mut data = Vec::new();
    let mut d = 0;
    for it in items {
        let v = model.encode_item(it)?;
        d = v.len();
        data.extend(v);
    }
    Tensor::from_vec(items.len(), d, data)
}

/// Serving-time encodings of every user row (row 0 is the OOV user).
pub fn user_encodings<R: Recommender>(
    model: &R,
    encoder: &FeatureEncoder<'_>,
) -> Result<Vec<Option<UserEncoding>>> {
    let ds = encoder.dataset();
    let mut out = vec![None];
    for u in ds.user_indices() {
        out.push(Some(model.encode_user(&encoder.user(u))?));
    }
    Ok(out)
}

/// Retrieval metrics, AUCs and gate statistics for the full population and
/// each cohort.
pub fn evaluate<R: Recommender>(
    model: &R,
    name: &str,
    encoder: &FeatureEncoder<'_>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let ds = encoder.dataset();
    let max_k = options
        .hr_ks
        .iter()
        .chain(&options.ndcg_ks)
        .copied()
        .max()
        .unwrap_or(0);
    if max_k > ds.n_items() {
        return Err(Error::Config(format!(
            "K = {max_k} exceeds the catalog of {} items",
            ds.n_items()
        )));
    }
    let tau = model.tau();
    let items = item_matrix(model, encoder)?;
    let users = user_encodings(model, encoder)?;
    let index = PositiveIndex::from_dataset(ds);

    let mut rankings: Vec<(u32, Vec<u32>, u32)> = Vec::new();
    for event in &ds.test {
        let enc = users[event.user as usize].as_ref().expect("user row");
        let ranked = retrieve_top_k(&enc.e_u, &items, index.items(event.user), max_k, options.cosine_serving);
        rankings.push((event.user, ranked.iter().map(|r| r.item).collect(), event.item));
    }

    let mut rng = seeded_rng(derive_seed(options.seed, "auc-test"));
    let mut test_pairs = Vec::new();
    for event in &ds.test {
        let enc = users[event.user as usize].as_ref().expect("user row");
        test_pairs.push(pair_logits(tau, enc, event.user, items.row(event.item as usize), true));
        let probe = TrainingExample {
            user: event.user,
            item: event.item,
            label: 1,
            prefix: 0,
        };
        for neg in sample_negatives(&probe, options.auc_negatives + 1, ds.n_items(), &index, &mut rng)?
            .into_iter()
            .filter(|n| n.item != event.item)
            .take(options.auc_negatives)
        {
            test_pairs.push(pair_logits(tau, enc, event.user, items.row(neg.item as usize), false));
        }
    }

    let mut rng = seeded_rng(derive_seed(options.seed, "auc-train"));
    let mut train_pairs = Vec::new();
    for u in ds.user_indices() {
        let train = ds.train_items(u);
        if train.is_empty() {
            continue;
        }
        let take = options.auc_train_positives.min(train.len());
        let mut positions = sample_indices(&mut rng, train.len(), take).into_vec();
        positions.sort_unstable();
        for pos in positions {
            let enc = model.encode_user(&encoder.user_at(u, pos))?;
            let probe = TrainingExample {
                user: u,
                item: train[pos],
                label: 1,
                prefix: pos as u32,
            };
            train_pairs.push(pair_logits(tau, &enc, u, items.row(train[pos] as usize), true));
            for neg in sample_negatives(&probe, options.auc_negatives, ds.n_items(), &index, &mut rng)? {
                train_pairs.push(pair_logits(tau, &enc, u, items.row(neg.item as usize), false));
            }
        }
    }

    let cohorts: Vec<(&str, Option<Cohort>)> = std::iter::once(("full", None))
        .chain(Cohort::ALL.iter().map(|&c| (c.as_str(), Some(c))))
        .collect();
    let mut reports = Vec::new();
    for (label, cohort) in cohorts {
        let member = |u: u32| cohort.is_none_or(|c| ds.cohort(u) == c);
        let members: Vec<u32> = ds.user_indices().filter(|&u| member(u)).collect();
        let (ranks, targets): (Vec<Vec<u32>>, Vec<u32>) = rankings
            .iter()
            .filter(|(u, _, _)| member(*u))
            .map(|(_, r, t)| (r.clone(), *t))
            .unzip();
        let hr = options
            .hr_ks
            .iter()
            .map(|&k| (k, hit_rate_at_k(&ranks, &targets, k)))
            .collect();
        let ndcg = options
            .ndcg_ks
            .iter()
            .map(|&k| (k, ndcg_at_k(&ranks, &targets, k)))
            .collect();
        let weights: Vec<(f64, f64)> = members
            .iter()
            .filter_map(|&u| users[u as usize].as_ref()?.experts.as_ref().map(|x| (x.w_cold, x.w_warm)))
            .collect();
        reports.push(CohortReport {
            cohort: label.to_string(),
            users: members.len(),
            test_users: targets.len(),
            hr,
            ndcg,
            auc_test: auc_set(test_pairs.iter().filter(|p| member(p.user))),
            auc_train: auc_set(train_pairs.iter().filter(|p| member(p.user))),
            mean_w_cold: mean(weights.iter().map(|w| w.0)),
            mean_w_warm: mean(weights.iter().map(|w| w.1)),
        });
    }
    Ok(EvalReport {
        model: name.to_string(),
        items: ds.n_items(),
        options: options.clone(),
        cohorts: reports,
    })
}
