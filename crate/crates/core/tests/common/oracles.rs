//! Brute-force oracles for retrieval, ranking metrics, AUC and mutual
//! information, each computed by a route independent of the library's.

use std::collections::HashMap;

use coldwarm::data::Cohort;
use coldwarm::eval::{auc, evaluate, hit_rate_at_k, item_matrix, ndcg_at_k, retrieve_top_k, user_encodings, EvalOptions};
use coldwarm::features::{contingency, empirical_mi, FeatureColumn};
use coldwarm::model::{FeatureEncoder, FeatureSchema};
use coldwarm::tensor::{seeded_rng, Rng, Tensor};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::synthetic_dataset;

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub cases: usize,
    pub max_dev: f64,
    pub tolerance: f64,
}

impl OracleReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            max_dev: 0.0,
            tolerance,
        }
    }

    fn observe(&mut self, got: f64, want: f64) {
        self.cases += 1;
        self.max_dev = self.max_dev.max((got - want).abs());
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.max_dev <= self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "{:<24} cases {:>6}  max |dev| {:.2e}  (tol {:.0e})",
            self.name, self.cases, self.max_dev, self.tolerance
        )
    }
}

pub const CASES: usize = 200;

/// Scores on a coarse grid so that ties are frequent.
fn tied_scores(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.random_range(-6i32..=6)) * 0.25).collect()
}

fn score(user: &[f64], row: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in user.iter().zip(row) {
        s += a * b;
    }
    s
}

/// Sorts every candidate item by (score desc, id asc).
fn oracle_ranking(user: &[f64], items: &Tensor, exclude: &[u32]) -> Vec<(u32, f64)> {
    let mut all: Vec<(u32, f64)> = (1..items.rows() as u32)
        .filter(|i| !exclude.contains(i))
        .map(|i| (i, score(user, items.row(i as usize))))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

/// Rank of `target` by counting the candidates ahead of it.
fn oracle_rank(user: &[f64], items: &Tensor, exclude: &[u32], target: u32) -> usize {
    let t = score(user, items.row(target as usize));
    1 + (1..items.rows() as u32)
        .filter(|&i| i != target && !exclude.contains(&i))
        .filter(|&i| {
            let s = score(user, items.row(i as usize));
            s > t || (s == t && i < target)
        })
        .count()
}

fn random_instance(rng: &mut Rng) -> (Vec<Vec<f64>>, Tensor, Vec<Vec<u32>>, Vec<u32>) {
    let users = rng.random_range(1..=100);
    let n_items = rng.random_range(5..=100);
    let d = rng.random_range(1..=4);
    let grid = |rng: &mut Rng| f64::from(rng.random_range(-3i32..=3)) * 0.5;
    let mut items = Tensor::zeros(n_items + 1, d);
    for v in items.as_mut_slice()[d..].iter_mut() {
        *v = grid(rng);
    }
    let mut embeddings = Vec::new();
    let mut excludes = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..users {
        embeddings.push((0..d).map(|_| grid(rng)).collect());
        let mut pool: Vec<u32> = (1..=n_items as u32).collect();
        pool.shuffle(rng);
        let target = pool[0];
        let mut ex: Vec<u32> = pool[1..].iter().copied().take(rng.random_range(0..n_items / 2)).collect();
        ex.sort_unstable();
        excludes.push(ex);
        targets.push(target);
    }
    (embeddings, items, excludes, targets)
}

pub fn top_k() -> OracleReport {
    let mut report = OracleReport::new("top_k retrieval", 0.0);
    let mut rng = seeded_rng(31);
    for _ in 0..CASES / 4 {
        let (users, items, excludes, _) = random_instance(&mut rng);
        for (u, ex) in users.iter().zip(&excludes) {
            let full = oracle_ranking(u, &items, ex);
            let k = rng.random_range(1..=full.len());
            let got = retrieve_top_k(u, &items, ex, k, false);
            let same = got.len() == k
                && got
                    .iter()
                    .zip(&full)
                    .all(|(g, (i, s))| g.item == *i && g.score == *s);
            report.observe(if same { 0.0 } else { 1.0 }, 0.0);
        }
    }
    report
}

pub fn hit_rate_and_ndcg() -> (OracleReport, OracleReport) {
    let mut hr = OracleReport::new("HR@K", 1e-9);
    let mut ndcg = OracleReport::new("NDCG@K", 1e-9);
    let mut rng = seeded_rng(32);
    for _ in 0..CASES {
        let (users, items, excludes, targets) = random_instance(&mut rng);
        let n_candidates = items.rows() - 1;
        let k = rng.random_range(1..=n_candidates);
        let rankings: Vec<Vec<u32>> = users
            .iter()
            .zip(&excludes)
            .map(|(u, ex)| retrieve_top_k(u, &items, ex, k, false).iter().map(|r| r.item).collect())
            .collect();
        let ranks: Vec<usize> = users
            .iter()
            .zip(&excludes)
            .zip(&targets)
            .map(|((u, ex), &t)| oracle_rank(u, &items, ex, t))
            .collect();
        let n = users.len() as f64;
        let want_hr = ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        let want_ndcg = ranks
            .iter()
            .map(|&r| if r <= k { std::f64::consts::LN_2 / ((r + 1) as f64).ln() } else { 0.0 })
            .sum::<f64>()
            / n;
        hr.observe(hit_rate_at_k(&rankings, &targets, k).unwrap(), want_hr);
        ndcg.observe(ndcg_at_k(&rankings, &targets, k).unwrap(), want_ndcg);
    }
    (hr, ndcg)
}

pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn auc_oracle() -> OracleReport {
    let mut report = OracleReport::new("AUC", 1e-12);
    let mut rng = seeded_rng(33);
    for case in 0..CASES {
        let n = rng.random_range(2..=200);
        let scores = if case % 2 == 0 {
            tied_scores(n, &mut rng)
        } else {
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        report.observe(auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
    }
    report
}

/// `H(X) + H(Y) − H(X,Y)` from raw observations.
pub fn entropy_mi(values: &[u32], labels: &[u8]) -> f64 {
    let n = values.len() as f64;
    let entropy = |counts: Vec<usize>| -> f64 {
        counts
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let mut hx: HashMap<u32, usize> = HashMap::new();
    let mut hy: HashMap<u8, usize> = HashMap::new();
    let mut hxy: HashMap<(u32, u8), usize> = HashMap::new();
    for (&v, &l) in values.iter().zip(labels) {
        *hx.entry(v).or_default() += 1;
        *hy.entry(l).or_default() += 1;
        *hxy.entry((v, l)).or_default() += 1;
    }
    let h = |m: Vec<usize>| entropy(m);
    (h(hx.into_values().collect()) + h(hy.into_values().collect()) - h(hxy.into_values().collect())).max(0.0)
}

pub fn mutual_information() -> OracleReport {
    let mut report = OracleReport::new("MI", 1e-12);
    let mut rng = seeded_rng(34);
    for _ in 0..CASES {
        let n = rng.random_range(1..=400);
        let card = rng.random_range(1..=8);
        let skew = rng.random_range(0.0..0.8);
        let values: Vec<u32> = (0..n).map(|_| rng.random_range(0..card)).collect();
        let labels: Vec<u8> = values
            .iter()
            .map(|&v| u8::from(rng.random_bool((0.1 + skew * f64::from(v) / f64::from(card)).min(0.95))))
            .collect();
        let column = FeatureColumn {
            name: "f".into(),
            cardinality: card as usize,
            values: values.clone(),
        };
        report.observe(empirical_mi(&contingency(&column, &labels)), entropy_mi(&values, &labels));
    }
    report
}

/// End to end: the report of an untrained model on a ≤100×100 synthetic
/// dataset against per-user ranks counted from the exported embeddings.
pub fn cohort_report() -> OracleReport {
    let mut report = OracleReport::new("cohort HR/NDCG", 1e-9);
    for seed in 0..3 {
        let (cfg, ds) = synthetic_dataset(100, 100, 40 + seed);
        let schema = FeatureSchema::from_dataset(&ds, &[]).unwrap();
        let mut rng = seeded_rng(seed);
        let groups = super::uniform_tensor(3, 8, 1.0, &mut rng);
        let model = coldwarm::model::ColdWarmModel::new(
            coldwarm::model::ModelConfig { d: 8, ..Default::default() },
            schema.clone(),
            groups,
            &mut rng,
        )
        .unwrap();
        let encoder = FeatureEncoder::new(&ds, &schema, cfg.history_cap);
        let options = EvalOptions {
            hr_ks: vec![5, 20, 50],
            ndcg_ks: vec![5, 20, 50],
            ..EvalOptions::default()
        };
        let got = evaluate(&model, "m", &encoder, &options).unwrap();
        let users = user_encodings(&model, &encoder).unwrap();
        let items = item_matrix(&model, &encoder).unwrap();
        for cohort in [None, Some(Cohort::Cold), Some(Cohort::Warm), Some(Cohort::Active)] {
            let name = cohort.map_or("full", Cohort::as_str);
            let row = got.cohort(name).unwrap();
            let ranks: Vec<usize> = ds
                .test
                .iter()
                .filter(|e| cohort.is_none_or(|c| ds.cohort(e.user) == c))
                .map(|e| {
                    let mut ex = ds.train_items(e.user).to_vec();
                    ex.sort_unstable();
                    ex.dedup();
                    let u = &users[e.user as usize].as_ref().unwrap().e_u;
                    oracle_rank(u, &items, &ex, e.item)
                })
                .collect();
            assert_eq!(row.test_users, ranks.len());
            for &k in &options.hr_ks {
                let want = (!ranks.is_empty())
                    .then(|| ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64);
                match (row.hr[&k], want) {
                    (Some(g), Some(w)) => report.observe(g, w),
                    (g, w) => report.observe(f64::from(u8::from(g.is_some() != w.is_some())), 0.0),
                }
            }
            for &k in &options.ndcg_ks {
                let want = (!ranks.is_empty()).then(|| {
                    ranks
                        .iter()
                        .map(|&r| if r <= k { std::f64::consts::LN_2 / ((r + 1) as f64).ln() } else { 0.0 })
                        .sum::<f64>()
                        / ranks.len() as f64
                });
                match (row.ndcg[&k], want) {
                    (Some(g), Some(w)) => report.observe(g, w),
                    (g, w) => report.observe(f64::from(u8::from(g.is_some() != w.is_some())), 0.0),
                }
            }
        }
    }
    report
}

pub fn all() -> Vec<OracleReport> {
    let (hr, ndcg) = hit_rate_and_ndcg();
    vec![top_k(), hr, ndcg, auc_oracle(), mutual_information(), cohort_report()]
}
