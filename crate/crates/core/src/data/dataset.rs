use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::split::{
    activity_bucket, activity_labels, assign_cohorts, simulate_cold_start, temporal_split, Cohort,
    CohortThresholds, ColdSimulation, Event,
};
use super::vocab::{Vocabulary, OOV};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Name of the derived activity-degree field (the gate's state input).
pub const ACTIVITY_FIELD: &str = "activity";

/// One categorical value per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserField {
    pub name: String,
    pub vocab: Vocabulary,
    /// Indexed by user index; OOV for users without metadata.
    #[serde(skip)]
    pub values: Vec<u32>,
}

/// Zero or more categorical values per item, stored CSR-style. Items without
/// a value get a single OOV entry so every item has at least one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemField {
    pub name: String,
    pub vocab: Vocabulary,
    #[serde(skip)]
    pub offsets: Vec<u32>,
    #[serde(skip)]
    pub values: Vec<u32>,
}

impl ItemField {
    pub fn values_of(&self, item: u32) -> &[u32] {
        let i = item as usize;
        &self.values[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProtocol {
    pub holdout: String,
    pub cold_simulation_fraction: f64,
    pub cold_simulation: ColdSimulation,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub thresholds: CohortThresholds,
    /// Fraction of eligible users truncated to a cold-start history.
    pub cold_simulation_fraction: f64,
    pub seed: u64,
}

/// Read-only view of one user (profile indices, behaviour, state, cohort).
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord<'a> {
    pub user: u32,
    pub user_id: &'a str,
    pub profile: Vec<u32>,
    /// Train item indices in time order.
    pub behavior: Vec<u32>,
    pub activity: u32,
    pub cohort: Cohort,
}

/// Fully encoded dataset: vocabularies, split, cohorts and feature views.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: Vocabulary,
    pub items: Vocabulary,
    pub user_fields: Vec<UserField>,
    pub item_fields: Vec<ItemField>,
    /// Sorted by `(user, timestamp, item)`.
    pub train: Vec<Event>,
    /// At most one event per user, sorted by user.
    pub test: Vec<Event>,
    pub cohorts: Vec<Cohort>,
    pub thresholds: CohortThresholds,
    pub protocol: SplitProtocol,
    pub(crate) train_offsets: Vec<u32>,
    pub(crate) train_items: Vec<u32>,
}

impl Dataset {
    pub fn from_corpus(corpus: &Corpus, options: &PrepareOptions, rng: &mut Rng) -> Result<Self> {
        options.thresholds.validate()?;
        if corpus.interactions.is_empty() {
            return Err(Error::Data("no interactions".into()));
        }
        let users = Vocabulary::build(corpus.interactions.iter().map(|i| i.user_id.clone()));
        let items = Vocabulary::build(corpus.interactions.iter().map(|i| i.item_id.clone()));
        let events: Vec<Event> = corpus
            .interactions
            .iter()
            .map(|i| Event {
                user: users.encode(&i.user_id),
                item: items.encode(&i.item_id),
                timestamp: i.timestamp,
            })
            .collect();
        let (train, test) = temporal_split(&events);
        let (train, simulation) = simulate_cold_start(
            &train,
            users.len(),
            options.cold_simulation_fraction,
            options.thresholds.cold_max,
            rng,
        );
        let cohorts = assign_cohorts(users.len(), &train, options.thresholds)?;
        let user_fields = encode_user_fields(corpus, &users);
        let item_fields = encode_item_fields(corpus, &items);
        let mut ds = Self {
            users,
            items,
            user_fields,
            item_fields,
            train,
            test,
            cohorts,
            thresholds: options.thresholds,
            protocol: SplitProtocol {
                holdout: "leave-last-one-out".into(),
                cold_simulation_fraction: options.cold_simulation_fraction,
                cold_simulation: simulation,
                seed: options.seed,
            },
            train_offsets: Vec::new(),
            train_items: Vec::new(),
        };
        ds.index_train();
        Ok(ds)
    }

    pub(crate) fn index_train(&mut self) {
        let n = self.users.len();
        let mut offsets = vec![0u32; n + 1];
        for e in &self.train {
            offsets[e.user as usize + 1] += 1;
        }
        for u in 0..n {
            offsets[u + 1] += offsets[u];
        }
        self.train_offsets = offsets;
        self.train_items = self.train.iter().map(|e| e.item).collect();
    }

    /// Users excluding the OOV slot.
    pub fn n_users(&self) -> usize {
        self.users.len() - 1
    }

    /// Catalog size excluding the OOV slot.
    pub fn n_items(&self) -> usize {
        self.items.len() - 1
    }

    /// Item indices of the retrievable catalog.
    pub fn catalog(&self) -> std::ops::RangeInclusive<u32> {
        1..=self.n_items() as u32
    }

    pub fn user_indices(&self) -> std::ops::RangeInclusive<u32> {
        1..=self.n_users() as u32
    }

    /// The user's train items in time order.
    pub fn train_items(&self, user: u32) -> &[u32] {
        let u = user as usize;
        &self.train_items[self.train_offsets[u] as usize..self.train_offsets[u + 1] as usize]
    }

    pub fn train_count(&self, user: u32) -> usize {
        self.train_items(user).len()
    }

    /// The most recent `cap` train items among the first `prefix`.
    pub fn history(&self, user: u32, prefix: usize, cap: usize) -> &[u32] {
        let all = self.train_items(user);
        let end = prefix.min(all.len());
        &all[end.saturating_sub(cap)..end]
    }

    pub fn profile(&self, user: u32) -> Vec<u32> {
        self.user_fields
            .iter()
            .map(|f| f.values[user as usize])
            .collect()
    }

    pub fn test_event(&self, user: u32) -> Option<&Event> {
        self.test
            .binary_search_by_key(&user, |e| e.user)
            .ok()
            .map(|i| &self.test[i])
    }

    pub fn cohort(&self, user: u32) -> Cohort {
        self.cohorts[user as usize]
    }

    pub fn user_record(&self, user: u32) -> UserRecord<'_> {
        UserRecord {
            user,
            user_id: self.users.decode(user).unwrap_or(""),
            profile: self.profile(user),
            behavior: self.train_items(user).to_vec(),
            activity: activity_bucket(self.train_count(user)),
            cohort: self.cohort(user),
        }
    }

    pub fn cohort_counts(&self) -> HashMap<Cohort, usize> {
        let mut m = HashMap::new();
        for u in self.user_indices() {
            *m.entry(self.cohort(u)).or_insert(0) += 1;
        }
        m
    }

    /// Vocabulary of the activity-degree buckets.
    pub fn activity_vocab() -> Vocabulary {
        Vocabulary::from(
            std::iter::once("<oov>".to_string())
                .chain(activity_labels())
                .collect::<Vec<_>>(),
        )
    }

    pub fn user_field(&self, name: &str) -> Option<&UserField> {
        self.user_fields.iter().find(|f| f.name == name)
    }
}

fn encode_user_fields(corpus: &Corpus, users: &Vocabulary) -> Vec<UserField> {
    corpus
        .user_fields
        .iter()
        .map(|name| {
            let cell = |m: &super::corpus::UserMeta| {
                m.fields
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| v.clone())
                    .filter(|v| !v.is_empty())
            };
            let known: Vec<_> = corpus
                .users
                .iter()
                .filter(|m| users.get(&m.user_id).is_some())
                .collect();
            let vocab = Vocabulary::build(known.iter().filter_map(|m| cell(m)));
            let mut values = vec![OOV; users.len()];
            for m in known {
                if let Some(v) = cell(m) {
                    values[users.encode(&m.user_id) as usize] = vocab.encode(&v);
                }
            }
            UserField {
                name: name.clone(),
                vocab,
                values,
            }
        })
        .collect()
}

fn encode_item_fields(corpus: &Corpus, items: &Vocabulary) -> Vec<ItemField> {
    corpus
        .item_fields
        .iter()
        .map(|name| {
            let mut per_item: Vec<Vec<String>> = vec![Vec::new(); items.len()];
            for rec in &corpus.items {
                if let Some(idx) = items.get(&rec.item_id) {
                    if let Some((_, vals)) = rec.fields.iter().find(|(n, _)| n == name) {
                        per_item[idx as usize] = vals.clone();
                    }
                }
            }
            let vocab = Vocabulary::build(per_item.iter().flatten().cloned());
            let mut offsets = Vec::with_capacity(items.len() + 1);
            let mut values = Vec::new();
            offsets.push(0u32);
            for vals in &per_item {
                if vals.is_empty() {
                    values.push(OOV);
                } else {
                    values.extend(vals.iter().map(|v| vocab.encode(v)));
                }
                offsets.push(values.len() as u32);
            }
            ItemField {
                name: name.clone(),
                vocab,
                offsets,
                values,
            }
        })
        .collect()
}
