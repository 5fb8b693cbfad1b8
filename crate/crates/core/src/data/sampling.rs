use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Rng;

const MAX_REJECTION_DRAWS: usize = 100_000;

/// One labelled (user, item) pair. `prefix` is the number of the user's
/// train events that precede this one; it selects the behaviour history and
/// the activity state visible to the model for this sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingExample {
    pub user: u32,
    pub item: u32,
    pub label: u8,
    pub prefix: u32,
}

/// Per-user sorted positive items, used to reject sampled negatives.
#[derive(Debug, Clone)]
pub struct PositiveIndex {
    per_user: Vec<Vec<u32>>,
}

impl PositiveIndex {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let per_user = (0..ds.users.len() as u32)
            .map(|u| {
                let mut items = ds.train_items(u).to_vec();
                items.sort_unstable();
                items.dedup();
                items
            })
            .collect();
        Self { per_user }
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.per_user[user as usize].binary_search(&item).is_ok()
    }

    pub fn items(&self, user: u32) -> &[u32] {
        &self.per_user[user as usize]
    }
}

/// Every train event as a label-1 example, in dataset order.
pub fn positive_examples(ds: &Dataset) -> Vec<TrainingExample> {
    let mut out = Vec::with_capacity(ds.train.len());
    for u in ds.user_indices() {
        for (pos, &item) in ds.train_items(u).iter().enumerate() {
            out.push(TrainingExample {
                user: u,
                item,
                label: 1,
                prefix: pos as u32,
            });
        }
    }
    out
}

/// Draws up to `k` distinct items uniformly from the catalog `1..=n_items`,
/// rejecting the user's train positives. When fewer than `k` items remain
/// available, every available item is returned once.
pub fn sample_negatives(
    positive: &TrainingExample,
    k: usize,
    n_items: usize,
    positives: &PositiveIndex,
    rng: &mut Rng,
) -> Result<Vec<TrainingExample>> {
    let excluded = positives.items(positive.user).len();
    if excluded >= n_items {
        return Err(Error::Data(format!(
            "user {} has interacted with the entire catalog; no negatives exist",
            positive.user
        )));
    }
    let target = k.min(n_items - excluded);
    let mut chosen: Vec<u32> = Vec::with_capacity(target);
    let mut draws = 0;
    while chosen.len() < target {
        draws += 1;
        if draws > MAX_REJECTION_DRAWS {
            return Err(Error::Data(format!(
                "negative sampling for user {} exceeded {MAX_REJECTION_DRAWS} draws",
                positive.user
            )));
        }
        let item = rng.random_range(1..=n_items as u32);
        if positives.contains(positive.user, item) || chosen.contains(&item) {
            continue;
        }
        chosen.push(item);
    }
    Ok(chosen
        .into_iter()
        .map(|item| TrainingExample {
            item,
            label: 0,
            ..*positive
        })
        .collect())
}

/// Each positive followed by its sampled negatives.
pub fn with_negatives(
    positives_list: &[TrainingExample],
    k: usize,
    n_items: usize,
    positives: &PositiveIndex,
    rng: &mut Rng,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::with_capacity(positives_list.len() * (k + 1));
    for p in positives_list {
        out.push(*p);
        out.extend(sample_negatives(p, k, n_items, positives, rng)?);
    }
    Ok(out)
}

/// One shuffled pass over `examples` in batches of `batch_size`; the final
/// short batch is emitted.
pub struct BatchIterator<'a, T> {
    examples: &'a [T],
    order: Vec<usize>,
    position: usize,
    batch_size: usize,
}

impl<'a, T> BatchIterator<'a, T> {
    pub fn new(examples: &'a [T], batch_size: usize, rng: &mut Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(rng);
        Ok(Self {
            examples,
            order,
            position: 0,
            batch_size,
        })
    }
}

impl<'a, T> Iterator for BatchIterator<'a, T> {
    type Item = Vec<&'a T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.position >= self.order.len() {
            return None;
        }
        let end = (self.position + self.batch_size).min(self.order.len());
        let batch = self.order[self.position..end]
            .iter()
            .map(|&i| &self.examples[i])
            .collect();
        self.position = end;
        Some(batch)
    }
}
