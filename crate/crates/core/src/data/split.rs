use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rng;

/// One encoded interaction (indices into the user and item vocabularies).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub user: u32,
    pub item: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Cold,
    Warm,
    Active,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Cold, Cohort::Warm, Cohort::Active];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Cold => "cold",
            Cohort::Warm => "warm",
            Cohort::Active => "active",
        }
    }

    pub(crate) fn code(self) -> u32 {
        self as u32
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Inclusive upper bounds on train-interaction counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortThresholds {
    pub cold_max: usize,
    pub warm_max: usize,
}

impl Default for CohortThresholds {
    fn default() -> Self {
        Self {
            cold_max: 5,
            warm_max: 30,
        }
    }
}

impl CohortThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.cold_max >= self.warm_max {
            return Err(Error::Config(format!(
                "cohort thresholds need cold_max < warm_max, got {} >= {}",
                self.cold_max, self.warm_max
            )));
        }
        Ok(())
    }

    pub fn cohort(&self, train_count: usize) -> Cohort {
        if train_count <= self.cold_max {
            Cohort::Cold
        } else if train_count <= self.warm_max {
            Cohort::Warm
        } else {
            Cohort::Active
        }
    }
}

/// Cohort per user index from train-side counts only.
pub fn assign_cohorts(
    n_users: usize,
    train: &[Event],
    thresholds: CohortThresholds,
) -> Result<Vec<Cohort>> {
    thresholds.validate()?;
    let mut counts = vec![0usize; n_users];
    for e in train {
        counts[e.user as usize] += 1;
    }
    Ok(counts.into_iter().map(|c| thresholds.cohort(c)).collect())
}

/// Leave-last-one-out: each user's chronologically last event (ties broken by
/// item index) forms the test set, everything else is train. Train comes back
/// sorted by `(user, timestamp, item)`, test by user.
pub fn temporal_split(events: &[Event]) -> (Vec<Event>, Vec<Event>) {
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| (e.user, e.timestamp, e.item));
    let mut train = Vec::with_capacity(sorted.len());
    let mut test = Vec::new();
    for (i, e) in sorted.iter().enumerate() {
        let last_of_user = sorted.get(i + 1).is_none_or(|next| next.user != e.user);
        if last_of_user {
            test.push(*e);
        } else {
            train.push(*e);
        }
    }
    (train, test)
}

/// Users whose logs are truncated by [`simulate_cold_start`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColdSimulation {
    pub users: Vec<u32>,
    pub dropped_interactions: usize,
}

/// Turns a random `fraction` of users whose train history exceeds
/// `cold_max` into cold-start users by keeping only their most recent
/// `n ~ U{0..=cold_max}` train events. Test events are untouched.
///
/// Needed on corpora such as MovieLens where every user has at least 20
/// ratings, which leaves the cold cohort empty under a leave-one-out split.
pub fn simulate_cold_start(
    train: &[Event],
    n_users: usize,
    fraction: f64,
    cold_max: usize,
    rng: &mut Rng,
) -> (Vec<Event>, ColdSimulation) {
    let mut counts = vec![0usize; n_users];
    for e in train {
        counts[e.user as usize] += 1;
    }
    let mut eligible: Vec<u32> = (0..n_users as u32)
        .filter(|&u| counts[u as usize] > cold_max)
        .collect();
    let n_pick = (fraction.clamp(0.0, 1.0) * eligible.len() as f64).round() as usize;
    eligible.shuffle(rng);
    let mut picked: Vec<u32> = eligible[..n_pick].to_vec();
    picked.sort_unstable();

    let mut keep_from = vec![0usize; n_users];
    for &u in &picked {
        let keep = rng.random_range(0..=cold_max);
        keep_from[u as usize] = counts[u as usize] - keep;
    }
    let mut seen = vec![0usize; n_users];
    let mut kept = Vec::with_capacity(train.len());
    let mut dropped = 0;
    for e in train {
        let u = e.user as usize;
        if seen[u] >= keep_from[u] {
            kept.push(*e);
        } else {
            dropped += 1;
        }
        seen[u] += 1;
    }
    (
        kept,
        ColdSimulation {
            users: picked,
            dropped_interactions: dropped,
        },
    )
}

const ACTIVITY_EDGES: [usize; 10] = [0, 1, 3, 6, 11, 21, 31, 51, 101, 201];

/// Labels of the activity-degree buckets, in bucket order.
pub fn activity_labels() -> Vec<String> {
    ACTIVITY_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| match ACTIVITY_EDGES.get(i + 1) {
            Some(&hi) if hi - 1 == lo => format!("{lo}"),
            Some(&hi) => format!("{lo}-{}", hi - 1),
            None => format!("{lo}+"),
        })
        .collect()
}

/// Activity-degree bucket as a vocabulary index (`1..=10`, 0 stays OOV).
pub fn activity_bucket(count: usize) -> u32 {
    ACTIVITY_EDGES.iter().rposition(|&lo| count >= lo).unwrap_or(0) as u32 + 1
}
