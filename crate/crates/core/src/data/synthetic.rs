//! Seeded synthetic corpus with MovieLens-like fields, for tests and demos.
//!
//! Users belong to latent taste groups that their profile fields partially
//! reveal; items belong to genres tied to the same groups. Each user samples
//! items from a mixture of their group's genres and global popularity.

use rand::Rng as _;
use rand_distr::{Distribution, Zipf};

use super::corpus::{Corpus, Interaction, ItemRecord, UserMeta};
use crate::tensor::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub groups: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// Probability that a pick follows the user's group rather than popularity.
    pub affinity: f64,
}

impl SyntheticSpec {
    pub fn small() -> Self {
        Self {
            users: 60,
            items: 80,
            groups: 4,
            min_interactions: 1,
            max_interactions: 40,
            affinity: 0.8,
        }
    }
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Corpus {
    let mut rng = seeded_rng(seed);
    let groups = spec.groups.max(1);
    let item_group: Vec<usize> = (0..spec.items).map(|i| i % groups).collect();
    let popularity = Zipf::new(spec.items as f64, 1.1).expect("valid zipf");

    let mut items = Vec::with_capacity(spec.items);
    for (i, &g) in item_group.iter().enumerate() {
        let mut genres = vec![format!("genre{g}")];
        if rng.random_bool(0.3) {
            genres.push(format!("genre{}", rng.random_range(0..groups)));
        }
        genres.sort();
        genres.dedup();
        items.push(ItemRecord {
            item_id: (i + 1).to_string(),
            fields: vec![
                ("genres".into(), genres),
                ("year".into(), vec![format!("{}", 1980 + 5 * (i % 6))]),
            ],
        });
    }

    let mut users = Vec::with_capacity(spec.users);
    let mut interactions = Vec::new();
    for u in 0..spec.users {
        let group = rng.random_range(0..groups);
        let reveal = |rng: &mut crate::tensor::Rng, noise: f64, n: usize| {
            if rng.random_bool(noise) {
                rng.random_range(0..n)
            } else {
                group % n
            }
        };
        let gender = if reveal(&mut rng, 0.3, 2) == 0 { "F" } else { "M" };
        let age = [1, 18, 25, 35, 45, 50, 56][reveal(&mut rng, 0.3, 7)];
        let occupation = reveal(&mut rng, 0.2, groups.max(2) * 2);
        let user_id = (u + 1).to_string();
        users.push(UserMeta {
            user_id: user_id.clone(),
            fields: vec![
                ("gender".into(), gender.into()),
                ("age".into(), age.to_string()),
                ("occupation".into(), occupation.to_string()),
                ("zip_region".into(), rng.random_range(0..10).to_string()),
            ],
        });

        let n = rng.random_range(spec.min_interactions..=spec.max_interactions.max(spec.min_interactions));
        let start: u64 = rng.random_range(0..1_000_000);
        let mut seen = std::collections::HashSet::new();
        let mut t = start;
        let mut attempts = 0;
        while seen.len() < n.min(spec.items) && attempts < 50 * spec.items {
            attempts += 1;
            let item = if rng.random_bool(spec.affinity) {
                let k = rng.random_range(0..spec.items.div_ceil(groups));
                (k * groups + group).min(spec.items - 1)
            } else {
                popularity.sample(&mut rng) as usize - 1
            };
            if !seen.insert(item) {
                continue;
            }
            t += rng.random_range(1..5_000);
            interactions.push(Interaction {
                user_id: user_id.clone(),
                item_id: (item + 1).to_string(),
                rating: rng.random_range(1..=5),
                timestamp: t,
            });
        }
    }

    Corpus {
        interactions,
        users,
        items,
        user_fields: super::movielens::USER_FIELDS.iter().map(|s| s.to_string()).collect(),
        item_fields: super::movielens::ITEM_FIELDS.iter().map(|s| s.to_string()).collect(),
    }
}
