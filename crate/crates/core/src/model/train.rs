use serde::{Deserialize, Serialize};

use super::inputs::FeatureEncoder;
use super::{ObjectiveConfig, Trainable, UserGroup};
use crate::data::{positive_examples, sample_negatives, BatchIterator, Dataset, PositiveIndex};
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, seeded_rng, Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Examples per batch, counting negatives. A positive and its negatives
    /// always land in the same batch.
    pub batch_size: usize,
    pub negatives: usize,
    pub history_cap: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 256,
            negatives: 4,
            history_cap: 50,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn positives_per_batch(&self) -> usize {
        self.batch_size.div_ceil(self.negatives + 1).max(1)
    }
}

/// Sample-weighted means over one epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub examples: usize,
    pub main: f64,
    pub distill: f64,
    pub aux: f64,
    pub total: f64,
    pub mean_w_cold: f64,
    pub distill_active_fraction: f64,
}

fn with_position(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::NonFiniteLoss { context } => Error::NonFiniteLoss {
            context: format!("epoch {epoch}, step {step}: {context}"),
        },
        Error::NonFiniteGradient { name, position } => Error::NonFiniteGradient {
            name: format!("{name} (epoch {epoch}, step {step})"),
            position,
        },
        other => other,
    }
}

/// Trains for `options.epochs` passes over every train positive. Negatives
/// are redrawn each epoch; everything is seeded from `options.seed`.
pub fn train<M: Trainable>(
    model: &mut M,
    encoder: &FeatureEncoder<'_>,
    options: &TrainOptions,
    objective: &ObjectiveConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let ds: &Dataset = encoder.dataset();
    let positives = positive_examples(ds);
    if positives.is_empty() {
        return Err(Error::Data("no train interactions".into()));
    }
    let ids: Vec<usize> = (0..positives.len()).collect();
    let index = PositiveIndex::from_dataset(ds);
    let mut rng = seeded_rng(derive_seed(options.seed, "train"));
    let mut optimizer = Adam::new(options.adam);
    let mut logs = Vec::with_capacity(options.epochs);

    for epoch in 0..options.epochs {
        let mut log = EpochLog {
            epoch,
            ..EpochLog::default()
        };
        let mut active = 0usize;
        let batches = BatchIterator::new(&ids, options.positives_per_batch(), &mut rng)?
            .collect::<Vec<_>>();
        for (step, batch) in batches.into_iter().enumerate() {
            let mut groups = Vec::with_capacity(batch.len());
            for &id in batch {
                let p = &positives[id];
                let negatives = sample_negatives(p, options.negatives, ds.n_items(), &index, &mut rng)?;
                let mut items = Vec::with_capacity(negatives.len() + 1);
                items.push((encoder.item(p.item), 1.0));
                items.extend(negatives.iter().map(|n| (encoder.item(n.item), 0.0)));
                groups.push(UserGroup {
                    id,
                    user: encoder.user_at(p.user, p.prefix as usize),
                    items,
                });
            }
            let loss = model
                .training_step(&groups, objective, &mut optimizer)
                .map_err(|e| with_position(e, epoch, step))?;
            let n = loss.samples.len() as f64;
            log.steps += 1;
            log.examples += loss.samples.len();
            log.main += loss.main * n;
            log.distill += loss.distill * n;
            log.aux += loss.aux * n;
            log.total += loss.total * n;
            log.mean_w_cold += loss.mean_w_cold * n;
            active += loss.distill_active;
        }
        let n = log.examples.max(1) as f64;
        log.main /= n;
        log.distill /= n;
        log.aux /= n;
        log.total /= n;
        log.mean_w_cold /= n;
        log.distill_active_fraction = active as f64 / n;
        log::info!(
            "epoch {epoch}: L={:.5} L_d={:.5} L_o={:.5} mean w_cold={:.4} distill-active={:.3}",
            log.main,
            log.distill,
            log.total,
            log.mean_w_cold,
            log.distill_active_fraction
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
