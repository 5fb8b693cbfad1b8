//! Baseline pre-training and extraction of active-user embeddings.

use crate::data::{natural_cmp, Cohort};
use crate::error::{Error, Result};
use crate::model::{
    train, BaselineConfig, BaselineTwoTower, EpochLog, FeatureEncoder, FeatureSchema,
    ObjectiveConfig, TrainOptions,
};
use crate::tensor::{derive_seed, seeded_rng, Tensor};

/// Builds and trains the baseline two-tower on the encoder's dataset.
pub fn pretrain_baseline(
    encoder: &FeatureEncoder<'_>,
    schema: FeatureSchema,
    config: BaselineConfig,
    options: &TrainOptions,
) -> Result<(BaselineTwoTower, Vec<EpochLog>)> {
    let mut rng = seeded_rng(derive_seed(options.seed, "baseline-init"));
    let mut model = BaselineTwoTower::new(config, schema, &mut rng)?;
    let logs = train(&mut model, encoder, options, &ObjectiveConfig::default(), |_| {})?;
    Ok((model, logs))
}

/// Embeddings of the active cohort, sorted by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveEmbeddings {
    pub user_ids: Vec<String>,
    pub users: Vec<u32>,
    pub embeddings: Tensor,
}

/// One serving-time user embedding per active user.
pub fn export_active_embeddings(
    model: &BaselineTwoTower,
    encoder: &FeatureEncoder<'_>,
) -> Result<ActiveEmbeddings> {
    let ds = encoder.dataset();
    let mut users: Vec<u32> = ds
        .user_indices()
        .filter(|&u| ds.cohort(u) == Cohort::Active)
        .collect();
    if users.is_empty() {
        return Err(Error::Data(format!(
            "no active users (more than {} train interactions); lower `thresholds.warm_max`",
            ds.thresholds.warm_max
        )));
    }
    let id = |u: u32| ds.users.decode(u).unwrap_or("");
    users.sort_by(|&a, &b| natural_cmp(id(a), id(b)));
    let mut data = Vec::with_capacity(users.len() * model.config.d);
    for &u in &users {
        let trace = model.forward_user(&encoder.user(u))?;
        data.extend_from_slice(trace.e_u().as_slice());
    }
    Ok(ActiveEmbeddings {
        user_ids: users.iter().map(|&u| id(u).to_string()).collect(),
        embeddings: Tensor::from_vec(users.len(), model.config.d, data)?,
        users,
    })
}
