//! Models, their shared training loop, and the view evaluation needs.

pub mod baseline;
pub mod blocks;
pub mod coldwarm;
pub mod inputs;
mod train;

use serde::{Deserialize, Serialize};

pub use baseline::{BaselineConfig, BaselineTwoTower};
pub use blocks::{named_params, named_params_mut, ItemFeatures, Module};
pub use coldwarm::{
    dkd_per_sample, ColdWarmModel, Distill, ForwardTrace, ModelConfig, ObjectiveConfig, UserTrace,
    COLD_EXPERT_PREFIXES, WARM_EXPERT_PREFIXES,
};
pub use inputs::{BiasSource, FeatureEncoder, FeatureSchema, UserFeatures};
pub use train::{train, EpochLog, TrainOptions};

use crate::error::Result;
use crate::tensor::Adam;

/// One user state with the items scored against it: a positive and its
/// sampled negatives share the user's features.
#[derive(Debug, Clone)]
pub struct UserGroup<'a> {
    /// Index of the positive example this group was built from.
    pub id: usize,
    pub user: UserFeatures,
    pub items: Vec<(&'a ItemFeatures, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleLoss {
    pub id: usize,
    pub item: u32,
    /// `l(y, label)`
    pub main: f64,
    /// `l(ŷ_c, label)`
    pub cold: f64,
    /// `l(ŷ_w, label)`
    pub warm: f64,
    /// `l_d`
    pub distill: f64,
    pub active: bool,
}

/// Batch means: `L`, `L_d`, optional expert label losses, and
/// `L_o = L + α·L_d (+ aux)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub main: f64,
    pub distill: f64,
    pub aux: f64,
    pub total: f64,
    pub distill_active: usize,
    pub mean_w_cold: f64,
    pub samples: Vec<SampleLoss>,
}

pub trait Trainable: Module {
    /// Accumulates gradients of the batch loss; does not step.
    fn accumulate(&mut self, batch: &[UserGroup<'_>], objective: &ObjectiveConfig) -> Result<LossBreakdown>;

    /// One optimizer step on the batch; gradients are reset afterwards.
    fn training_step(
        &mut self,
        batch: &[UserGroup<'_>],
        objective: &ObjectiveConfig,
        optimizer: &mut Adam,
    ) -> Result<LossBreakdown> {
        let loss = self.accumulate(batch, objective)?;
        let mut params = named_params_mut(self);
        optimizer.step(params.iter_mut().map(|(n, p)| (n.as_str(), &mut **p)))?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experts {
    pub e_cold: Vec<f64>,
    pub e_warm: Vec<f64>,
    pub w_cold: f64,
    pub w_warm: f64,
}

/// What retrieval and reporting need from a user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserEncoding {
    pub e_u: Vec<f64>,
    pub experts: Option<Experts>,
    /// User-constant logit offset (zero without a bias net).
    pub bias_score: f64,
}

pub trait Recommender {
    fn encode_user(&self, user: &UserFeatures) -> Result<UserEncoding>;
    fn encode_item(&self, item: &ItemFeatures) -> Result<Vec<f64>>;
    fn tau(&self) -> f64;
}

impl Recommender for ColdWarmModel {
    fn encode_user(&self, user: &UserFeatures) -> Result<UserEncoding> {
        let t = self.forward_user(user)?;
        Ok(UserEncoding {
            e_u: t.e_u.as_slice().to_vec(),
            experts: Some(Experts {
                e_cold: t.e_cold().as_slice().to_vec(),
                e_warm: t.e_warm().as_slice().to_vec(),
                w_cold: t.w_cold,
                w_warm: t.w_warm,
            }),
            bias_score: t.y_bias_score,
        })
    }

    fn encode_item(&self, item: &ItemFeatures) -> Result<Vec<f64>> {
        Ok(self.forward_item(item)?.output().as_slice().to_vec())
    }

    fn tau(&self) -> f64 {
        self.config.tau
    }
}
