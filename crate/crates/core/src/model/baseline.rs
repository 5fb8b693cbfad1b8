//! Baseline two-tower: profile plus pooled behaviour through a two-layer
//! MLP on the user side, the shared item tower on the other, scored by a
//! scaled cosine. Used to pre-train the embeddings that seed the user-group
//! table, and as the plain two-tower comparison model.

use serde::{Deserialize, Serialize};

use super::blocks::{
    embedding_table, join, ItemFeatures, ItemTower, Mlp, MlpTrace, Module, ProfileTower,
    ProfileTrace,
};
use super::coldwarm::ObjectiveConfig;
use super::inputs::{FeatureSchema, UserFeatures};
use super::{LossBreakdown, Recommender, SampleLoss, Trainable, UserEncoding, UserGroup};
use crate::error::{Error, Result};
use crate::tensor::{
    axpy, bce_logit_grad, bce_loss, concat, cosine, cosine_backward, embedding_mean,
    embedding_mean_backward, sigmoid, split, Activation, Parameter, Rng, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub d: usize,
    pub tau: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { d: 32, tau: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTwoTower {
    pub config: BaselineConfig,
    pub schema: FeatureSchema,
    pub profile: ProfileTower,
    pub behavior: Parameter,
    pub user_mlp: Mlp,
    pub item: ItemTower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineUserTrace {
    pub profile: ProfileTrace,
    pub mlp: MlpTrace,
}

impl BaselineUserTrace {
    pub fn e_u(&self) -> &Tensor {
        self.mlp.output()
    }
}

impl BaselineTwoTower {
    pub fn new(config: BaselineConfig, schema: FeatureSchema, rng: &mut Rng) -> Result<Self> {
        let d = config.d;
        if d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        let profile = ProfileTower::new(&schema.user_cardinalities(), d, rng);
        let behavior = embedding_table(schema.item_rows, d, rng);
        let user_mlp = Mlp::new(&[2 * d, d, d], &[Activation::Relu, Activation::Identity], rng);
        let item = ItemTower::new(schema.item_rows, &schema.item_cardinalities(), d, rng);
        Ok(Self {
            config,
            schema,
            profile,
            behavior,
            user_mlp,
            item,
        })
    }

    pub fn forward_user(&self, user: &UserFeatures) -> Result<BaselineUserTrace> {
        let profile = self.profile.forward(&user.profile)?;
        let pooled = embedding_mean(&self.behavior, &user.history, self.config.d)?;
        let mlp = self.user_mlp.forward(concat(&profile.output, &pooled.value))?;
        Ok(BaselineUserTrace { profile, mlp })
    }

    pub fn accumulate(&mut self, batch: &[UserGroup<'_>]) -> Result<LossBreakdown> {
        let n: usize = batch.iter().map(|g| g.items.len()).sum();
        if n == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let inv = 1.0 / n as f64;
        let tau = self.config.tau;
        let d = self.config.d;
        let mut out = LossBreakdown::default();
        for group in batch {
            let ut = self.forward_user(&group.user)?;
            let e_u = ut.e_u().as_slice();
            let mut de_u = vec![0.0; d];
            for &(item, label) in &group.items {
                let it = self.item.forward(item)?;
                let c = cosine(e_u, it.output().as_slice());
                let y = sigmoid(tau * c.value);
                let main = bce_loss(y, label);
                if !main.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        context: format!("example {} (item {})", group.id, item.item),
                    });
                }
                out.main += main * inv;
                out.samples.push(SampleLoss {
                    id: group.id,
                    item: item.item,
                    main,
                    ..SampleLoss::default()
                });
                let dz = bce_logit_grad(y, label) * inv;
                let (du, di) = cosine_backward(e_u, it.output().as_slice(), &c, tau * dz);
                axpy(&mut de_u, 1.0, &du);
                self.item.backward(item, &it, Tensor::row_vector(di));
            }
            let dx = self.user_mlp.backward(&ut.mlp, Tensor::row_vector(de_u));
            let (d_up, d_ua) = split(&dx, d);
            embedding_mean_backward(&mut self.behavior, &group.user.history, d_ua.as_slice());
            self.profile.backward(&group.user.profile, &ut.profile, &d_up);
        }
        out.total = out.main;
        Ok(out)
    }
}

impl Module for BaselineTwoTower {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.profile.visit(&join(prefix, "profile"), f);
        self.behavior.visit(&join(prefix, "behavior"), f);
        self.user_mlp.visit(&join(prefix, "user_mlp"), f);
        self.item.visit(&join(prefix, "item"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.profile.visit_mut(&join(prefix, "profile"), f);
        self.behavior.visit_mut(&join(prefix, "behavior"), f);
        self.user_mlp.visit_mut(&join(prefix, "user_mlp"), f);
        self.item.visit_mut(&join(prefix, "item"), f);
    }
}

impl Trainable for BaselineTwoTower {
    fn accumulate(&mut self, batch: &[UserGroup<'_>], _objective: &ObjectiveConfig) -> Result<LossBreakdown> {
        BaselineTwoTower::accumulate(self, batch)
    }
}

impl Recommender for BaselineTwoTower {
    fn encode_user(&self, user: &UserFeatures) -> Result<UserEncoding> {
        Ok(UserEncoding {
            e_u: self.forward_user(user)?.e_u().as_slice().to_vec(),
            experts: None,
            bias_score: 0.0,
        })
    }

    fn encode_item(&self, item: &ItemFeatures) -> Result<Vec<f64>> {
        Ok(self.item.forward(item)?.output().as_slice().to_vec())
    }

    fn tau(&self) -> f64 {
        self.config.tau
    }
}
