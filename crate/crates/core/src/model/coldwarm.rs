//! The Cold & Warm network: cold-start and warm-up experts over a frozen
//! user-group table, an activity gate, a bias net and the distillation
//! objective that lets the cold expert learn from the warm one.

use serde::{Deserialize, Serialize};

use super::blocks::{
    embedding_table, join, Dense, FieldEmbeddings, ItemFeatures, ItemTower, Mlp, MlpTrace, Module,
    ProfileTower, ProfileTrace,
};
use super::inputs::{FeatureSchema, UserFeatures};
use super::{LossBreakdown, SampleLoss, Trainable, UserGroup};
use crate::error::{Error, Result};
use crate::tensor::{
    axpy, bce_logit_grad, bce_loss, concat, cosine, cosine_backward, cosine_backward_u, dot,
    embedding_backward, embedding_lookup, embedding_mean, embedding_mean_backward,
    scaled_attention, scaled_attention_backward, sigmoid, softmax, softmax_backward, split,
    Activation, Attention, Cosine, Parameter, Rng, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    /// Multiplies the cosine before the sigmoid.
    pub tau: f64,
    pub gate_embedding_dim: usize,
    pub gate_hidden: usize,
    pub bias_embedding_dim: usize,
    pub bias_hidden: usize,
    pub warm_fusion_activation: Activation,
    pub bias_net: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            tau: 5.0,
            gate_embedding_dim: 8,
            gate_hidden: 16,
            bias_embedding_dim: 8,
            bias_hidden: 32,
            warm_fusion_activation: Activation::Tanh,
            bias_net: true,
        }
    }
}

/// How the training loss is assembled from the per-sample predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    /// Weight of the distillation loss.
    pub alpha: f64,
    pub distill: bool,
    /// Distill when the warm expert's loss is the larger one instead.
    pub flip_condition: bool,
    /// Also train each expert head directly on the label.
    pub expert_aux_loss: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            distill: true,
            flip_condition: false,
            expert_aux_loss: false,
        }
    }
}

/// Bias net: embeddings of the selected user fields, MLP to one logit offset.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasNet {
    pub fields: FieldEmbeddings,
    pub mlp: Mlp,
}

impl Module for BiasNet {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.fields.visit(&join(prefix, "fields"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.fields.visit_mut(&join(prefix, "fields"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColdWarmModel {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub profile: ProfileTower,
    pub behavior: Parameter,
    pub cold: Mlp,
    pub warm_fusion: Mlp,
    pub warm_output: Mlp,
    pub gate_embedding: Parameter,
    pub gate: Mlp,
    pub bias: Option<BiasNet>,
    pub item: ItemTower,
    /// `E_ug`, frozen: a plain tensor, never visited by the optimizer.
    pub groups: Tensor,
}

/// Parameter-name prefixes of the cold-start expert, which is where the
/// distillation gradient is allowed to flow.
pub const COLD_EXPERT_PREFIXES: [&str; 2] = ["profile", "cold"];
/// Parameter-name prefixes of the warm-up expert (the distillation teacher).
pub const WARM_EXPERT_PREFIXES: [&str; 3] = ["behavior", "warm_fusion", "warm_output"];

pub fn in_group(name: &str, prefixes: &[&str]) -> bool {
    prefixes
        .iter()
        .any(|p| name == *p || name.starts_with(&format!("{p}.")))
}

/// Every user-side intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTrace {
    pub profile: ProfileTrace,
    pub e_ua: Tensor,
    pub history_empty: bool,
    pub cold_attention: Attention,
    pub cold: MlpTrace,
    pub fusion: MlpTrace,
    pub warm_attention: Attention,
    pub warm: MlpTrace,
    pub gate_input: Tensor,
    pub gate: MlpTrace,
    pub w_cold: f64,
    pub w_warm: f64,
    pub e_u: Tensor,
    pub bias: Option<MlpTrace>,
    pub y_bias_score: f64,
}

impl UserTrace {
    pub fn e_up(&self) -> &Tensor {
        &self.profile.output
    }

    pub fn e_cold_a(&self) -> &Tensor {
        &self.cold_attention.context
    }

    pub fn e_cold(&self) -> &Tensor {
        self.cold.output()
    }

    pub fn e_ut(&self) -> &Tensor {
        self.fusion.output()
    }

    pub fn e_warm_a(&self) -> &Tensor {
        &self.warm_attention.context
    }

    pub fn e_warm(&self) -> &Tensor {
        self.warm.output()
    }
}

/// A user trace joined with one item.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub e_i: Tensor,
    pub cos_u: Cosine,
    pub cos_cold: Cosine,
    pub cos_warm: Cosine,
    pub y_sim_score: f64,
    pub y: f64,
    pub y_cold: f64,
    pub y_warm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub user: UserTrace,
    pub item: MlpTrace,
    pub scores: PairScores,
}

/// Outcome of the per-sample distillation selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distill {
    pub loss: f64,
    pub active: bool,
}

/// Distils (soft target `ŷ_w`) only when the cold expert's label loss is
/// strictly larger than the warm expert's; ties do not distil. `flip`
/// swaps the comparison.
pub fn dkd_per_sample(y_cold: f64, y_warm: f64, label: f64, flip: bool) -> Distill {
    let l_cold = bce_loss(y_cold, label);
    let l_warm = bce_loss(y_warm, label);
    let active = if flip {
        l_warm > l_cold
    } else {
        l_cold > l_warm
    };
    Distill {
        loss: if active { bce_loss(y_cold, y_warm) } else { 0.0 },
        active,
    }
}

/// Upstream gradients into the user side of one forward pass.
#[derive(Debug, Clone)]
struct UserGrad {
    e_u: Vec<f64>,
    e_cold: Vec<f64>,
    e_warm: Vec<f64>,
    bias: f64,
}

impl UserGrad {
    fn zeros(d: usize) -> Self {
        Self {
            e_u: vec![0.0; d],
            e_cold: vec![0.0; d],
            e_warm: vec![0.0; d],
            bias: 0.0,
        }
    }
}

impl ColdWarmModel {
    /// Fresh model. The gate's and bias net's last layers start at zero, so
    /// training begins from an even gate and no bias offset.
    pub fn new(config: ModelConfig, schema: FeatureSchema, groups: Tensor, rng: &mut Rng) -> Result<Self> {
        let d = config.d;
        if d == 0 || groups.rows() == 0 || groups.cols() != d {
            return Err(Error::ShapeMismatch {
                op: "ColdWarmModel::new(groups)",
                left: groups.shape(),
                right: (groups.rows().max(1), d),
            });
        }
        let profile = ProfileTower::new(&schema.user_cardinalities(), d, rng);
        let behavior = embedding_table(schema.item_rows, d, rng);
        let cold = Mlp::new(&[2 * d, d, d], &[Activation::Relu, Activation::Identity], rng);
        let warm_fusion = Mlp::new(&[2 * d, d], &[config.warm_fusion_activation], rng);
        let warm_output = Mlp::new(&[2 * d, d, d], &[Activation::Relu, Activation::Identity], rng);
        let gate_embedding = embedding_table(schema.state_cardinality, config.gate_embedding_dim, rng);
        let gate = Mlp {
            layers: vec![
                Dense::new(config.gate_embedding_dim, config.gate_hidden, Activation::Relu, rng),
                Dense::zeroed(config.gate_hidden, 2, Activation::Identity),
            ],
        };
        let bias = if config.bias_net && !schema.bias_fields.is_empty() {
            let fields = FieldEmbeddings::new(&schema.bias_cardinalities(), config.bias_embedding_dim, rng);
            let mlp = Mlp {
                layers: vec![
                    Dense::new(fields.output_dim(), config.bias_hidden, Activation::Relu, rng),
                    Dense::zeroed(config.bias_hidden, 1, Activation::Identity),
                ],
            };
            Some(BiasNet { fields, mlp })
        } else {
            None
        };
        let item = ItemTower::new(schema.item_rows, &schema.item_cardinalities(), d, rng);
        Ok(Self {
            config,
            schema,
            profile,
            behavior,
            cold,
            warm_fusion,
            warm_output,
            gate_embedding,
            gate,
            bias,
            item,
            groups,
        })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn forward_user(&self, user: &UserFeatures) -> Result<UserTrace> {
        let d = self.d();
        let profile = self.profile.forward(&user.profile)?;
        let e_up = &profile.output;
        let pooled = embedding_mean(&self.behavior, &user.history, d)?;

        let cold_attention = scaled_attention(e_up, &self.groups)?;
        let cold = self.cold.forward(concat(e_up, &cold_attention.context))?;

        let fusion = self.warm_fusion.forward(concat(e_up, &pooled.value))?;
        let warm_attention = scaled_attention(fusion.output(), &self.groups)?;
        let warm = self
            .warm_output
            .forward(concat(fusion.output(), &warm_attention.context))?;

        let gate_input = embedding_lookup(&self.gate_embedding, user.state as usize)?;
        let gate = self.gate.forward(gate_input.clone())?;
        let w = softmax(gate.output().as_slice());
        let (w_cold, w_warm) = (w[0], w[1]);

        let mut e_u = vec![0.0; d];
        axpy(&mut e_u, w_cold, cold.output().as_slice());
        axpy(&mut e_u, w_warm, warm.output().as_slice());

        let (bias, y_bias_score) = match &self.bias {
            Some(net) => {
                let trace = net.mlp.forward(net.fields.forward(&user.bias)?)?;
                let score = trace.output().as_slice()[0];
                (Some(trace), score)
            }
            None => (None, 0.0),
        };

        Ok(UserTrace {
            profile,
            e_ua: pooled.value,
            history_empty: pooled.empty,
            cold_attention,
            cold,
            fusion,
            warm_attention,
            warm,
            gate_input,
            gate,
            w_cold,
            w_warm,
            e_u: Tensor::row_vector(e_u),
            bias,
            y_bias_score,
        })
    }

    pub fn forward_item(&self, item: &ItemFeatures) -> Result<MlpTrace> {
        self.item.forward(item)
    }

    /// Training-style scores of a user trace against an item embedding.
    pub fn score(&self, user: &UserTrace, e_i: &Tensor) -> PairScores {
        let tau = self.config.tau;
        let e_i_s = e_i.as_slice();
        let cos_u = cosine(user.e_u.as_slice(), e_i_s);
        let cos_cold = cosine(user.e_cold().as_slice(), e_i_s);
        let cos_warm = cosine(user.e_warm().as_slice(), e_i_s);
        let y_sim_score = tau * cos_u.value;
        PairScores {
            e_i: e_i.clone(),
            cos_u,
            cos_cold,
            cos_warm,
            y_sim_score,
            y: sigmoid(y_sim_score + user.y_bias_score),
            y_cold: sigmoid(tau * cos_cold.value + user.y_bias_score),
            y_warm: sigmoid(tau * cos_warm.value + user.y_bias_score),
        }
    }

    pub fn forward(&self, user: &UserFeatures, item: &ItemFeatures) -> Result<ForwardTrace> {
        let user = self.forward_user(user)?;
        let item = self.forward_item(item)?;
        let scores = self.score(&user, item.output());
        Ok(ForwardTrace {
            user,
            item,
            scores,
        })
    }

    fn backward_user(&mut self, user: &UserFeatures, t: &UserTrace, g: &UserGrad) {
        let d = self.d();
        if let (Some(net), Some(trace)) = (self.bias.as_mut(), t.bias.as_ref()) {
            if g.bias != 0.0 {
                let dx = net.mlp.backward(trace, Tensor::row_vector(vec![g.bias]));
                net.fields.backward(&user.bias, &dx);
            }
        }

        let mut d_cold = g.e_cold.clone();
        axpy(&mut d_cold, t.w_cold, &g.e_u);
        let mut d_warm = g.e_warm.clone();
        axpy(&mut d_warm, t.w_warm, &g.e_u);

        let dw = [
            dot(&g.e_u, t.e_cold().as_slice()),
            dot(&g.e_u, t.e_warm().as_slice()),
        ];
        let dlogits = softmax_backward(&[t.w_cold, t.w_warm], &dw);
        let dgate = self.gate.backward(&t.gate, Tensor::row_vector(dlogits));
        embedding_backward(&mut self.gate_embedding, user.state as usize, dgate.as_slice());

        let dx = self.warm_output.backward(&t.warm, Tensor::row_vector(d_warm));
        let (mut d_ut, d_warm_a) = split(&dx, d);
        let dq = scaled_attention_backward(t.e_ut(), &self.groups, &t.warm_attention, &d_warm_a, None);
        d_ut.add_assign(&dq);
        let dx = self.warm_fusion.backward(&t.fusion, d_ut);
        let (mut d_up, d_ua) = split(&dx, d);
        embedding_mean_backward(&mut self.behavior, &user.history, d_ua.as_slice());

        let dx = self.cold.backward(&t.cold, Tensor::row_vector(d_cold));
        let (d_up_cold, d_cold_a) = split(&dx, d);
        let dq = scaled_attention_backward(t.e_up(), &self.groups, &t.cold_attention, &d_cold_a, None);
        d_up.add_assign(&d_up_cold);
        d_up.add_assign(&dq);
        self.profile.backward(&user.profile, &t.profile, &d_up);
    }

    /// Forward and backward over a batch, accumulating gradients without
    /// stepping. The loss is the mean over all samples of the batch.
    pub fn accumulate(&mut self, batch: &[UserGroup<'_>], objective: &ObjectiveConfig) -> Result<LossBreakdown> {
        let n: usize = batch.iter().map(|g| g.items.len()).sum();
        if n == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let inv = 1.0 / n as f64;
        let tau = self.config.tau;
        let d = self.d();
        let distill_on = objective.distill && objective.alpha > 0.0;
        let mut out = LossBreakdown::default();
        let mut w_cold_sum = 0.0;

        for group in batch {
            let ut = self.forward_user(&group.user)?;
            let mut ug = UserGrad::zeros(d);
            for (k, &(item, label)) in group.items.iter().enumerate() {
                let it = self.forward_item(item)?;
                let s = self.score(&ut, it.output());
                let main = bce_loss(s.y, label);
                if !main.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        context: format!("example {} (item {}, slot {k})", group.id, item.item),
                    });
                }
                let l_cold = bce_loss(s.y_cold, label);
                let l_warm = bce_loss(s.y_warm, label);
                let sel = dkd_per_sample(s.y_cold, s.y_warm, label, objective.flip_condition);
                let distill = if objective.distill { sel } else { Distill { loss: 0.0, active: false } };

                out.main += main * inv;
                out.distill += distill.loss * inv;
                out.distill_active += usize::from(distill.active);
                if objective.expert_aux_loss {
                    out.aux += (l_cold + l_warm) * inv;
                }
                out.samples.push(SampleLoss {
                    id: group.id,
                    item: item.item,
                    main,
                    cold: l_cold,
                    warm: l_warm,
                    distill: distill.loss,
                    active: distill.active,
                });
                w_cold_sum += ut.w_cold;

                let e_i = s.e_i.as_slice();
                let dz = bce_logit_grad(s.y, label) * inv;
                let (du, mut di) = cosine_backward(ut.e_u.as_slice(), e_i, &s.cos_u, tau * dz);
                axpy(&mut ug.e_u, 1.0, &du);
                ug.bias += dz;

                if objective.expert_aux_loss {
                    let dzc = bce_logit_grad(s.y_cold, label) * inv;
                    let (dc, dic) = cosine_backward(ut.e_cold().as_slice(), e_i, &s.cos_cold, tau * dzc);
                    axpy(&mut ug.e_cold, 1.0, &dc);
                    axpy(&mut di, 1.0, &dic);
                    let dzw = bce_logit_grad(s.y_warm, label) * inv;
                    let (dw, diw) = cosine_backward(ut.e_warm().as_slice(), e_i, &s.cos_warm, tau * dzw);
                    axpy(&mut ug.e_warm, 1.0, &dw);
                    axpy(&mut di, 1.0, &diw);
                    ug.bias += dzc + dzw;
                }

                if distill_on && distill.active {
                    // The teacher ŷ_w is a constant and only e_cold receives
                    // the gradient: not the item tower, not the bias net.
                    let dzd = objective.alpha * bce_logit_grad(s.y_cold, s.y_warm) * inv;
                    let dc = cosine_backward_u(ut.e_cold().as_slice(), e_i, &s.cos_cold, tau * dzd);
                    axpy(&mut ug.e_cold, 1.0, &dc);
                }

                self.item.backward(item, &it, Tensor::row_vector(di));
            }
            self.backward_user(&group.user, &ut, &ug);
        }
        let alpha = if objective.distill { objective.alpha } else { 0.0 };
        out.total = out.main + alpha * out.distill + out.aux;
        out.mean_w_cold = w_cold_sum * inv;
        Ok(out)
    }
}

impl Module for ColdWarmModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Parameter)) {
        self.profile.visit(&join(prefix, "profile"), f);
        self.behavior.visit(&join(prefix, "behavior"), f);
        self.cold.visit(&join(prefix, "cold"), f);
        self.warm_fusion.visit(&join(prefix, "warm_fusion"), f);
        self.warm_output.visit(&join(prefix, "warm_output"), f);
        self.gate_embedding.visit(&join(prefix, "gate_embedding"), f);
        self.gate.visit(&join(prefix, "gate"), f);
        self.bias.visit(&join(prefix, "bias"), f);
        self.item.visit(&join(prefix, "item"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Parameter)) {
        self.profile.visit_mut(&join(prefix, "profile"), f);
        self.behavior.visit_mut(&join(prefix, "behavior"), f);
        self.cold.visit_mut(&join(prefix, "cold"), f);
        self.warm_fusion.visit_mut(&join(prefix, "warm_fusion"), f);
        self.warm_output.visit_mut(&join(prefix, "warm_output"), f);
        self.gate_embedding.visit_mut(&join(prefix, "gate_embedding"), f);
        self.gate.visit_mut(&join(prefix, "gate"), f);
        self.bias.visit_mut(&join(prefix, "bias"), f);
        self.item.visit_mut(&join(prefix, "item"), f);
    }
}

impl Trainable for ColdWarmModel {
    fn accumulate(&mut self, batch: &[UserGroup<'_>], objective: &ObjectiveConfig) -> Result<LossBreakdown> {
        ColdWarmModel::accumulate(self, batch, objective)
    }
}
