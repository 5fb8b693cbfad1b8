//! One declarative run configuration shared by every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::KMeansOptions;
use crate::data::synthetic::SyntheticSpec;
use crate::data::CohortThresholds;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::model::{BaselineConfig, ModelConfig, ObjectiveConfig, TrainOptions};
use crate::tensor::{Activation, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum DataSource {
    /// A directory holding `ratings.dat`, `users.dat` and `movies.dat`.
    Movielens { dir: PathBuf },
    /// Tab-separated `user, item, timestamp` with optional feature sidecars.
    Tsv {
        interactions: PathBuf,
        #[serde(default)]
        user_features: Option<PathBuf>,
        #[serde(default)]
        item_features: Option<PathBuf>,
    },
    /// Generated corpus with MovieLens-like fields.
    Synthetic {
        users: usize,
        items: usize,
        groups: usize,
        min_interactions: usize,
        max_interactions: usize,
        affinity: f64,
    },
}

impl DataSource {
    pub fn synthetic(spec: &SyntheticSpec) -> Self {
        DataSource::Synthetic {
            users: spec.users,
            items: spec.items,
            groups: spec.groups,
            min_interactions: spec.min_interactions,
            max_interactions: spec.max_interactions,
            affinity: spec.affinity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub disable_dkd: bool,
    pub disable_bias_net: bool,
    pub flip_dkd_condition: bool,
    pub cosine_serving: bool,
    pub expert_aux_loss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Shapes {
    pub gate_embedding_dim: usize,
    pub gate_hidden: usize,
    pub bias_embedding_dim: usize,
    pub bias_hidden: usize,
    pub warm_fusion_activation: Activation,
}

impl Default for Shapes {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            gate_embedding_dim: m.gate_embedding_dim,
            gate_hidden: m.gate_hidden,
            bias_embedding_dim: m.bias_embedding_dim,
            bias_hidden: m.bias_hidden,
            warm_fusion_activation: m.warm_fusion_activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub hr_ks: Vec<usize>,
    pub ndcg_ks: Vec<usize>,
    pub auc_negatives: usize,
    pub auc_train_positives: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let e = EvalOptions::default();
        Self {
            hr_ks: e.hr_ks,
            ndcg_ks: e.ndcg_ks,
            auc_negatives: e.auc_negatives,
            auc_train_positives: e.auc_train_positives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    /// Every artifact of the run is written here.
    pub output_dir: PathBuf,
    pub seed: u64,
    pub d: usize,
    pub batch_size: usize,
    /// Distillation weight.
    pub alpha: f64,
    /// Number of bias-net features.
    pub beta: usize,
    /// Cosine temperature.
    pub tau: f64,
    /// Number of user groups.
    pub m: usize,
    pub thresholds: CohortThresholds,
    pub cold_simulation_fraction: f64,
    pub negatives: usize,
    pub history_cap: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub shapes: Shapes,
    pub ablation: Ablation,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Movielens {
                dir: PathBuf::from("data/ml-100k"),
            },
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            d: 32,
            batch_size: 256,
            alpha: 0.05,
            beta: 10,
            tau: 5.0,
            m: 64,
            thresholds: CohortThresholds::default(),
            cold_simulation_fraction: 0.3,
            negatives: 4,
            history_cap: 50,
            epochs: 5,
            pretrain_epochs: 5,
            learning_rate: 1e-3,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            shapes: Shapes::default(),
            ablation: Ablation::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("batch_size", self.batch_size),
            ("beta", self.beta),
            ("m", self.m),
            ("negatives", self.negatives),
            ("shapes.gate_embedding_dim", self.shapes.gate_embedding_dim),
            ("shapes.gate_hidden", self.shapes.gate_hidden),
            ("shapes.bias_embedding_dim", self.shapes.bias_embedding_dim),
            ("shapes.bias_hidden", self.shapes.bias_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be at least 1")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("`alpha` must be >= 0, got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("`tau` must be > 0, got {}", self.tau)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("`learning_rate` must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.cold_simulation_fraction) {
            return Err(Error::Config("`cold_simulation_fraction` must lie in [0, 1]".into()));
        }
        if self.eval.hr_ks.iter().chain(&self.eval.ndcg_ks).any(|&k| k == 0) {
            return Err(Error::Config("evaluation cut-offs must be at least 1".into()));
        }
        self.thresholds.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            tau: self.tau,
            gate_embedding_dim: self.shapes.gate_embedding_dim,
            gate_hidden: self.shapes.gate_hidden,
            bias_embedding_dim: self.shapes.bias_embedding_dim,
            bias_hidden: self.shapes.bias_hidden,
            warm_fusion_activation: self.shapes.warm_fusion_activation,
            bias_net: !self.ablation.disable_bias_net,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            d: self.d,
            tau: self.tau,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            alpha: self.alpha,
            distill: !self.ablation.disable_dkd,
            flip_condition: self.ablation.flip_dkd_condition,
            expert_aux_loss: self.ablation.expert_aux_loss,
        }
    }

    fn train_options(&self, epochs: usize, label: &str) -> TrainOptions {
        TrainOptions {
            epochs,
            batch_size: self.batch_size,
            negatives: self.negatives,
            history_cap: self.history_cap,
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
            seed: crate::tensor::derive_seed(self.seed, label),
        }
    }

    pub fn main_train_options(&self) -> TrainOptions {
        self.train_options(self.epochs, "main")
    }

    pub fn pretrain_options(&self) -> TrainOptions {
        self.train_options(self.pretrain_epochs, "pretrain")
    }

    pub fn kmeans_options(&self) -> KMeansOptions {
        KMeansOptions {
            m: self.m,
            max_iters: self.kmeans_max_iters,
            tol: self.kmeans_tol,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            hr_ks: self.eval.hr_ks.clone(),
            ndcg_ks: self.eval.ndcg_ks.clone(),
            auc_negatives: self.eval.auc_negatives,
            auc_train_positives: self.eval.auc_train_positives,
            cosine_serving: self.ablation.cosine_serving,
            seed: crate::tensor::derive_seed(self.seed, "eval"),
        }
    }
}
