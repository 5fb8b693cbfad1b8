//! Model checkpoints: every trainable parameter as a named `f64` array in a
//! [`Container`], with the architecture and provenance in the header.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::model::{
    named_params, named_params_mut, BaselineConfig, BaselineTwoTower, ColdWarmModel, FeatureSchema,
    ModelConfig, Module,
};
use crate::tensor::{seeded_rng, Tensor};

pub const COLDWARM_KIND: &str = "coldwarm";
pub const BASELINE_KIND: &str = "baseline";
const PARAM_PREFIX: &str = "param.";

fn push_params<M: Module>(c: &mut Container, model: &M) -> Result<()> {
    for (name, p) in named_params(model) {
        c.push_tensor(format!("{PARAM_PREFIX}{name}"), &p.value)?;
    }
    Ok(())
}

/// Overwrites every parameter of `model` from `c`, which must hold exactly
/// the same names and shapes.
fn read_params<M: Module>(c: &Container, model: &mut M) -> Result<()> {
    let stored: BTreeSet<&str> = c
        .names()
        .filter_map(|n| n.strip_prefix(PARAM_PREFIX))
        .collect();
    let mut params = named_params_mut(model);
    let expected: BTreeSet<&str> = params.iter().map(|(n, _)| n.as_str()).collect();
    if let Some(extra) = stored.difference(&expected).next() {
        return Err(Error::Corrupt(format!("unexpected parameter `{extra}` in checkpoint")));
    }
    for (name, p) in params.iter_mut() {
        let t = c
            .tensor(&format!("{PARAM_PREFIX}{name}"))
            .map_err(|_| Error::Corrupt(format!("checkpoint lacks parameter `{name}`")))?;
        if t.shape() != p.shape() {
            return Err(Error::Corrupt(format!(
                "parameter `{name}` has shape {:?}, the architecture expects {:?}",
                t.shape(),
                p.shape()
            )));
        }
        p.value = t;
        p.zero_grad();
        p.reset_state();
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ColdWarmMeta {
    config: ModelConfig,
    schema: FeatureSchema,
    provenance: serde_json::Value,
}

pub fn coldwarm_to_container(model: &ColdWarmModel, provenance: serde_json::Value) -> Result<Container> {
    let meta = ColdWarmMeta {
        config: model.config.clone(),
        schema: model.schema.clone(),
        provenance,
    };
    let mut c = Container::new(COLDWARM_KIND, serde_json::to_value(meta)?);
    c.push_tensor("e_ug", &model.groups)?;
    push_params(&mut c, model)?;
    Ok(c)
}

pub fn coldwarm_from_container(c: Container) -> Result<(ColdWarmModel, serde_json::Value)> {
    let c = c.expect_kind(COLDWARM_KIND)?;
    let meta: ColdWarmMeta = serde_json::from_value(c.meta.clone())
        .map_err(|e| Error::Corrupt(format!("checkpoint metadata: {e}")))?;
    let groups = c.tensor("e_ug")?;
    let mut model = ColdWarmModel::new(meta.config, meta.schema, groups, &mut seeded_rng(0))?;
    read_params(&c, &mut model)?;
    Ok((model, meta.provenance))
}

#[derive(Debug, Serialize, Deserialize)]
struct BaselineMeta {
    config: BaselineConfig,
    schema: FeatureSchema,
    provenance: serde_json::Value,
}

pub fn baseline_to_container(model: &BaselineTwoTower, provenance: serde_json::Value) -> Result<Container> {
    let meta = BaselineMeta {
        config: model.config,
        schema: model.schema.clone(),
        provenance,
    };
    let mut c = Container::new(BASELINE_KIND, serde_json::to_value(meta)?);
    push_params(&mut c, model)?;
    Ok(c)
}

pub fn baseline_from_container(c: Container) -> Result<(BaselineTwoTower, serde_json::Value)> {
    let c = c.expect_kind(BASELINE_KIND)?;
    let meta: BaselineMeta = serde_json::from_value(c.meta.clone())
        .map_err(|e| Error::Corrupt(format!("checkpoint metadata: {e}")))?;
    let mut model = BaselineTwoTower::new(meta.config, meta.schema, &mut seeded_rng(0))?;
    read_params(&c, &mut model)?;
    Ok((model, meta.provenance))
}

/// Either kind of model checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    ColdWarm(ColdWarmModel),
    Baseline(BaselineTwoTower),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::ColdWarm(_) => COLDWARM_KIND,
            Checkpoint::Baseline(_) => BASELINE_KIND,
        }
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let c = Container::read(path)?;
        match c.kind.as_str() {
            COLDWARM_KIND => coldwarm_from_container(c).map(|(m, p)| (Checkpoint::ColdWarm(m), p)),
            BASELINE_KIND => baseline_from_container(c).map(|(m, p)| (Checkpoint::Baseline(m), p)),
            other => Err(Error::Corrupt(format!(
                "{}: `{other}` container is not a model checkpoint",
                path.display()
            ))),
        }
    }

    pub fn save(&self, path: &Path, provenance: serde_json::Value) -> Result<()> {
        match self {
            Checkpoint::ColdWarm(m) => coldwarm_to_container(m, provenance)?.write(path),
            Checkpoint::Baseline(m) => baseline_to_container(m, provenance)?.write(path),
        }
    }
}

/// Parameter values by name, for bit-level comparisons.
pub fn parameter_snapshot<M: Module>(model: &M) -> Vec<(String, Tensor)> {
    named_params(model)
        .into_iter()
        .map(|(n, p)| (n, p.value.clone()))
        .collect()
}
