//! Model inputs: the field layout a model is built against, and the encoder
//! that turns dataset rows into per-sample feature indices.

use serde::{Deserialize, Serialize};

use super::blocks::ItemFeatures;
use crate::data::{activity_bucket, Dataset, ACTIVITY_FIELD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasSource {
    /// Position in the user profile.
    Profile { field: usize },
    Activity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasFieldSpec {
    pub name: String,
    pub cardinality: usize,
    pub source: BiasSource,
}

/// Cardinalities of every embedded field, fixed when a model is built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub user_fields: Vec<FieldSpec>,
    pub item_fields: Vec<FieldSpec>,
    /// Rows of the item-id tables (catalog plus the OOV row).
    pub item_rows: usize,
    pub state_cardinality: usize,
    pub bias_fields: Vec<BiasFieldSpec>,
}

impl FeatureSchema {
    /// `bias` names the selected bias-net inputs (user fields or `activity`).
    pub fn from_dataset(ds: &Dataset, bias: &[String]) -> Result<Self> {
        let state_cardinality = Dataset::activity_vocab().len();
        let bias_fields = bias
            .iter()
            .map(|name| {
                if name == ACTIVITY_FIELD {
                    return Ok(BiasFieldSpec {
                        name: name.clone(),
                        cardinality: state_cardinality,
                        source: BiasSource::Activity,
                    });
                }
                let field = ds
                    .user_fields
                    .iter()
                    .position(|f| &f.name == name)
                    .ok_or_else(|| Error::Config(format!("unknown bias feature `{name}`")))?;
                Ok(BiasFieldSpec {
                    name: name.clone(),
                    cardinality: ds.user_fields[field].vocab.len(),
                    source: BiasSource::Profile { field },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            user_fields: ds
                .user_fields
                .iter()
                .map(|f| FieldSpec {
                    name: f.name.clone(),
                    cardinality: f.vocab.len(),
                })
                .collect(),
            item_fields: ds
                .item_fields
                .iter()
                .map(|f| FieldSpec {
                    name: f.name.clone(),
                    cardinality: f.vocab.len(),
                })
                .collect(),
            item_rows: ds.items.len(),
            state_cardinality,
            bias_fields,
        })
    }

    pub fn user_cardinalities(&self) -> Vec<usize> {
        self.user_fields.iter().map(|f| f.cardinality).collect()
    }

    pub fn item_cardinalities(&self) -> Vec<usize> {
        self.item_fields.iter().map(|f| f.cardinality).collect()
    }

    pub fn bias_cardinalities(&self) -> Vec<usize> {
        self.bias_fields.iter().map(|f| f.cardinality).collect()
    }
}

/// User-side inputs of one sample: profile (`X_up`), behaviour item ids
/// (`X_ua`), activity state (`X_us`) and bias-net fields (`X_b`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UserFeatures {
    pub profile: Vec<u32>,
    pub history: Vec<u32>,
    pub state: u32,
    pub bias: Vec<u32>,
}

/// Encodes users and items of one dataset against a schema.
pub struct FeatureEncoder<'a> {
    ds: &'a Dataset,
    schema: &'a FeatureSchema,
    history_cap: usize,
    items: Vec<ItemFeatures>,
}

impl<'a> FeatureEncoder<'a> {
    pub fn new(ds: &'a Dataset, schema: &'a FeatureSchema, history_cap: usize) -> Self {
        let items = (0..ds.items.len() as u32)
            .map(|item| ItemFeatures {
                item,
                fields: ds
                    .item_fields
                    .iter()
                    .map(|f| f.values_of(item).to_vec())
                    .collect(),
            })
            .collect();
        Self {
            ds,
            schema,
            history_cap,
            items,
        }
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.ds
    }

    /// The user as seen just before their `prefix`-th train event.
    pub fn user_at(&self, user: u32, prefix: usize) -> UserFeatures {
        let profile = self.ds.profile(user);
        let history = self.ds.history(user, prefix, self.history_cap).to_vec();
        let state = activity_bucket(prefix.min(self.ds.train_count(user)));
        let bias = self
            .schema
            .bias_fields
            .iter()
            .map(|f| match f.source {
                BiasSource::Profile { field } => profile[field],
                BiasSource::Activity => state,
            })
            .collect();
        UserFeatures {
            profile,
            history,
            state,
            bias,
        }
    }

    /// The user after all train events (the serving-time view).
    pub fn user(&self, user: u32) -> UserFeatures {
        self.user_at(user, self.ds.train_count(user))
    }

    pub fn item(&self, item: u32) -> &ItemFeatures {
        &self.items[item as usize]
    }

    pub fn items(&self) -> &[ItemFeatures] {
        &self.items
    }
}
