//! Dataset bundle: the prepared [`Dataset`] in a [`Container`] so later
//! stages never re-parse text. Vocabularies, thresholds and the split
//! protocol go into the JSON manifest; index arrays into the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ItemField, SplitProtocol, UserField};
use super::split::{Cohort, CohortThresholds, Event};
use super::vocab::Vocabulary;
use crate::container::Container;
use crate::error::{Error, Result};

pub const KIND: &str = "dataset";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    users: Vocabulary,
    items: Vocabulary,
    user_fields: Vec<UserField>,
    item_fields: Vec<ItemField>,
    thresholds: CohortThresholds,
    protocol: SplitProtocol,
    cohort_counts: std::collections::BTreeMap<String, usize>,
    interactions: InteractionCounts,
}

#[derive(Debug, Serialize, Deserialize)]
struct InteractionCounts {
    train: usize,
    test: usize,
}

fn push_events(c: &mut Container, prefix: &str, events: &[Event]) -> Result<()> {
    c.push_u32(format!("{prefix}.user"), events.iter().map(|e| e.user).collect())?;
    c.push_u32(format!("{prefix}.item"), events.iter().map(|e| e.item).collect())?;
    c.push_u64(format!("{prefix}.timestamp"), events.iter().map(|e| e.timestamp).collect())
}

fn read_events(c: &Container, prefix: &str) -> Result<Vec<Event>> {
    let users = c.u32s(&format!("{prefix}.user"))?;
    let items = c.u32s(&format!("{prefix}.item"))?;
    let ts = c.u64s(&format!("{prefix}.timestamp"))?;
    if users.len() != items.len() || users.len() != ts.len() {
        return Err(Error::Corrupt(format!("`{prefix}` columns differ in length")));
    }
    Ok(users
        .into_iter()
        .zip(items)
        .zip(ts)
        .map(|((user, item), timestamp)| Event {
            user,
            item,
            timestamp,
        })
        .collect())
}

pub fn to_container(ds: &Dataset) -> Result<Container> {
    let manifest = Manifest {
        users: ds.users.clone(),
        items: ds.items.clone(),
        user_fields: ds.user_fields.clone(),
        item_fields: ds.item_fields.clone(),
        thresholds: ds.thresholds,
        protocol: ds.protocol.clone(),
        cohort_counts: ds
            .cohort_counts()
            .into_iter()
            .map(|(k, v)| (k.as_str().to_string(), v))
            .collect(),
        interactions: InteractionCounts {
            train: ds.train.len(),
            test: ds.test.len(),
        },
    };
    let mut c = Container::new(KIND, serde_json::to_value(&manifest)?);
    push_events(&mut c, "train", &ds.train)?;
    push_events(&mut c, "test", &ds.test)?;
    c.push_u32("cohorts", ds.cohorts.iter().map(|c| c.code()).collect())?;
    for f in &ds.user_fields {
        c.push_u32(format!("user_field.{}", f.name), f.values.clone())?;
    }
    for f in &ds.item_fields {
        c.push_u32(format!("item_field.{}.offsets", f.name), f.offsets.clone())?;
        c.push_u32(format!("item_field.{}.values", f.name), f.values.clone())?;
    }
    Ok(c)
}

pub fn from_container(c: Container) -> Result<Dataset> {
    let c = c.expect_kind(KIND)?;
    let m: Manifest = serde_json::from_value(c.meta.clone())
        .map_err(|e| Error::Corrupt(format!("dataset manifest: {e}")))?;
    let n_users = m.users.len();
    let n_items = m.items.len();
    let mut user_fields = m.user_fields;
    for f in &mut user_fields {
        f.values = c.u32s(&format!("user_field.{}", f.name))?;
        if f.values.len() != n_users {
            return Err(Error::Corrupt(format!("user field `{}` has wrong length", f.name)));
        }
    }
    let mut item_fields = m.item_fields;
    for f in &mut item_fields {
        f.offsets = c.u32s(&format!("item_field.{}.offsets", f.name))?;
        f.values = c.u32s(&format!("item_field.{}.values", f.name))?;
        if f.offsets.len() != n_items + 1
            || f.offsets.last().copied() != Some(f.values.len() as u32)
        {
            return Err(Error::Corrupt(format!("item field `{}` has bad offsets", f.name)));
        }
    }
    let cohorts = c
        .u32s("cohorts")?
        .into_iter()
        .map(|code| Cohort::from_code(code).ok_or_else(|| Error::Corrupt("bad cohort code".into())))
        .collect::<Result<Vec<_>>>()?;
    let train = read_events(&c, "train")?;
    let test = read_events(&c, "test")?;
    let in_range = |e: &Event| (e.user as usize) < n_users && (e.item as usize) < n_items;
    if !train.iter().chain(&test).all(in_range) || cohorts.len() != n_users {
        return Err(Error::Corrupt("dataset indices out of range".into()));
    }
    let mut ds = Dataset {
        users: m.users,
        items: m.items,
        user_fields,
        item_fields,
        train,
        test,
        cohorts,
        thresholds: m.thresholds,
        protocol: m.protocol,
        train_offsets: Vec::new(),
        train_items: Vec::new(),
    };
    ds.index_train();
    Ok(ds)
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    to_container(ds)?.write(path)
}

pub fn load(path: &Path) -> Result<Dataset> {
    from_container(Container::read(path)?)
}
