use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Reserved index for values not seen when the vocabulary was built.
pub const OOV: u32 = 0;
const OOV_TOKEN: &str = "<oov>";

/// Orders opaque ids numerically when both parse as integers, otherwise
/// lexicographically; numeric ids sort before non-numeric ones.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Contiguous value → index map with index 0 reserved for out-of-vocabulary.
/// In-vocabulary values are numbered `1..len()` in [`natural_cmp`] order, so
/// index order and id order coincide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn build<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut distinct: Vec<String> = values.into_iter().map(Into::into).collect();
        distinct.sort_by(|a, b| natural_cmp(a, b));
        distinct.dedup();
        let mut all = Vec::with_capacity(distinct.len() + 1);
        all.push(OOV_TOKEN.to_string());
        all.extend(distinct);
        Self::from(all)
    }

    /// Number of indices including the OOV slot.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when only the OOV slot exists.
    pub fn is_empty(&self) -> bool {
        self.values.len() <= 1
    }

    pub fn encode(&self, value: &str) -> u32 {
        self.index.get(value).copied().unwrap_or(OOV)
    }

    pub fn get(&self, value: &str) -> Option<u32> {
        self.index.get(value).copied()
    }

    /// `None` for the OOV slot and for out-of-range indices.
    pub fn decode(&self, index: u32) -> Option<&str> {
        if index == OOV {
            return None;
        }
        self.values.get(index as usize).map(String::as_str)
    }

    /// In-vocabulary values in index order (index 1 first).
    pub fn values(&self) -> &[String] {
        &self.values[1..]
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(values: Vec<String>) -> Self {
        let index = values
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        Self { values, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.values
    }
}
