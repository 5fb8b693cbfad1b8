//! Raw (string-keyed) interaction logs and metadata, before vocabularies.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    /// 1–5 for MovieLens, 1 for implicit logs.
    pub rating: u8,
    pub timestamp: u64,
}

/// Categorical user profile fields as read from metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserMeta {
    pub user_id: String,
    pub fields: Vec<(String, String)>,
}

/// Item features; each field may carry several values (e.g. genres).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRecord {
    pub item_id: String,
    pub fields: Vec<(String, Vec<String>)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub interactions: Vec<Interaction>,
    pub users: Vec<UserMeta>,
    pub items: Vec<ItemRecord>,
    /// Profile field names in declaration order.
    pub user_fields: Vec<String>,
    pub item_fields: Vec<String>,
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Latin-1 decodes byte-for-byte into the first 256 code points.
pub(crate) fn decode_latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| b as char).collect()
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}
