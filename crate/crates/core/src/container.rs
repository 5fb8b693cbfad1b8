//! Single-file binary container shared by dataset bundles and checkpoints.
//!
//! ```text
//! 8 bytes   magic "COLDWARM"
//! u32 LE    format version
//! u64 LE    header length in bytes
//! header    UTF-8 JSON: kind, free-form meta, array manifest, payload size + SHA-256
//! payload   raw little-endian arrays at the manifest's byte offsets
//! ```
//!
//! Offsets are relative to the start of the payload. Loading validates the
//! magic, version, manifest bounds/overlaps and the payload digest.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"COLDWARM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    U32,
    U64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F64 | DType::U64 => 8,
            DType::U32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Array {
    F64(Vec<f64>),
    U32(Vec<u32>),
    U64(Vec<u64>),
}

impl Array {
    fn dtype(&self) -> DType {
        match self {
            Array::F64(_) => DType::F64,
            Array::U32(_) => DType::U32,
            Array::U64(_) => DType::U64,
        }
    }

    fn len(&self) -> usize {
        match self {
            Array::F64(v) => v.len(),
            Array::U32(v) => v.len(),
            Array::U64(v) => v.len(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            Array::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Array::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Array::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F64 => Array::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U32 => Array::U32(
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U64 => Array::U64(
                bytes
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: [usize; 2],
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ManifestEntry>,
    payload_bytes: usize,
    payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    shape: [usize; 2],
    array: Array,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            entries: Vec::new(),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn push(&mut self, name: impl Into<String>, shape: [usize; 2], array: Array) -> Result<()> {
        let name = name.into();
        if shape[0] * shape[1] != array.len() {
            return Err(Error::ShapeMismatch {
                op: "container.push",
                left: (shape[0], shape[1]),
                right: (1, array.len()),
            });
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Corrupt(format!("duplicate array `{name}`")));
        }
        self.entries.push(Entry { name, shape, array });
        Ok(())
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) -> Result<()> {
        self.push(name, [t.rows(), t.cols()], Array::F64(t.as_slice().to_vec()))
    }

    pub fn push_u32(&mut self, name: impl Into<String>, values: Vec<u32>) -> Result<()> {
        let n = values.len();
        self.push(name, [n, 1], Array::U32(values))
    }

    pub fn push_u64(&mut self, name: impl Into<String>, values: Vec<u64>) -> Result<()> {
        let n = values.len();
        self.push(name, [n, 1], Array::U64(values))
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Corrupt(format!("missing array `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.entry(name)?;
        match &e.array {
            Array::F64(v) => Tensor::from_vec(e.shape[0], e.shape[1], v.clone()),
            _ => Err(Error::Corrupt(format!("array `{name}` is not f64"))),
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn u32s(&self, name: &str) -> Result<Vec<u32>> {
        match &self.entry(name)?.array {
            Array::U32(v) => Ok(v.clone()),
            _ => Err(Error::Corrupt(format!("array `{name}` is not u32"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        match &self.entry(name)?.array {
            Array::U64(v) => Ok(v.clone()),
            _ => Err(Error::Corrupt(format!("array `{name}` is not u64"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut arrays = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let offset = payload.len();
            e.array.write_le(&mut payload);
            arrays.push(ManifestEntry {
                name: e.name.clone(),
                dtype: e.array.dtype(),
                shape: e.shape,
                offset,
                length: payload.len() - offset,
            });
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays,
            payload_bytes: payload.len(),
            payload_sha256: hex_digest(&payload),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Corrupt(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header length past end of file"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        let payload = &bytes[header_end..];
        if payload.len() != header.payload_bytes {
            return Err(Error::Corrupt(format!(
                "payload is {} bytes, manifest says {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let mut spans: Vec<(usize, usize)> = Vec::with_capacity(header.arrays.len());
        for a in &header.arrays {
            let expected = a.shape[0] * a.shape[1] * a.dtype.width();
            let end = a.offset.checked_add(a.length);
            if a.length != expected || end.is_none_or(|e| e > payload.len()) {
                return Err(Error::Corrupt(format!("array `{}` out of bounds", a.name)));
            }
            spans.push((a.offset, a.offset + a.length));
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(corrupt("overlapping arrays in manifest"));
        }
        if hex_digest(payload) != header.payload_sha256 {
            return Err(corrupt("payload checksum mismatch"));
        }
        let entries = header
            .arrays
            .iter()
            .map(|a| {
                let raw = &payload[a.offset..a.offset + a.length];
                Entry {
                    name: a.name.clone(),
                    shape: a.shape,
                    array: Array::read_le(a.dtype, raw),
                }
            })
            .collect();
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            entries,
        })
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::Corrupt(format!(
                "expected a `{kind}` container, found `{}`",
                self.kind
            )));
        }
        Ok(self)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
