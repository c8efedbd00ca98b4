//! Versioned binary container: JSON header followed by little-endian arrays.
//!
//! Layout: `b"CYTOARCH"`, `u32` format version, `u64` header length, the JSON
//! header, then each array's raw little-endian payload in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CYTOARCH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
    U32(Vec<u32>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::U64(_) => "u64",
            ArrayData::U32(_) => "u32",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    dtype: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArraySpec>,
}

/// In-memory form of one container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, ArrayData)>,
}

impl Container {
    pub fn new(kind: &str, meta: impl Serialize) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            meta: serde_json::to_value(meta)?,
            arrays: Vec::new(),
        })
    }

    pub fn push(&mut self, name: &str, data: ArrayData) {
        self.arrays.push((name.to_string(), data));
    }

    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.meta.clone())?)
    }

    fn find(&self, name: &str) -> Result<&ArrayData> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::format("<container>", format!("missing array `{name}`")))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.find(name)? {
            ArrayData::F64(v) => Ok(v),
            _ => Err(Error::format("<container>", format!("array `{name}` is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.find(name)? {
            ArrayData::U64(v) => Ok(v),
            _ => Err(Error::format("<container>", format!("array `{name}` is not u64"))),
        }
    }

    pub fn u32s(&self, name: &str) -> Result<&[u32]> {
        match self.find(name)? {
            ArrayData::U32(v) => Ok(v),
            _ => Err(Error::format("<container>", format!("array `{name}` is not u32"))),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, d)| ArraySpec {
                    name: n.clone(),
                    dtype: d.dtype().into(),
                    len: d.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, data) in &self.arrays {
            match data {
                ArrayData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ArrayData::U64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ArrayData::U32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("<container>", "bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::format("<container>", format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for spec in header.arrays {
            let data = match spec.dtype.as_str() {
                "f64" => {
                    let mut buf = vec![0u8; spec.len * 8];
                    r.read_exact(&mut buf)?;
                    ArrayData::F64(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                "u64" => {
                    let mut buf = vec![0u8; spec.len * 8];
                    r.read_exact(&mut buf)?;
                    ArrayData::U64(buf.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                "u32" => {
                    let mut buf = vec![0u8; spec.len * 4];
                    r.read_exact(&mut buf)?;
                    ArrayData::U32(buf.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
                }
                other => return Err(Error::format("<container>", format!("unknown dtype `{other}`"))),
            };
            arrays.push((spec.name, data));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&bytes[..]).map_err(|e| match e {
            Error::Format { reason, .. } => Error::format(path, reason),
            other => other,
        })
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::format("<container>", format!("expected `{kind}`, found `{}`", self.kind)));
        }
        Ok(self)
    }
}

pub(crate) fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.iter().copied()).collect()
}

pub(crate) fn unflatten(data: &[f64], cols: usize) -> Result<Vec<Vec<f64>>> {
    if cols == 0 {
        return Ok(Vec::new());
    }
    if !data.len().is_multiple_of(cols) {
        return Err(Error::format("<container>", "array length not a multiple of row width"));
    }
    Ok(data.chunks_exact(cols).map(|c| c.to_vec()).collect())
}
