//! Self-describing parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "RESDYNCK"
//! version u32
//! hlen    u64      length of the JSON header
//! header  hlen     {"meta": ..., "params": [{"name", "rows", "cols"}, ...]}
//! values  f64 * N  parameters in header order, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RESDYNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    params: Vec<Entry>,
}

pub fn encode(meta: &serde_json::Value, params: &[(&str, &Tensor)]) -> Result<Vec<u8>> {
    let header = Header {
        meta: meta.clone(),
        params: params
            .iter()
            .map(|(n, t)| Entry { name: n.to_string(), rows: t.rows(), cols: t.cols() })
            .collect(),
    };
    let hjson = serde_json::to_vec(&header)?;
    let n: usize = params.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(20 + hjson.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    out.extend_from_slice(&hjson);
    for (_, t) in params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut cursor = &bytes[20 + hlen..];
    let mut params = Vec::with_capacity(header.params.len());
    for e in header.params {
        let mut data = Vec::with_capacity(e.rows * e.cols);
        for _ in 0..e.rows * e.cols {
            let mut b = [0u8; 8];
            cursor.read_exact(&mut b).map_err(|_| bad("truncated values"))?;
            data.push(f64::from_le_bytes(b));
        }
        params.push((e.name, Tensor::from_vec(e.rows, e.cols, data)?));
    }
    if !cursor.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok((header.meta, params))
}

pub fn write(path: &Path, meta: &serde_json::Value, params: &[(&str, &Tensor)]) -> Result<()> {
    let bytes = encode(meta, params)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    decode(&std::fs::read(path)?)
}
