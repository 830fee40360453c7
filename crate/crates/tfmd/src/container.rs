//! Self-describing binary container: a JSON header followed by a
//! little-endian `f32` payload.
//!
//! ```text
//! b"TFMD" | u32 LE header length | header JSON (UTF-8) | f32 LE × values
//! ```
//!
//! The header always carries `format`, `version` and `values`; everything
//! else is format specific.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TFMD";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<H> {
    format: String,
    version: u32,
    values: usize,
    #[serde(flatten)]
    header: H,
}

pub fn encode<H: Serialize>(format: &str, header: &H, data: &[f32]) -> Vec<u8> {
    let env = Envelope {
        format: format.to_string(),
        version: VERSION,
        values: data.len(),
        header,
    };
    let json = serde_json::to_vec(&env).expect("headers are plain data");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend(data.iter().flat_map(|v| v.to_le_bytes()));
    out
}

pub fn decode<H: DeserializeOwned>(
    bytes: &[u8],
    format: &str,
    path: &Path,
) -> Result<(H, Vec<f32>)> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a TFMD container".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| bad("truncated header".into()))?;
    let env: Envelope<H> = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if env.format != format {
        return Err(bad(format!(
            "expected a {format} container, found {}",
            env.format
        )));
    }
    if env.version != VERSION {
        return Err(bad(format!(
            "unsupported container version {}",
            env.version
        )));
    }
    let payload = &bytes[8 + hlen..];
    if payload.len() != 4 * env.values {
        return Err(bad(format!(
            "payload holds {} bytes, header promises {} floats",
            payload.len(),
            env.values
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((env.header, data))
}

pub fn write<H: Serialize>(path: &Path, format: &str, header: &H, data: &[f32]) -> Result<()> {
    write_bytes(path, &encode(format, header, data))
}

pub fn read<H: DeserializeOwned>(path: &Path, format: &str) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, format, path)
}

/// Write a file, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))
}
