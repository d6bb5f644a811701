//! Checkpoint file layout:
//!
//! ```text
//! b"SDACKPT\0"            8 bytes
//! manifest length         u64 little-endian
//! manifest                UTF-8 JSON (see [`Manifest`])
//! payload                 every parameter value as f64 little-endian, in
//!                         manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"SDACKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub params: Vec<ParamEntry>,
    pub total_values: usize,
    /// Free-form descriptive metadata (layouts, action tables, seeds).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode(store: &ParamStore, config_hash: &str, meta: serde_json::Value) -> Result<Vec<u8>> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
            })
            .collect(),
        total_values: store.total_len(),
        meta,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * manifest.total_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a checkpoint. When `expected_hash` is given, a different
/// `config_hash` is refused.
pub fn decode(bytes: &[u8], expected_hash: Option<&str>) -> Result<(ParamStore, Manifest)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(NnError::Format("missing checkpoint magic".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(NnError::Format("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..len])?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(NnError::Version {
            expected: FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    if let Some(h) = expected_hash {
        if h != manifest.config_hash {
            return Err(NnError::ConfigHash {
                expected: h.to_string(),
                found: manifest.config_hash.clone(),
            });
        }
    }
    let declared: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if declared != manifest.total_values {
        return Err(NnError::Format(format!(
            "manifest declares {} values but its shapes sum to {declared}",
            manifest.total_values
        )));
    }
    let payload = &body[len..];
    if payload.len() != 8 * declared {
        return Err(NnError::Format(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            8 * declared
        )));
    }
    let mut store = ParamStore::new();
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for p in &manifest.params {
        let n = p.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        store.add(&p.name, &p.shape, data)?;
    }
    Ok((store, manifest))
}

pub fn save(
    path: impl AsRef<Path>,
    store: &ParamStore,
    config_hash: &str,
    meta: serde_json::Value,
) -> Result<()> {
    fs::write(path, encode(store, config_hash, meta)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(ParamStore, Manifest)> {
    decode(&fs::read(path)?, expected_hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.w", &[2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 1e300, -0.0])
            .unwrap();
        s.add("a.b", &[2], vec![0.1, 0.2]).unwrap();
        s
    }

    #[test]
    fn round_trip_bitwise() {
        let s = sample();
        let bytes = encode(&s, "abc", serde_json::json!({"k": 1})).unwrap();
        let (back, m) = decode(&bytes, Some("abc")).unwrap();
        assert_eq!(m.meta["k"], 1);
        for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.shape(), b.shape());
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn truncated_payload_fails() {
        let bytes = encode(&sample(), "abc", serde_json::Value::Null).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3], None).is_err());
    }

    #[test]
    fn count_mismatch_fails() {
        let s = sample();
        let mut bytes = encode(&s, "abc", serde_json::Value::Null).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[16..16 + len].to_vec()).unwrap();
        let tampered = json.replace("\"total_values\":8", "\"total_values\":9");
        assert_eq!(tampered.len(), json.len());
        bytes.splice(16..16 + len, tampered.into_bytes());
        assert!(matches!(decode(&bytes, None), Err(NnError::Format(_))));
    }

    #[test]
    fn hash_and_version_are_checked() {
        let bytes = encode(&sample(), "abc", serde_json::Value::Null).unwrap();
        assert!(matches!(
            decode(&bytes, Some("xyz")),
            Err(NnError::ConfigHash { .. })
        ));
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[16..16 + len].to_vec()).unwrap();
        let bumped = json.replace("\"format_version\":1", "\"format_version\":7");
        let mut b2 = bytes.clone();
        b2.splice(16..16 + len, bumped.into_bytes());
        assert!(matches!(decode(&b2, None), Err(NnError::Version { .. })));
    }
}
