//! Checkpoint container: a JSON header followed by named parameter arrays
//! as 32-bit little-endian floats.
//!
//! Layout: 4-byte magic `FMCK`, u32 LE header length, the header JSON, then
//! the raw array payload in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, Parameters};
use crate::ssl::{LossBreakdown, Method};

const MAGIC: &[u8; 4] = b"FMCK";
const VERSION: u32 = 1;

/// Condensed training trace stored in the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub steps: usize,
    pub initial: Option<LossBreakdown>,
    pub fin: Option<LossBreakdown>,
}

impl LossSummary {
    pub fn empty() -> LossSummary {
        LossSummary {
            steps: 0,
            initial: None,
            fin: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: ModelConfig,
    method: Option<Method>,
    /// Free-form role marker: "pretrain" or a downstream regime.
    kind: String,
    seed: u64,
    steps: usize,
    loss_summary: LossSummary,
    arrays: Vec<ArrayEntry>,
}

/// Serialized parameters plus the config and training metadata needed to
/// reuse them across probing and fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub method: Option<Method>,
    pub kind: String,
    pub seed: u64,
    pub steps: usize,
    pub loss_summary: LossSummary,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn new_pretrain(
        config: ModelConfig,
        method: Method,
        seed: u64,
        steps: usize,
        loss_summary: LossSummary,
        params: Parameters,
    ) -> Checkpoint {
        Checkpoint {
            config,
            method: Some(method),
            kind: "pretrain".into(),
            seed,
            steps,
            loss_summary,
            params,
        }
    }

    /// Encode to the container byte layout. Deterministic: arrays are
    /// emitted in sorted-name order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for (name, value) in self.params.iter() {
            arrays.push(ArrayEntry {
                name: name.clone(),
                shape: value.shape().to_vec(),
            });
            for &v in value.iter() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let header = Header {
            version: VERSION,
            config: self.config.clone(),
            method: self.method,
            kind: self.kind.clone(),
            seed: self.seed,
            steps: self.steps,
            loss_summary: self.loss_summary.clone(),
            arrays,
        };
        let header_json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + header_json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::parse("not a checkpoint container"));
        }
        let header_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        if bytes.len() < 8 + header_len {
            return Err(Error::parse("truncated checkpoint header"));
        }
        let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
            .map_err(|e| Error::parse(format!("checkpoint header: {e}")))?;
        if header.version != VERSION {
            return Err(Error::parse(format!(
                "unknown checkpoint version {}",
                header.version
            )));
        }
        let mut offset = 8 + header_len;
        let mut params = Parameters::empty(header.seed);
        for entry in &header.arrays {
            let n: usize = entry.shape.iter().product();
            let end = offset + 4 * n;
            if bytes.len() < end {
                return Err(Error::parse(format!(
                    "array `{}` extends past end of file",
                    entry.name
                )));
            }
            let mut values = Vec::with_capacity(n);
            for chunk in bytes[offset..end].chunks_exact(4) {
                values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
            }
            params.insert(
                entry.name.clone(),
                ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
                    .map_err(|e| Error::parse(format!("array `{}`: {e}", entry.name)))?,
            );
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::parse("trailing bytes after last array"));
        }
        Ok(Checkpoint {
            config: header.config,
            method: header.method,
            kind: header.kind,
            seed: header.seed,
            steps: header.steps,
            loss_summary: header.loss_summary,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path)
            .map_err(|e| Error::parse(format!("cannot read `{}`: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig::new(625, 1, 16);
        let params = init_params(&cfg, &Method::Hl.parts(), 5);
        Checkpoint::new_pretrain(cfg, Method::Hl, 5, 10, LossSummary::empty(), params)
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        // f64 -> f32 -> f64 is lossy in general, but a second trip is stable.
        let bytes2 = back.to_bytes().unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.method, ck.method);
        assert_eq!(back.steps, 10);
    }

    #[test]
    fn save_load_round_trip() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fmck");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params.names(), ck.params.names());
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let ck = sample();
        let mut bytes = ck.to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());

        let mut bytes = ck.to_bytes().unwrap();
        let needle = b"\"version\":1";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[at + needle.len() - 1] = b'7';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
