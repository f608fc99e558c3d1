//! Versioned binary checkpoint container.
//!
//! Layout, little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 8  | magic `PSRLCKPT` |
//! | 4  | format version |
//! | 2 + n | code version string (u16 length prefix) |
//! | 32 | SHA-256 of the experiment config |
//! | 8  | payload length |
//! | 32 | SHA-256 of the payload |
//! | n  | payload (JSON) |

use std::path::Path;

use psrl_core::agent::{Agent, EpisodeRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_atomic, CODE_VERSION};

pub const MAGIC: &[u8; 8] = b"PSRLCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.psrl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub trial: usize,
    pub seed: u64,
    pub agent: Agent,
    pub records: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialState>,
}

impl Checkpoint {
    pub fn is_finished(&self) -> bool {
        self.trials.iter().all(|t| t.agent.is_finished())
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = serde_json::to_vec(self).expect("checkpoint serializes");
        let version = CODE_VERSION.as_bytes();
        let mut out = Vec::with_capacity(payload.len() + 128);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(version.len() as u16).to_le_bytes());
        out.extend_from_slice(version);
        out.extend_from_slice(&self.config.hash());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CliError::Integrity("not a checkpoint file (bad magic)".into()));
        }
        let format = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if format != FORMAT_VERSION {
            return Err(CliError::Version(format!(
                "format version {format}, this build reads {FORMAT_VERSION}"
            )));
        }
        let vlen = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let version = String::from_utf8_lossy(r.take(vlen)?).into_owned();
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let payload = r.take(len)?;
        if r.pos != bytes.len() {
            return Err(CliError::Integrity(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let actual: [u8; 32] = Sha256::digest(payload).into();
        if actual != digest {
            return Err(CliError::Integrity("payload checksum mismatch".into()));
        }
        if version != CODE_VERSION {
            return Err(CliError::Version(format!(
                "written by version {version}, this is {CODE_VERSION}"
            )));
        }
        let ckpt: Checkpoint =
            serde_json::from_slice(payload).map_err(|e| CliError::Integrity(format!("payload does not parse: {e}")))?;
        if ckpt.config.hash() != config_hash {
            return Err(CliError::Integrity(format!(
                "config hash {} does not match header {}",
                ckpt.config.hash_hex(),
                hex(&config_hash)
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::Integrity("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}
