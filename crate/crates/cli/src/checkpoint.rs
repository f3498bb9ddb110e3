//! Versioned binary policy checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `SAFEPGCK` |
//! | 4     | format version (`u32`) |
//! | 8     | metadata length `m` (`u64`) |
//! | m     | metadata, UTF-8 JSON |
//! | 8     | coefficient count `n` (`u64`) |
//! | 8·n   | coefficients (`f64`) |
//!
//! The metadata holds the policy hyperparameters, the world, the run seed and
//! the index of the next training episode. Since every episode draws from the
//! stream `(seed, index)`, seed and index together are the full generator state.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use safepg::{PolicyHyper, PolicyParams, WorldParams};

use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 8] = *b"SAFEPGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub policy: PolicyHyper,
    pub world: WorldParams,
    pub seed: u64,
    pub next_episode: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic header)")]
    BadMagic,
    #[error("unsupported checkpoint version: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("checkpoint metadata is invalid: {0}")]
    Metadata(String),
    #[error("checkpoint holds {found} coefficients but the policy needs {expected}")]
    Length { expected: usize, found: usize },
}

impl Checkpoint {
    pub fn from_params(
        params: &PolicyParams,
        hyper: &PolicyHyper,
        world: &WorldParams,
        seed: u64,
        next_episode: u64,
    ) -> Self {
        Checkpoint {
            meta: CheckpointMeta { policy: hyper.clone(), world: world.clone(), seed, next_episode },
            coefficients: params.flat_coefficients().to_vec(),
        }
    }

    pub fn to_params(&self) -> safepg::Result<PolicyParams> {
        PolicyParams::from_hyper(&self.meta.policy)?.with_flat_coefficients(&self.coefficients)
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(28 + meta.len() + 8 * self.coefficients.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.coefficients.len() as u64).to_le_bytes());
        for c in &self.coefficients {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let found = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if found != FORMAT_VERSION {
            return Err(CheckpointError::Version { expected: FORMAT_VERSION, found });
        }
        let meta_len = r.u64("metadata length")?;
        let meta_len = usize::try_from(meta_len).map_err(|_| CheckpointError::Truncated("metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let count = r.u64("coefficient count")?;
        let count = usize::try_from(count).map_err(|_| CheckpointError::Truncated("coefficients"))?;
        if count.checked_mul(8).is_none_or(|n| n > r.remaining()) {
            return Err(CheckpointError::Truncated("coefficients"));
        }
        let coefficients = r
            .take(count * 8, "coefficients")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if r.remaining() > 0 {
            return Err(CheckpointError::Trailing(r.remaining()));
        }
        let expected = 2 * meta.policy.lattice.nx * meta.policy.lattice.ny;
        if count != expected {
            return Err(CheckpointError::Length { expected, found: count });
        }
        Ok(Checkpoint { meta, coefficients })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::runtime(format!("cannot read {}", path.display()), e))?;
        Self::decode(&bytes).map_err(|e| CliError::runtime(path.display(), e))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.encode())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if n > self.remaining() {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::runtime(format!("cannot write {}", path.display()), e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use safepg::Lattice;

    fn small() -> (PolicyHyper, PolicyParams) {
        let hyper =
            PolicyHyper { lattice: Lattice { origin: [0.0, 0.0], spacing: 2.5, nx: 5, ny: 5 }, ..Default::default() };
        let base = PolicyParams::from_hyper(&hyper).unwrap();
        let flat: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 1e3 + 1e-300).collect();
        (hyper, base.with_flat_coefficients(&flat).unwrap())
    }

    fn sample() -> Checkpoint {
        let (hyper, params) = small();
        Checkpoint::from_params(&params, &hyper, &WorldParams::default(), 42, 1000)
    }

    #[test]
    fn encode_decode_encode_is_identical() {
        let ck = sample();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        assert_eq!(&bytes[..8], b"SAFEPGCK");
    }

    #[test]
    fn restores_the_policy() {
        let (_, params) = small();
        let p = sample().to_params().unwrap();
        assert_eq!(p.flat_coefficients(), params.flat_coefficients());
        assert_eq!(p.mean([3.3, 4.4]), params.mean([3.3, 4.4]));
    }

    #[test]
    fn version_mismatch_names_both() {
        let mut bytes = sample().encode();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::decode(&bytes).unwrap_err();
        assert_eq!(err, CheckpointError::Version { expected: 1, found: 7 });
        let msg = err.to_string();
        assert!(msg.contains("expected 1") && msg.contains("found 7"));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().encode();
        assert_eq!(Checkpoint::decode(b"nope"), Err(CheckpointError::Truncated("magic")));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Checkpoint::decode(&bad), Err(CheckpointError::BadMagic));
        for cut in [10, 20, 40, bytes.len() - 1] {
            assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(Checkpoint::decode(&long), Err(CheckpointError::Trailing(1)));
        let mut meta = bytes.clone();
        meta[22] = b'#';
        assert!(matches!(Checkpoint::decode(&meta), Err(CheckpointError::Metadata(_))));
    }

    #[test]
    fn wrong_count_is_rejected() {
        let mut ck = sample();
        ck.coefficients.pop();
        let err = Checkpoint::decode(&ck.encode()).unwrap_err();
        assert_eq!(err, CheckpointError::Length { expected: 50, found: 49 });
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
