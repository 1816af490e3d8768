//! Checkpoint persistence. Version-1 layout, all integers little-endian:
//!
//! ```text
//! "MIQA"                      4 bytes magic
//! version                     u16 (= 1)
//! architecture fingerprint    32 bytes
//! config hash                 32 bytes
//! epoch                       u32
//! tensor count                u32
//! per tensor:
//!   name length               u16, then that many UTF-8 bytes
//!   rank                      u8, then rank × u32 dims
//!   payload                   numel × f32, row-major
//! ```
//!
//! Payloads are 32-bit floats on the wire, so round-trips are bitwise for
//! f32 parameter sets.

use std::io::{Read, Write};
use std::path::Path;

use miqa_core::model::{BackboneSpec, ParamSet};
use miqa_core::tensor::Tensor;

use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"MIQA";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamSet<f32>,
    pub config_hash: [u8; 32],
    pub epoch: u32,
}

impl Checkpoint {
    /// Error unless this checkpoint was produced by `spec`'s architecture.
    pub fn verify_architecture(&self, spec: &BackboneSpec) -> Result<()> {
        if *self.params.fingerprint() == spec.fingerprint() {
            Ok(())
        } else {
            Err(CliError::FingerprintMismatch)
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(ckpt.params.fingerprint());
    buf.extend_from_slice(&ckpt.config_hash);
    buf.extend_from_slice(&ckpt.epoch.to_le_bytes());
    let count = u32::try_from(ckpt.params.entries().len())
        .map_err(|_| CliError::CorruptCheckpoint("tensor count exceeds u32".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in ckpt.params.entries() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| CliError::CorruptCheckpoint(format!("name `{name}` exceeds u16")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(tensor.shape().len())
            .map_err(|_| CliError::CorruptCheckpoint("rank exceeds u8".into()))?;
        buf.push(rank);
        for &d in tensor.shape() {
            let d = u32::try_from(d)
                .map_err(|_| CliError::CorruptCheckpoint("dimension exceeds u32".into()))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CliError::CorruptCheckpoint(format!("truncated while reading {what}"))
        })?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, at: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CliError::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CliError::CheckpointVersion { found: version, expected: VERSION });
    }
    let fingerprint: [u8; 32] = r.take(32, "fingerprint")?.try_into().unwrap();
    let config_hash: [u8; 32] = r.take(32, "config hash")?.try_into().unwrap();
    let epoch = r.u32("epoch")?;
    let count = r.u32("tensor count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CliError::CorruptCheckpoint(format!("tensor {i}: name not UTF-8")))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 4, "payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(&shape, data)
            .map_err(|e| CliError::CorruptCheckpoint(format!("tensor `{name}`: {e}")))?;
        entries.push((name, tensor));
    }
    if r.at != bytes.len() {
        return Err(CliError::CorruptCheckpoint(format!(
            "{} trailing bytes after tensor table",
            bytes.len() - r.at
        )));
    }
    let params = ParamSet::from_entries(entries, fingerprint)
        .map_err(|e| CliError::CorruptCheckpoint(e.to_string()))?;
    Ok(Checkpoint { params, config_hash, epoch })
}
