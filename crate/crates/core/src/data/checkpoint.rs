use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AMCR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors plus optimizer state. Moment names follow the
/// `<optimizer>.<m|v>.<index>` convention used by the trainer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor<f64>)>,
    pub moments: Vec<(String, Tensor<f64>)>,
    pub t: u64,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Option<&Tensor<f64>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn put_records(out: &mut Vec<u8>, records: &[(String, Tensor<f64>)]) {
    out.extend((records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.rank() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend((d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend(x.to_le_bytes());
        }
    }
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend(ck.config_hash.to_le_bytes());
    out.extend(ck.t.to_le_bytes());
    put_records(&mut out, &ck.params);
    put_records(&mut out, &ck.moments);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn records(&mut self) -> Result<Vec<(String, Tensor<f64>)>> {
        let n = self.u32()? as usize;
        let mut out = Vec::new();
        for _ in 0..n {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))?
                .to_string();
            let rank = self.u32()? as usize;
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                dims.push(usize::try_from(self.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?);
            }
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|c| c.checked_mul(8).is_some())
                .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
            let raw = self.take(count * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("record {name:?}: {e}")))?;
            out.push((name, t));
        }
        Ok(out)
    }
}

/// Decode a checkpoint; any defect yields an error and no partial result.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
    }
    let config_hash = r.u64()?;
    let t = r.u64()?;
    let params = r.records()?;
    let moments = r.records()?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { params, moments, t, config_hash })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, write_checkpoint(ck))?;
    Ok(())
}

/// Load and, when `expected_hash` is given, verify the config hash.
pub fn load_checkpoint(path: &Path, expected_hash: Option<u64>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Dependency(format!("missing checkpoint {}", path.display())),
        _ => Error::Io(e),
    })?;
    let ck = read_checkpoint(&bytes)?;
    if let Some(h) = expected_hash {
        if h != ck.config_hash {
            return Err(Error::Config(format!(
                "checkpoint {} was written under config hash {:016x}, current is {h:016x}",
                path.display(),
                ck.config_hash
            )));
        }
    }
    Ok(ck)
}
