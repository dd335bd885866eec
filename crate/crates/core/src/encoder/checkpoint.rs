//! Binary checkpoints.
//!
//! Layout: magic `LPCK`, version (u32 LE), config JSON length (u32 LE) and
//! bytes, then per parameter in set order: name length (u32), name bytes,
//! rank (u32), dims (u64 each), values (f64 LE). The file ends after the
//! last parameter.

use std::fs;
use std::io::{Read, Write};
use std::path::Path as FsPath;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::numerics::{ParameterSet, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<C: Serialize, T: Scalar>(w: &mut impl Write, config: &C, params: &ParameterSet<T>) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(config)?;
    w.write_all(&len_u32(json.len())?.to_le_bytes())?;
    w.write_all(&json)?;
    for (name, t) in params.iter() {
        w.write_all(&len_u32(name.len())?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&len_u32(t.rank())?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {} does not fit in u32", n)))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {}", what)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<C: DeserializeOwned, T: Scalar>(r: &mut impl Read) -> Result<(C, ParameterSet<T>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            version, CHECKPOINT_VERSION
        )));
    }
    let n = c.u32("config length")? as usize;
    let config = serde_json::from_slice(c.take(n, "config")?)
        .map_err(|e| Error::Checkpoint(format!("bad config block: {}", e)))?;
    let mut params = ParameterSet::new();
    while c.pos < buf.len() {
        let n = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(n, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("dimension")? as usize);
        }
        let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let count = count.ok_or_else(|| Error::Checkpoint(format!("`{}` is too large", name)))?;
        let bytes = c.take(count.checked_mul(8).unwrap_or(usize::MAX), "values")?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok((config, params))
}

pub fn save_checkpoint<C: Serialize, T: Scalar>(file: impl AsRef<FsPath>, config: &C, params: &ParameterSet<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, config, params)?;
    fs::write(file, buf)?;
    Ok(())
}

pub fn load_checkpoint<C: DeserializeOwned, T: Scalar>(file: impl AsRef<FsPath>) -> Result<(C, ParameterSet<T>)> {
    read_checkpoint(&mut fs::File::open(file)?)
}

impl<T: Scalar> EncoderModel<T> {
    pub fn save(&self, file: impl AsRef<FsPath>) -> Result<()> {
        save_checkpoint(file, self.config(), self.params())
    }

    pub fn load(file: impl AsRef<FsPath>) -> Result<Self> {
        let (config, params): (EncoderConfig, _) = load_checkpoint(file)?;
        EncoderModel::from_params(config, params)
    }
}
