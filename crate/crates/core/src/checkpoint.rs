//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CTDC" | u32 version | u64 meta length | meta JSON
//! u64 entry count | entries sorted by name:
//!   u32 name length | name | u32 rank | rank × u64 dims | f64 payload
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::config::Config;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CTDC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    /// Always `ego-relative`: inputs are translated so the last history point is the origin.
    pub frame: String,
    pub feature_dim: usize,
    /// Future normalization scale in meters; set once a denoiser is trained.
    pub scale: Option<f64>,
    /// Scorers present, in the order their scores condition the denoiser.
    pub constraints: Vec<String>,
    /// Scores the denoiser is conditioned on; 0 without a denoiser.
    pub score_count: usize,
    pub config: Config,
}

pub const FRAME: &str = "ego-relative";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: Meta,
    pub params: ParamStore,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        // ParamStore iterates in name order.
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }
        let meta_len = r.len()?;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let count = r.len()?;
        let mut params = ParamStore::new();
        let mut prev: Option<String> = None;
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            if prev.as_ref().is_some_and(|p| *p >= name) {
                return Err(Error::Checkpoint(format!("entry `{name}` out of order or duplicated")));
            }
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 3 {
                return Err(Error::Checkpoint(format!("entry `{name}` has rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<usize>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .ok_or_else(|| Error::Checkpoint(format!("entry `{name}` is too large")))?;
            let bytes = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("entry too large".into()))?)?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| Error::Checkpoint(format!("entry `{name}`: {e}")))?;
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("entry `{name}` holds non-finite values")));
            }
            params.insert(name.clone(), t);
            prev = Some(name);
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&buf)
    }
}
