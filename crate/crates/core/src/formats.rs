//! Binary file formats, all integers little-endian.
//!
//! Video/latent files (`ODVT`):
//! `"ODVT" | version u32 | rank u32 (=5) | 5 x extent u64 | f32 payload`.
//! Bit 24 of the version word marks a latent file; pixel files must hold
//! values in `[0, 1]`.
//!
//! Checkpoints (`ODCK`):
//! `"ODCK" | version u32 | count u64 | count x (name_len u32 | name | rank u32 | extents u64 | f32 payload)`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::init::NamedTensorMap;
use crate::tensor::Tensor;

pub const ODVT_MAGIC: &[u8; 4] = b"ODVT";
pub const ODVT_VERSION: u32 = 1;
/// Set in the version word of latent files.
pub const ODVT_LATENT_FLAG: u32 = 1 << 24;

pub const ODCK_MAGIC: &[u8; 4] = b"ODCK";
pub const ODCK_VERSION: u32 = 1;

/// Contents of an `ODVT` file.
#[derive(Clone, Debug, PartialEq)]
pub struct OdvtFile {
    pub tensor: Tensor,
    pub latent: bool,
}

impl OdvtFile {
    pub fn pixels(tensor: Tensor) -> Self {
        OdvtFile {
            tensor,
            latent: false,
        }
    }

    pub fn latent(tensor: Tensor) -> Self {
        OdvtFile {
            tensor,
            latent: true,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = self.tensor.dims5("odvt")?;
        if !self.latent {
            check_pixel_range(&self.tensor)?;
        }
        let mut out = Vec::with_capacity(4 + 4 + 4 + 40 + 4 * self.tensor.numel());
        out.extend_from_slice(ODVT_MAGIC);
        let version = ODVT_VERSION | if self.latent { ODVT_LATENT_FLAG } else { 0 };
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&5u32.to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f32s(&mut out, self.tensor.data());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "ODVT");
        if r.take(4)? != ODVT_MAGIC {
            return Err(Error::Format("not an ODVT file (bad magic)".into()));
        }
        let version = r.u32()?;
        let latent = version & ODVT_LATENT_FLAG != 0;
        if version & !ODVT_LATENT_FLAG != ODVT_VERSION {
            return Err(Error::Format(format!(
                "unsupported ODVT version {:#x}",
                version
            )));
        }
        let rank = r.u32()?;
        if rank != 5 {
            return Err(Error::Format(format!("ODVT rank must be 5, got {rank}")));
        }
        let shape = r.extents(5)?;
        let data = r.f32s(&shape)?;
        r.finish()?;
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
        if !latent {
            check_pixel_range(&tensor)?;
        }
        Ok(OdvtFile { tensor, latent })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_pixel_range(t: &Tensor) -> Result<()> {
    if t.data().iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::Format("pixel ODVT values must lie in [0, 1]".into()))
    }
}

pub fn checkpoint_to_bytes(map: &NamedTensorMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ODCK_MAGIC);
    out.extend_from_slice(&ODCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.len() as u64).to_le_bytes());
    for (name, t) in map {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f32s(&mut out, t.data());
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<NamedTensorMap> {
    let mut r = Reader::new(bytes, "ODCK");
    if r.take(4)? != ODCK_MAGIC {
        return Err(Error::Format("not an ODCK checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != ODCK_VERSION {
        return Err(Error::Format(format!("unsupported ODCK version {version}")));
    }
    let count = r.u64()?;
    let mut map = NamedTensorMap::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate entry {name:?}")));
        }
        let rank = r.u32()? as usize;
        let shape = r.extents(rank)?;
        let data = r.f32s(&shape)?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        map.insert(name, t);
    }
    r.finish()?;
    Ok(map)
}

pub fn save_checkpoint(map: &NamedTensorMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_bytes(map)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NamedTensorMap> {
    let path = path.as_ref();
    checkpoint_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(4 * data.len());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader {
            bytes,
            pos: 0,
            what,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated {} data at byte {}",
                self.what, self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn extents(&mut self, rank: usize) -> Result<Vec<usize>> {
        (0..rank)
            .map(|_| {
                let d = self.u64()?;
                usize::try_from(d)
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| Error::Format(format!("invalid extent {d}")))
            })
            .collect()
    }

    fn f32s(&mut self, shape: &[usize]) -> Result<Vec<f32>> {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("extents {shape:?} overflow")))?;
        let raw = self.take(n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {} data",
                self.bytes.len() - self.pos,
                self.what
            )));
        }
        Ok(())
    }
}
