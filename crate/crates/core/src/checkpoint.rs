//! Binary checkpoints of a state plus run position.
//!
//! Layout (little endian): 8-byte magic, `u32` version, `u32` levels,
//! `u32` local dimension, `u32` bond dimension, `u8` translation-invariant
//! flag, `u64` step, `f64` time; then per level the disentanglers and the
//! isometries, each list as a `u32` count followed by tensors stored as
//! `u32` rank, `u32` dims and interleaved `f64` real/imaginary parts; then
//! the top weights as a `u32` count and `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use crate::mera::{MeraGeometry, MeraState};
use crate::tensor::{Tensor, C64};

pub const MAGIC: &[u8; 8] = b"TMERACK\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint geometry is inconsistent: {0}")]
    Geometry(String),
    #[error("checkpoint has {0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: MeraState,
    pub step: u64,
    pub tau: f64,
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend((t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend((d as u32).to_le_bytes());
    }
    for z in t.data() {
        out.extend(z.re.to_le_bytes());
        out.extend(z.im.to_le_bytes());
    }
}

pub fn encode(state: &MeraState, step: u64, tau: f64) -> Vec<u8> {
    let g = state.geometry();
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    for v in [g.levels(), g.d(), g.m()] {
        out.extend((v as u32).to_le_bytes());
    }
    out.push(state.is_ti() as u8);
    out.extend(step.to_le_bytes());
    out.extend(tau.to_le_bytes());
    for i in 1..=g.levels() {
        for list in [state.chi_level(i), state.gamma_level(i)] {
            out.extend((list.len() as u32).to_le_bytes());
            for t in list {
                put_tensor(&mut out, t);
            }
        }
    }
    out.extend((state.lambda().len() as u32).to_le_bytes());
    for x in state.lambda() {
        out.extend(x.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        if end > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Geometry(format!("tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len
            .filter(|&l| l <= (self.buf.len() - self.pos) / 16)
            .ok_or(CheckpointError::Truncated)?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(C64::new(self.f64()?, self.f64()?));
        }
        Tensor::new(dims, data).map_err(|e| CheckpointError::Geometry(e.to_string()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if buf.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(buf) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    if &buf[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut c = Cursor { buf, pos: 8 };
    let version = c.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let (levels, d, m) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let geometry = MeraGeometry::new(levels, d, m).map_err(|e| CheckpointError::Geometry(e.to_string()))?;
    let ti = match c.take(1)?[0] {
        0 => false,
        1 => true,
        x => return Err(CheckpointError::Geometry(format!("mode flag {x}"))),
    };
    let step = c.u64()?;
    let tau = c.f64()?;
    let mut chi = Vec::with_capacity(levels);
    let mut gamma = Vec::with_capacity(levels);
    for _ in 0..levels {
        for target in [&mut chi, &mut gamma] {
            let n = c.u32()? as usize;
            if n > geometry.sites() {
                return Err(CheckpointError::Geometry(format!("{n} tensors in one level")));
            }
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                list.push(c.tensor()?);
            }
            target.push(list);
        }
    }
    let n = c.u32()? as usize;
    if n > m {
        return Err(CheckpointError::Geometry(format!(
            "{n} top weights for bond dimension {m}"
        )));
    }
    let mut lambda = Vec::with_capacity(n);
    for _ in 0..n {
        lambda.push(c.f64()?);
    }
    if c.pos != buf.len() {
        return Err(CheckpointError::Trailing(buf.len() - c.pos));
    }
    let state = MeraState::from_parts(geometry, chi, gamma, lambda, ti)
        .map_err(|e| CheckpointError::Geometry(e.to_string()))?;
    Ok(Checkpoint { state, step, tau })
}

/// Writes atomically through a sibling temporary file.
pub fn save(path: &Path, state: &MeraState, step: u64, tau: f64) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode(state, step, tau))?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
