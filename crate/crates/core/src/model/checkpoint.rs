//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic      8 bytes  "CSSTCKPT"
//! version    u32      currently 1
//! fusion     u32      0 none, 1 sigmoid_product, 2 logit_sum
//! dims       6 x u32  vocab, word_dim, feat_dim, hidden, answers, max_tokens
//! n_tensors  u32
//! per tensor:
//!   ndim     u32
//!   extents  ndim x u32
//!   values   f64 little-endian, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::{FusionMode, ModelDims, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CSSTCKPT";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.n_values() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, params.fusion.code());
    let d = params.dims;
    for v in [d.vocab, d.word_dim, d.feat_dim, d.hidden, d.answers, d.max_tokens] {
        put_u32(&mut out, v as u32);
    }
    put_u32(&mut out, params.tensors().len() as u32);
    for t in params.tensors() {
        put_u32(&mut out, t.shape().len() as u32);
        for &e in t.shape() {
            put_u32(&mut out, e as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Invalid(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }
}

pub fn decode(buf: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Invalid("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Invalid(format!("unsupported checkpoint version {version}")));
    }
    let fusion_code = c.u32()?;
    let fusion = FusionMode::from_code(fusion_code)
        .ok_or_else(|| Error::Invalid(format!("unknown fusion code {fusion_code}")))?;
    let mut d = [0usize; 6];
    for v in &mut d {
        *v = c.u32()? as usize;
    }
    let dims = ModelDims {
        vocab: d[0],
        word_dim: d[1],
        feat_dim: d[2],
        hidden: d[3],
        answers: d[4],
        max_tokens: d[5],
    };
    let n = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if c.pos != buf.len() {
        return Err(Error::Invalid(format!("{} trailing bytes in checkpoint", buf.len() - c.pos)));
    }
    ModelParams::from_tensors(dims, fusion, tensors)
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
