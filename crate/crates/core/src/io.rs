//! Little-endian binary formats for fields (`VRDT`) and layer parameters
//! (`VRDP`).
//!
//! ```text
//! VRDT: "VRDT" | u32 version=1 | u32 rank=3 | u64 height | u64 width | u64 channels
//!       | f64 × (height·width·channels), row-major, channel innermost
//! VRDP: "VRDP" | u32 version=1 | u32 n_in | u32 n_out
//!       | f64 r_q[n_out²] | f64 r_b[n_out²] | f64 q_i[n_out·n_in] | f64 b_i[n_out·n_in]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Result, VrdError};
use crate::field::Field;
use crate::linalg::Mat;
use crate::vrd::VrdParams;

pub const TENSOR_MAGIC: &[u8; 4] = b"VRDT";
pub const PARAMS_MAGIC: &[u8; 4] = b"VRDP";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(what: &'static str, bytes: &'a [u8]) -> Self {
        Reader {
            what,
            bytes,
            pos: 0,
        }
    }

    fn fail(&self, offset: usize, msg: impl Into<String>) -> VrdError {
        VrdError::Format {
            what: self.what,
            offset,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(self.fail(0, format!("bad magic {got:?}")));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.pos;
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.fail(start, "size overflow"))?,
        )?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(self.fail(start + 8 * k, "non-finite value"));
        }
        Ok(values)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let at = self.pos;
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(self.fail(at, format!("unsupported version {v}")));
        }
        Ok(())
    }
}

pub fn encode_field(f: &Field) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + 8 * f.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in [f.height(), f.width(), f.channels()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in f.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let mut r = Reader::new("VRDT tensor", bytes);
    r.magic(TENSOR_MAGIC)?;
    r.version()?;
    let at = r.pos;
    let rank = r.u32()?;
    if rank != 3 {
        return Err(r.fail(at, format!("rank must be 3, got {rank}")));
    }
    let at = r.pos;
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = usize::try_from(r.u64()?).map_err(|_| r.fail(at, "dimension too large"))?;
    }
    if dims.contains(&0) {
        return Err(r.fail(at, format!("zero dimension in {dims:?}")));
    }
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| r.fail(at, "dimensions overflow"))?;
    let data = r.f64s(n)?;
    r.finish()?;
    Field::from_vec(dims[0], dims[1], dims[2], data)
}

pub fn encode_params(p: &VrdParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * p.len());
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.n_in as u32).to_le_bytes());
    out.extend_from_slice(&(p.n_out as u32).to_le_bytes());
    for v in p.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<VrdParams> {
    let mut r = Reader::new("VRDP parameters", bytes);
    r.magic(PARAMS_MAGIC)?;
    r.version()?;
    let at = r.pos;
    let n_in = r.u32()? as usize;
    let n_out = r.u32()? as usize;
    if n_out == 0 {
        return Err(r.fail(at, "n_out must be positive"));
    }
    let r_q = r.f64s(n_out * n_out)?;
    let r_b = r.f64s(n_out * n_out)?;
    let q_i = r.f64s(n_out * n_in)?;
    let b_i = r.f64s(n_out * n_in)?;
    r.finish()?;
    let p = VrdParams {
        n_in,
        n_out,
        r_b: Mat::from_vec(n_out, n_out, r_b)?,
        r_q: Mat::from_vec(n_out, n_out, r_q)?,
        b_i: Mat::from_vec(n_out, n_in, b_i)?,
        q_i: Mat::from_vec(n_out, n_in, q_i)?,
    };
    p.validate()?;
    Ok(p)
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    decode_field(&fs::read(path)?)
}

pub fn write_field(path: impl AsRef<Path>, f: &Field) -> Result<()> {
    Ok(fs::write(path, encode_field(f))?)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<VrdParams> {
    decode_params(&fs::read(path)?)
}

pub fn write_params(path: impl AsRef<Path>, p: &VrdParams) -> Result<()> {
    Ok(fs::write(path, encode_params(p))?)
}
