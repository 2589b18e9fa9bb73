//! AFM container: `"AFM1"`, little-endian `u32` height, width and channel
//! count, a `u8` dtype code (0 = `f32`), then the channel planes as
//! little-endian `f32`, each row-major. Channel counts are 1 (edge map) or 8
//! (affinity map); values must be finite and in `[0, 1]`.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::affinity::{AffinityMap, EdgeMap};
use crate::error::{Error, Result};
use crate::mask::GridDims;
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"AFM1";
pub const DTYPE_F32: u8 = 0;
const HEADER: usize = 4 + 3 * 4 + 1;

/// Contents of an AFM file.
#[derive(Debug, Clone, PartialEq)]
pub enum AfmData<T> {
    Affinity(AffinityMap<T>),
    Edge(EdgeMap<T>),
}

impl<T: Real> AfmData<T> {
    pub fn dims(&self) -> GridDims {
        match self {
            AfmData::Affinity(a) => a.dims(),
            AfmData::Edge(e) => e.dims(),
        }
    }

    pub fn into_affinity(self) -> Result<AffinityMap<T>> {
        match self {
            AfmData::Affinity(a) => Ok(a),
            AfmData::Edge(_) => Err(Error::Format("expected an 8-channel affinity map, found 1 channel".into())),
        }
    }

    pub fn into_edge(self) -> Result<EdgeMap<T>> {
        match self {
            AfmData::Edge(e) => Ok(e),
            AfmData::Affinity(_) => Err(Error::Format("expected a 1-channel edge map, found 8 channels".into())),
        }
    }
}

fn encode<T: Real>(dims: GridDims, channels: u32, values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.height() as u32).to_le_bytes());
    out.extend_from_slice(&(dims.width() as u32).to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.push(DTYPE_F32);
    for v in values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn encode_affinity<T: Real>(aff: &AffinityMap<T>) -> Vec<u8> {
    encode(aff.dims(), 8, aff.as_slice())
}

pub fn encode_edge<T: Real>(edge: &EdgeMap<T>) -> Vec<u8> {
    encode(edge.dims(), 1, edge.as_slice())
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<AfmData<T>> {
    let fmt = |m: String| Err(Error::Format(m));
    if bytes.len() < HEADER {
        return fmt(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return fmt(format!("bad magic {:?}", &bytes[..4]));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let (h, w, c) = (word(0) as usize, word(1) as usize, word(2));
    let dtype = bytes[16];
    if dtype != DTYPE_F32 {
        return fmt(format!("unsupported dtype code {dtype}"));
    }
    if c != 1 && c != 8 {
        return fmt(format!("unsupported channel count {c}"));
    }
    let dims = GridDims::new(h, w)?;
    let n = dims.len() * c as usize;
    let body = &bytes[HEADER..];
    if body.len() != 4 * n {
        let what = if body.len() < 4 * n { "truncated" } else { "trailing bytes in" };
        return fmt(format!("{what} payload: {} bytes for {h}x{w}x{c}", body.len()));
    }
    let mut values = Vec::with_capacity(n);
    for chunk in body.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
            return Err(Error::OutOfRange { what: "afm value", value: v as f64 });
        }
        values.push(T::lit(v as f64));
    }
    if c == 8 {
        Ok(AfmData::Affinity(AffinityMap::from_vec(dims, values)?))
    } else {
        Ok(AfmData::Edge(EdgeMap::from_vec(dims, values)?))
    }
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::OutOfRange { value, .. } => Error::Format(format!("{}: value {value} outside [0, 1]", path.display())),
        other => other,
    })
}

pub fn afm_read<T: Real>(path: &Path) -> Result<AfmData<T>> {
    with_path(path, decode(&read_bytes(path)?))
}

pub fn afm_write_affinity<T: Real>(aff: &AffinityMap<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_affinity(aff))
}

pub fn afm_write_edge<T: Real>(edge: &EdgeMap<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_edge(edge))
}
