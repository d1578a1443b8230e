//! Versioned binary model checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "PMCK" | version u8 = 1 | kind u8 | reserved u16 = 0
//! dim_count u32 | dims u64 * dim_count
//! layer_count u32
//! per layer: in u32 | out u32 | activation u8 | tau f64
//!            | weights f64 * (in * out), row-major | bias f64 * out
//! ```

use std::fs;
use std::path::Path;

use super::layer::{Activation, Dense};
use super::matrix::Matrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PMCK";
const VERSION: u8 = 1;

/// Model-agnostic checkpoint payload: a kind tag, the integer dimensions
/// needed to rewire the layers, and the layers in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBlob {
    pub kind: u8,
    pub dims: Vec<u64>,
    pub layers: Vec<Dense>,
}

pub fn encode(blob: &ModelBlob) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(blob.kind);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(blob.dims.len() as u32).to_le_bytes());
    for d in &blob.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(blob.layers.len() as u32).to_le_bytes());
    for l in &blob.layers {
        out.extend_from_slice(&(l.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.output_dim() as u32).to_le_bytes());
        out.push(l.activation.tag());
        out.extend_from_slice(&l.activation.tau().to_le_bytes());
        for v in l.weights.data().iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn err(&self, message: String) -> Error {
        Error::Format { offset: self.pos as u64, message }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<ModelBlob> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad checkpoint magic".into() });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let kind = r.u8()?;
    r.take(2)?;
    let dim_count = r.u32()? as usize;
    let dims = (0..dim_count).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let tag = r.u8()?;
        let tau = r.f64()?;
        let activation =
            Activation::from_tag(tag, tau).ok_or_else(|| r.err(format!("unknown activation tag {tag}")))?;
        let weights = (0..fan_in * fan_out).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let bias = (0..fan_out).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Dense { weights: Matrix::from_vec(fan_in, fan_out, weights), bias, activation });
    }
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(ModelBlob { kind, dims, layers })
}

pub fn save(path: impl AsRef<Path>, blob: &ModelBlob) -> Result<()> {
    fs::write(path, encode(blob))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelBlob> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob() -> ModelBlob {
        ModelBlob {
            kind: 3,
            dims: vec![64, 4, 1],
            layers: vec![
                Dense::new(4, 3, Activation::Relu, 1),
                Dense::new(3, 2, Activation::SparseSoftmax(1e-4), 2),
                Dense::new(2, 1, Activation::Sigmoid, 3),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let b = blob();
        let bytes = encode(&b);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&blob());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(matches!(decode(&ver), Err(Error::Format { offset: 4, .. })));
    }
}
