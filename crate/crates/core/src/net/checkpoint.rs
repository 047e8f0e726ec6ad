//! Flat versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "CRSLNKCK"
//! version      u32      (currently 1)
//! variant tag  u8
//! repeated until end of file:
//!   name length u32, name bytes (UTF-8)
//!   dtype tag   u8  (0 = f32, 1 = f64)
//!   rank        u32, extents u64 × rank
//!   values      raw little-endian, product(extents) elements
//! ```
//!
//! Network parameters use their dotted layer names; entries whose name starts
//! with `opt/` carry optimizer state and are ignored when only weights are loaded.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::model::Network;
use crate::net::spec::NetworkVariant;
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 8] = b"CRSLNKCK";
pub const VERSION: u32 = 1;

/// One stored tensor, kept in its on-disk precision.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredValues {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredValues {
    pub fn dtype(&self) -> DType {
        match self {
            StoredValues::F32(_) => DType::F32,
            StoredValues::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredValues::F32(t) => t.shape(),
            StoredValues::F64(t) => t.shape(),
        }
    }

    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        match self {
            StoredValues::F32(t) => t.cast(),
            StoredValues::F64(t) => t.cast(),
        }
    }

    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => StoredValues::F32(t.cast()),
            DType::F64 => StoredValues::F64(t.cast()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: NetworkVariant,
    pub entries: Vec<(String, StoredValues)>,
}

impl Checkpoint {
    pub fn from_network<T: Element>(net: &Network<T>) -> Self {
        let entries = net
            .params()
            .entries()
            .iter()
            .map(|e| (e.name.clone(), StoredValues::from_tensor(&e.value)))
            .collect();
        Self {
            variant: net.variant(),
            entries,
        }
    }

    pub fn get(&self, name: &str) -> Option<&StoredValues> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// First-stage width, recovered from the head (`1 × base/2 × 1 × 1`).
    pub fn base_width(&self) -> Result<usize> {
        let head = self
            .get("head.weight")
            .ok_or_else(|| Error::Checkpoint("missing head.weight".into()))?;
        match head.shape() {
            &[1, c, 1, 1] if c > 0 => Ok(2 * c),
            other => Err(Error::Checkpoint(format!("unexpected head.weight shape {other:?}"))),
        }
    }

    /// Rebuilds the network; every declared parameter must be present with matching shape.
    pub fn to_network<T: Element>(&self) -> Result<Network<T>> {
        let mut net = Network::<T>::new(self.variant, self.base_width()?)?;
        let names: Vec<String> = net.params().entries().iter().map(|e| e.name.clone()).collect();
        for name in names {
            let stored = self
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            net.params_mut()
                .set(&name, stored.to_tensor())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.variant.tag());
        for (name, values) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(values.dtype().tag());
            let shape = values.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match values {
                StoredValues::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                StoredValues::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.err(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(8, &format!("unsupported version {version}")));
        }
        let tag = r.take(1)?[0];
        let variant = NetworkVariant::from_tag(tag).ok_or_else(|| r.err(12, &format!("unknown variant tag {tag}")))?;
        let mut entries = Vec::new();
        while r.pos < bytes.len() {
            let start = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.err(start + 4, "name is not UTF-8"))?
                .to_string();
            let dtype_at = r.pos;
            let dtype = DType::from_tag(r.take(1)?[0]).ok_or_else(|| r.err(dtype_at, "unknown dtype tag"))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| r.err(r.pos, "extent overflow"))?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.err(r.pos, "extent product overflow"))?;
            let payload = r.take(count.checked_mul(dtype.size()).ok_or_else(|| r.err(r.pos, "payload overflow"))?)?;
            let values = match dtype {
                DType::F32 => StoredValues::F32(Tensor::new(
                    shape,
                    payload.chunks_exact(4).map(f32::read_le).collect(),
                )?),
                DType::F64 => StoredValues::F64(Tensor::new(
                    shape,
                    payload.chunks_exact(8).map(f64::read_le).collect(),
                )?),
            };
            entries.push((name, values));
        }
        Ok(Self { variant, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: &str) -> Error {
        Error::Checkpoint(format!("byte {offset}: {msg}"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.err(self.pos, &format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let ckpt = Checkpoint {
            variant: NetworkVariant::HorCrosslink,
            entries: vec![("a".into(), StoredValues::F32(Tensor::new([2], vec![1.0, -2.0]).unwrap()))],
        };
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(bytes[12], 3);
        assert_eq!(&bytes[13..17], &[1, 0, 0, 0]);
        assert_eq!(bytes[17], b'a');
        assert_eq!(bytes[18], 0);
        assert_eq!(&bytes[19..23], &[1, 0, 0, 0]);
        assert_eq!(&bytes[23..31], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[31..35], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 39);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let ckpt = Checkpoint {
            variant: NetworkVariant::Crosslink,
            entries: vec![("w".into(), StoredValues::F64(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap()))],
        };
        let bytes = ckpt.to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(Checkpoint::from_bytes(b"NOTACKPT\x01\0\0\0\0").is_err());
    }
}
