//! Named parameter storage and the `MPCK` checkpoint format: magic, u32
//! count, then per entry a u16 name length, the UTF-8 name, a u8 rank, `rank`
//! u32 dims and the f64 little-endian data.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::Tensor;

const MAGIC: &[u8; 4] = b"MPCK";

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    tensor: Tensor,
    trainable: bool,
}

/// Insertion-ordered named tensors: trainable weights plus non-trainable
/// buffers such as batch-norm running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) {
        self.entries.insert(name.into(), Entry { tensor, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.tensor))
    }

    /// Number of trainable scalars, optionally restricted to a name prefix.
    pub fn trainable_count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, e)| e.trainable && k.starts_with(prefix))
            .map(|(_, e)| e.tensor.numel())
            .sum()
    }

    /// Overwrites every entry of `self` with the same-named, same-shaped
    /// tensor from `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, entry) in self.entries.iter_mut() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks {name}")))?;
            if src.shape() != entry.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    src.shape(),
                    entry.tensor.shape()
                )));
            }
            entry.tensor = src.clone();
        }
        Ok(())
    }
}

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint; every entry is marked trainable.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("missing MPCK magic".into()));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?, true);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn write_checkpoint(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_roundtrip() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(&[2, 1], vec![1.5, -2.0]).unwrap(), true);
        store.insert("bn.running_mean", Tensor::new(&[1], vec![0.25]).unwrap(), false);
        let bytes = encode_checkpoint(&store);
        assert_eq!(&bytes[..4], b"MPCK");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..10], &1u16.to_le_bytes());
        assert_eq!(bytes[10], b'w');
        assert_eq!(bytes[11], 2);
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..28], &1.5f64.to_le_bytes());

        let back = decode_checkpoint(&bytes).unwrap();
        let mut fresh = store.clone();
        fresh.get_mut("w").unwrap().data_mut()[0] = 0.0;
        fresh.load_from(&back).unwrap();
        assert_eq!(fresh, store);
        assert_eq!(store.trainable_count(""), 2);
    }

    #[test]
    fn rejects_corruption() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[3]), true);
        let mut bytes = encode_checkpoint(&store);
        bytes.pop();
        assert!(decode_checkpoint(&bytes).is_err());
        assert!(decode_checkpoint(b"XXXX").is_err());

        let mut other = ParamStore::new();
        other.insert("w", Tensor::zeros(&[4]), true);
        assert!(store.clone().load_from(&other).is_err());
    }
}
