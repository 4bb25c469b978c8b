use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DMLW";
pub const VERSION: u32 = 1;

const BUFFER_SUFFIXES: [&str; 2] = [".running_mean", ".running_var"];
const BUFFER_PREFIXES: [&str; 2] = ["pca.", "manifest."];

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: Tensor,
    pub trainable: bool,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) step: u64,
}

impl ParamEntry {
    fn new(value: Tensor, trainable: bool) -> Self {
        let n = value.len();
        Self {
            value,
            trainable,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Named parameter arrays plus their AdamW moment state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), ParamEntry::new(value, true));
    }

    /// Inserts a non-trainable array such as batch-norm running statistics.
    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), ParamEntry::new(value, false));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub(crate) fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Moves every entry of `other` into `self` under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: ParamStore) {
        for (k, e) in other.entries {
            self.entries.insert(format!("{prefix}{k}"), e);
        }
    }

    /// Copies out the entries whose name starts with `prefix`, stripping it.
    pub fn extract(&self, prefix: &str) -> ParamStore {
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, e)| k.strip_prefix(prefix).map(|s| (s.to_string(), e.clone())))
            .collect();
        ParamStore { entries }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(e.value.shape.len() as u32).to_le_bytes());
            for &d in &e.value.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.value.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing DMLW magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported DMLW version {version}")));
        }
        let mut store = ParamStore::new();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n * 8)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let value = Tensor { shape, data };
            if BUFFER_SUFFIXES.iter().any(|s| name.ends_with(s)) || BUFFER_PREFIXES.iter().any(|p| name.starts_with(p)) {
                store.insert_buffer(name, value);
            } else {
                store.insert(name, value);
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated DMLW container at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap());
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"DMLW");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(b[12], b'w');
        // name len + name + rank + 2 dims + 2 f64
        assert_eq!(b.len(), 8 + 4 + 1 + 4 + 8 + 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(ParamStore::from_bytes(b"XXXX\x01\0\0\0").is_err());
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(&[3]));
        let b = s.to_bytes();
        assert!(ParamStore::from_bytes(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn container_round_trips(
            entries in prop::collection::btree_map("[a-z.]{1,12}", prop::collection::vec(-1e6f64..1e6, 0..20), 0..6)
        ) {
            let mut s = ParamStore::new();
            for (k, v) in &entries {
                s.insert(k.clone(), Tensor::new(vec![v.len()], v.clone()).unwrap());
            }
            let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back.len(), s.len());
            for (k, t) in s.iter() {
                prop_assert_eq!(back.get(k).unwrap(), t);
            }
        }
    }
}
