//! `DGTA` tensor archive.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "DGTA" | version | entry count
//! per entry: name length | UTF-8 name | rank | extents... | f32 LE payload
//! metadata: the rest of the file, UTF-8 `key=value` lines separated by '\n'
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DGTA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("archive error: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

type Result<T> = std::result::Result<T, ArchiveError>;

/// Named `f32` tensors plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorArchive {
    entries: Vec<(String, Tensor<f32>)>,
    metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(ArchiveError::Invalid(format!("duplicate entry {name}")));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name).ok_or_else(|| ArchiveError::Invalid(format!("missing entry {name}")))
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) -> Result<()> {
        let key = key.into();
        let value = value.to_string();
        if key.is_empty() || key.contains(['=', '\n']) || value.contains('\n') {
            return Err(ArchiveError::Invalid(format!("metadata {key:?}={value:?} not representable")));
        }
        self.metadata.insert(key, value);
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Metadata value parsed as `T`.
    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key).ok_or_else(|| ArchiveError::Invalid(format!("missing metadata {key}")))?;
        raw.parse().map_err(|_| ArchiveError::Invalid(format!("metadata {key}={raw} is malformed")))
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (k, v) in &self.metadata {
            out.extend_from_slice(k.as_bytes());
            out.push(b'=');
            out.extend_from_slice(v.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(ArchiveError::Parse { offset: 0, msg: format!("bad magic {magic:?}") });
        }
        let at = r.pos;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(ArchiveError::Parse { offset: at, msg: format!("unsupported version {version}") });
        }
        let count = r.u32("entry count")?;
        let mut archive = Self::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| ArchiveError::Parse { offset: at + 4, msg: "name is not UTF-8".into() })?
                .to_string();
            let at = r.pos;
            let rank = r.u32("rank")? as usize;
            if rank == 0 {
                return Err(ArchiveError::Parse { offset: at, msg: format!("entry {name} has rank 0") });
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("extent")? as usize);
            }
            let at = r.pos;
            let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let Some(bytes_len) = numel.and_then(|n| n.checked_mul(4)) else {
                return Err(ArchiveError::Parse { offset: at, msg: format!("extents {dims:?} overflow") });
            };
            let payload = r.take(bytes_len, "payload")?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::new(dims, data).map_err(|e| ArchiveError::Parse { offset: at, msg: e.to_string() })?;
            if archive.get(&name).is_some() {
                return Err(ArchiveError::Parse { offset: at, msg: format!("duplicate entry {name}") });
            }
            archive.entries.push((name, t));
        }
        let meta_start = r.pos;
        let text = std::str::from_utf8(&bytes[meta_start..])
            .map_err(|e| ArchiveError::Parse { offset: meta_start + e.valid_up_to(), msg: "metadata is not UTF-8".into() })?;
        let mut offset = meta_start;
        for line in text.split_terminator('\n') {
            let Some((k, v)) = line.split_once('=') else {
                return Err(ArchiveError::Parse { offset, msg: format!("metadata line {line:?} lacks '='") });
            };
            archive.metadata.insert(k.to_string(), v.to_string());
            offset += line.len() + 1;
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| io_err(path, source))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| io_err(path, source))?;
        Self::from_bytes(&bytes)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ArchiveError {
    ArchiveError::Io { path: path.display().to_string(), source }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| ArchiveError::Parse {
            offset: self.pos,
            msg: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("w", Tensor::from_fn(&[2, 3], |i| i as f32 * 0.5 - 1.0)).unwrap();
        a.insert("odd", Tensor::new(vec![1], vec![f32::MIN_POSITIVE]).unwrap()).unwrap();
        a.set_meta("scale", 4).unwrap();
        a.set_meta("note", "a=b").unwrap();
        a
    }

    #[test]
    fn round_trip_is_bitwise() {
        let a = sample();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..4], b"DGTA");
        let b = TensorArchive::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_bytes(), bytes);
        assert_eq!(b.meta("note"), Some("a=b"));
        assert_eq!(b.meta_parse::<usize>("scale").unwrap(), 4);
    }

    #[test]
    fn corrupt_magic_names_offset_zero() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(ArchiveError::Parse { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload_names_offset() {
        let bytes = sample().to_bytes();
        // header 12, name len 4 + "w" 1, rank 4, extents 8 -> payload at 29
        let cut = &bytes[..29 + 7];
        match TensorArchive::from_bytes(cut) {
            Err(ArchiveError::Parse { offset, msg }) => {
                assert_eq!(offset, 29);
                assert!(msg.contains("payload"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = sample();
        assert!(a.insert("w", Tensor::zeros(&[1])).is_err());
        assert!(a.set_meta("bad\nkey", 1).is_err());
    }
}
