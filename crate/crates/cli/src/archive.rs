//! `RPTK` tensor archive.
//!
//! ```text
//! magic "RPTK" | version u16 | count u32
//! per entry: name_len u16 | name | dtype u8 | ndim u8 | dims u32 × ndim | data
//! crc32 u32 over every preceding byte
//! ```
//!
//! All integers and values are little-endian; data is row-major.

use std::collections::HashSet;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RPTK";
pub const VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ArchiveError {
    #[error("not a tensor archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u16),
    #[error("archive truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("{0} unexpected bytes before the checksum")]
    TrailingBytes(usize),
    #[error("entry {0} has a name that is not UTF-8")]
    InvalidName(usize),
    #[error("entry `{name}` has unknown dtype {dtype}")]
    UnknownDtype { name: String, dtype: u8 },
    #[error("duplicate entry name `{0}`")]
    DuplicateName(String),
    #[error("entry `{name}`: {reason}")]
    InvalidEntry { name: String, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Entry {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: TensorData) -> Result<Self, ArchiveError> {
        let entry = Self {
            name: name.into(),
            dims,
            data,
        };
        entry.validate()?;
        Ok(entry)
    }

    fn validate(&self) -> Result<(), ArchiveError> {
        let bad = |reason: String| ArchiveError::InvalidEntry {
            name: self.name.clone(),
            reason,
        };
        if self.name.is_empty() || self.name.len() > u16::MAX as usize {
            return Err(bad(format!("name length {} outside 1..=65535", self.name.len())));
        }
        if self.dims.len() > u8::MAX as usize {
            return Err(bad(format!("{} dimensions exceed 255", self.dims.len())));
        }
        if let Some(d) = self.dims.iter().find(|&&d| d == 0 || d > u32::MAX as usize) {
            return Err(bad(format!("dimension {d} is not a positive u32")));
        }
        let expected = self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if expected != Some(self.data.len()) {
            return Err(bad(format!(
                "dims {:?} need {} values, got {}",
                self.dims,
                expected.map_or("too many".to_string(), |e| e.to_string()),
                self.data.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorArchive {
    entries: Vec<Entry>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn push(&mut self, entry: Entry) -> Result<(), ArchiveError> {
        entry.validate()?;
        if self.get(&entry.name).is_some() {
            return Err(ArchiveError::DuplicateName(entry.name));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.data.dtype());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &e.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        if bytes.len() < 4 + 2 + 4 + 4 {
            return Err(ArchiveError::Truncated("header"));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);

        let mut r = Reader { buf: payload, pos: 4 };
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(ArchiveError::UnsupportedVersion(version));
        }
        // a length error is more telling than a checksum error on truncation,
        // so parse first and check the CRC afterwards
        let count = r.u32("entry count")? as usize;
        let mut archive = TensorArchive::new();
        let mut seen = HashSet::new();
        for index in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| ArchiveError::InvalidName(index))?
                .to_owned();
            let dtype = r.u8("dtype")?;
            let ndim = r.u8("ndim")? as usize;
            let dims = (0..ndim)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(ArchiveError::Truncated("data"))?;
            let data = match dtype {
                0 => TensorData::F32(
                    r.take(count.checked_mul(4).ok_or(ArchiveError::Truncated("data"))?, "data")?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                1 => TensorData::F64(
                    r.take(count.checked_mul(8).ok_or(ArchiveError::Truncated("data"))?, "data")?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                other => return Err(ArchiveError::UnknownDtype { name, dtype: other }),
            };
            if !seen.insert(name.clone()) {
                return Err(ArchiveError::DuplicateName(name));
            }
            let entry = Entry { name, dims, data };
            entry.validate()?;
            archive.entries.push(entry);
        }
        if r.pos != payload.len() {
            return Err(ArchiveError::TrailingBytes(payload.len() - r.pos));
        }
        if stored != computed {
            return Err(ArchiveError::ChecksumMismatch { stored, computed });
        }
        Ok(archive)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ArchiveError> {
        let end = self.pos.checked_add(n).ok_or(ArchiveError::Truncated(what))?;
        let slice = self.buf.get(self.pos..end).ok_or(ArchiveError::Truncated(what))?;
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ArchiveError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new();
        a.push(
            Entry::new(
                "w",
                vec![2, 3],
                TensorData::F64(vec![1.0, -2.0, 3.5, 0.0, 1e-300, f64::MAX]),
            )
            .unwrap(),
        )
        .unwrap();
        a.push(Entry::new("b", vec![2], TensorData::F32(vec![0.25, -7.0])).unwrap())
            .unwrap();
        a
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"RPTK");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..12], &[1, 0]);
        assert_eq!(bytes[12], b'w');
        assert_eq!(bytes[13], 1);
        assert_eq!(bytes[14], 2);
        let expected = 10 + (2 + 1 + 2 + 8 + 48) + (2 + 1 + 2 + 4 + 8) + 4;
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn round_trip() {
        let a = sample();
        let bytes = a.to_bytes();
        let b = TensorArchive::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        assert_eq!(
            TensorArchive::from_bytes(b"NOPE0000000000"),
            Err(ArchiveError::BadMagic)
        );
        assert!(matches!(
            TensorArchive::from_bytes(&bytes[..bytes.len() - 9]),
            Err(ArchiveError::Truncated(_))
        ));
        let mut flipped = bytes.clone();
        flipped[30] ^= 0x40; // inside the first tensor's data
        assert!(matches!(
            TensorArchive::from_bytes(&flipped),
            Err(ArchiveError::ChecksumMismatch { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert_eq!(TensorArchive::from_bytes(&v2), Err(ArchiveError::UnsupportedVersion(2)));
    }

    #[test]
    fn invariants_enforced() {
        let mut a = sample();
        assert!(matches!(
            a.push(Entry::new("w", vec![1], TensorData::F64(vec![0.0])).unwrap()),
            Err(ArchiveError::DuplicateName(_))
        ));
        assert!(Entry::new("x", vec![2, 2], TensorData::F64(vec![0.0; 3])).is_err());
        assert!(Entry::new("x", vec![0], TensorData::F64(vec![])).is_err());
        assert!(Entry::new("", vec![1], TensorData::F64(vec![0.0])).is_err());
    }
}
