//! Passage-side stores: flat multi-vector dense index, inverted sparse index
//! and a centroid + 2-bit residual compressed dense index.
//!
//! All index files are little-endian and start with a 4-byte magic and a
//! `u32` version. Every file is written section by section so that
//! [`StorageReport`] can give exact on-disk byte counts.

mod compressed;
mod dense;
mod kmeans;
mod sparse;

use std::collections::HashSet;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub use compressed::{
    compress, compression_report, default_centroid_count, CompressedIndex, CompressionReport,
    DEFAULT_N_PROBE,
};
pub use dense::{build_dense, DenseIndex};
pub use kmeans::{kmeans, KMeans, KMEANS_MAX_ITERS, KMEANS_TOLERANCE};
pub use sparse::{build_sparse, build_sparse_from_vectors, SparseIndex};

pub const INDEX_VERSION: u32 = 1;

/// Exact byte counts of each file section, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageReport {
    pub sections: Vec<(&'static str, u64)>,
}

impl StorageReport {
    pub fn total(&self) -> u64 {
        self.sections.iter().map(|s| s.1).sum()
    }

    /// Bytes of the named section, 0 if absent.
    pub fn section(&self, name: &str) -> u64 {
        self.sections.iter().find(|s| s.0 == name).map_or(0, |s| s.1)
    }
}

/// In-memory file builder that records section boundaries.
struct SectionWriter {
    buf: Vec<u8>,
    mark: usize,
    sections: Vec<(&'static str, u64)>,
}

impl SectionWriter {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.write_u32::<LE>(INDEX_VERSION).unwrap();
        Self { buf, mark: 0, sections: Vec::new() }
    }

    fn end(&mut self, name: &'static str) {
        self.sections.push((name, (self.buf.len() - self.mark) as u64));
        self.mark = self.buf.len();
    }

    fn finish(self) -> (Vec<u8>, StorageReport) {
        debug_assert_eq!(self.mark, self.buf.len());
        (self.buf, StorageReport { sections: self.sections })
    }
}

// Writes through Vec<u8> cannot fail.
impl std::ops::Deref for SectionWriter {
    type Target = Vec<u8>;
    fn deref(&self) -> &Vec<u8> {
        &self.buf
    }
}

impl std::ops::DerefMut for SectionWriter {
    fn deref_mut(&mut self) -> &mut Vec<u8> {
        &mut self.buf
    }
}

fn write_doc_table(w: &mut SectionWriter, doc_ids: &[String]) {
    for id in doc_ids {
        w.write_u16::<LE>(id.len() as u16).unwrap();
        w.extend_from_slice(id.as_bytes());
    }
    w.end("doc_table");
}

fn write_offsets(w: &mut SectionWriter, offsets: &[(usize, usize)]) {
    for &(start, k) in offsets {
        w.write_u64::<LE>(start as u64).unwrap();
        w.write_u32::<LE>(k as u32).unwrap();
    }
    w.end("row_offsets");
}

fn write_f32s(w: &mut SectionWriter, xs: &[f32], name: &'static str) {
    for &x in xs {
        w.write_f32::<LE>(x).unwrap();
    }
    w.end(name);
}

fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

/// Reader over a whole index file held in memory.
struct FileReader {
    cur: Cursor<Vec<u8>>,
}

impl FileReader {
    fn open(path: impl AsRef<Path>, magic: &[u8; 4]) -> Result<Self> {
        Self::from_bytes(fs::read(path)?, magic)
    }

    fn from_bytes(bytes: Vec<u8>, magic: &[u8; 4]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut m = [0u8; 4];
        cur.read_exact(&mut m)?;
        if &m != magic {
            return Err(Error::Format(format!(
                "bad magic: expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = cur.read_u32::<LE>()?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        Ok(Self { cur })
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(self.cur.read_u32::<LE>()?)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(self.cur.read_u64::<LE>()?)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        self.check_remaining(n.saturating_mul(4))?;
        let mut out = vec![0f32; n];
        self.cur.read_f32_into::<LE>(&mut out)?;
        Ok(out)
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        self.check_remaining(n.saturating_mul(4))?;
        let mut out = vec![0u32; n];
        self.cur.read_u32_into::<LE>(&mut out)?;
        Ok(out)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        self.check_remaining(n)?;
        let mut out = vec![0u8; n];
        self.cur.read_exact(&mut out)?;
        Ok(out)
    }

    fn check_remaining(&self, n: usize) -> Result<()> {
        let left = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64) > left {
            return Err(Error::Format(format!("file truncated: need {n} bytes, {left} left")));
        }
        Ok(())
    }

    fn doc_table(&mut self, n: usize) -> Result<Vec<String>> {
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        let mut seen = HashSet::new();
        for i in 0..n {
            let len = self.cur.read_u16::<LE>()? as usize;
            let id = String::from_utf8(self.bytes(len)?)
                .map_err(|_| Error::Format(format!("doc {i}: id is not UTF-8")))?;
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateDoc(id));
            }
            ids.push(id);
        }
        Ok(ids)
    }

    /// Reads per-doc `(start, k)` pairs and checks they tile `0..rows`.
    fn offsets(&mut self, n: usize, rows: usize) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::with_capacity(n.min(1 << 20));
        let mut next = 0usize;
        for i in 0..n {
            let start = self.u64()? as usize;
            let k = self.u32()? as usize;
            if start != next || k == 0 {
                return Err(Error::Format(format!("doc {i}: bad row offset ({start}, {k})")));
            }
            next += k;
            out.push((start, k));
        }
        if next != rows {
            return Err(Error::Format(format!("offsets cover {next} rows, header says {rows}")));
        }
        Ok(out)
    }

    fn finish(self) -> Result<()> {
        if self.cur.position() != self.cur.get_ref().len() as u64 {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(())
    }
}

fn check_doc_id(id: &str, seen: &mut HashSet<String>) -> Result<()> {
    if id.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("doc id too long: {} bytes", id.len())));
    }
    if !seen.insert(id.to_string()) {
        return Err(Error::DuplicateDoc(id.to_string()));
    }
    Ok(())
}
