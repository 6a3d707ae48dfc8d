//! Per-text retrieval representations and the DRPR interchange file.
//!
//! DRPR layout (little-endian):
//!
//! ```text
//! magic "DRPR" | version u32 = 1 | count u64 | K u32 | H u32 | V u32 | flags u32
//! per item: id_len u16 | id UTF-8 | [k u32 if bit2] | k*H f32 hidden | logits if bit0
//! ```
//!
//! Flags: bit0 logits present; bit1 logit rows stored as top-t lists
//! (`t u32` then `t * (id u32, value f32)` per row); bit2 per-item K (header K
//! is then the maximum); bits 3-4 the producing decoder
//! (0 parallel, 1 sequential, 2 multistep).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const DRPR_MAGIC: &[u8; 4] = b"DRPR";
pub const DRPR_VERSION: u32 = 1;

pub const FLAG_LOGITS: u32 = 1;
pub const FLAG_TOP_T: u32 = 1 << 1;
pub const FLAG_VARIABLE_K: u32 = 1 << 2;
const SOURCE_SHIFT: u32 = 3;
const SOURCE_MASK: u32 = 0b11 << SOURCE_SHIFT;

/// Which decoding procedure produced a representation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Parallel,
    Sequential,
    Multistep,
}

impl Source {
    fn bits(self) -> u32 {
        match self {
            Source::Parallel => 0,
            Source::Sequential => 1,
            Source::Multistep => 2,
        }
    }

    fn from_bits(b: u32) -> Result<Self> {
        match b {
            0 => Ok(Source::Parallel),
            1 => Ok(Source::Sequential),
            2 => Ok(Source::Multistep),
            _ => Err(Error::Format(format!("unknown source code {b}"))),
        }
    }
}

/// Logit rows, either full `K x V` or truncated to the top entries per row.
#[derive(Debug, Clone, PartialEq)]
pub enum Logits {
    Dense(Vec<f32>),
    TopT(Vec<Vec<(u32, f32)>>),
}

/// K hidden vectors and (optionally) K logit vectors for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    k: usize,
    hidden_dim: usize,
    vocab_size: usize,
    hidden: Vec<f32>,
    logits: Option<Logits>,
    source: Source,
}

impl RepresentationSet {
    pub fn new(
        hidden: Vec<f32>,
        hidden_dim: usize,
        logits: Option<Logits>,
        vocab_size: usize,
        source: Source,
    ) -> Result<Self> {
        if hidden_dim == 0 || hidden.is_empty() || !hidden.len().is_multiple_of(hidden_dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} hidden values do not form rows of width {hidden_dim}",
                hidden.len()
            )));
        }
        let k = hidden.len() / hidden_dim;
        if hidden.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite hidden value".into()));
        }
        match &logits {
            Some(Logits::Dense(l)) => {
                if l.len() != k * vocab_size {
                    return Err(Error::DimensionMismatch(format!(
                        "{} logits for {k} rows of vocab {vocab_size}",
                        l.len()
                    )));
                }
                if l.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Format("non-finite logit".into()));
                }
            }
            Some(Logits::TopT(rows)) => {
                if rows.len() != k {
                    return Err(Error::DimensionMismatch(format!("{} logit rows for k = {k}", rows.len())));
                }
                for &(id, x) in rows.iter().flatten() {
                    if id as usize >= vocab_size || !x.is_finite() {
                        return Err(Error::Format(format!("bad top-t logit entry ({id}, {x})")));
                    }
                }
            }
            None => {}
        }
        Ok(Self { k, hidden_dim, vocab_size, hidden, logits, source })
    }

    /// Hidden rows only, no logits.
    pub fn from_hidden(hidden: Vec<f32>, hidden_dim: usize) -> Result<Self> {
        Self::new(hidden, hidden_dim, None, 0, Source::Parallel)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// Row-major `K x H` hidden matrix.
    pub fn hidden(&self) -> &[f32] {
        &self.hidden
    }

    pub fn hidden_row(&self, i: usize) -> &[f32] {
        &self.hidden[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    pub fn hidden_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.hidden.chunks_exact(self.hidden_dim)
    }

    pub fn logits(&self) -> Option<&Logits> {
        self.logits.as_ref()
    }

    /// Replaces the whole set by the element-wise mean of its hidden rows.
    /// Logits are dropped.
    pub fn mean_pooled(&self) -> Self {
        let mut mean = vec![0f64; self.hidden_dim];
        for row in self.hidden_rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
        let hidden = mean.iter().map(|m| (m / self.k as f64) as f32).collect();
        Self {
            k: 1,
            hidden_dim: self.hidden_dim,
            vocab_size: 0,
            hidden,
            logits: None,
            source: self.source,
        }
    }

    /// Keeps the `t` largest logits of each row (ties to the lower id), stored
    /// in ascending id order. Sets that already hold top-t rows are cut to `t`.
    pub fn to_top_t(&self, t: usize) -> Result<Self> {
        let rows: Vec<Vec<(u32, f32)>> = match self.logits.as_ref().ok_or(Error::MissingLogits)? {
            Logits::Dense(v) => v.chunks(self.vocab_size.max(1)).map(|r| top_entries(r.iter().copied().enumerate().map(|(i, x)| (i as u32, x)), t)).collect(),
            Logits::TopT(rows) => rows.iter().map(|r| top_entries(r.iter().copied(), t)).collect(),
        };
        Ok(Self { logits: Some(Logits::TopT(rows)), ..self.clone() })
    }

    /// Keeps only the first `k` representations.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.clamp(1, self.k);
        let logits = self.logits.as_ref().map(|l| match l {
            Logits::Dense(v) => Logits::Dense(v[..k * self.vocab_size].to_vec()),
            Logits::TopT(rows) => Logits::TopT(rows[..k].to_vec()),
        });
        Self {
            k,
            hidden_dim: self.hidden_dim,
            vocab_size: self.vocab_size,
            hidden: self.hidden[..k * self.hidden_dim].to_vec(),
            logits,
            source: self.source,
        }
    }
}

fn top_entries(entries: impl Iterator<Item = (u32, f32)>, t: usize) -> Vec<(u32, f32)> {
    let mut all: Vec<(u32, f32)> = entries.collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(t);
    all.sort_by_key(|e| e.0);
    all
}

/// Header fields of a DRPR file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrprHeader {
    pub version: u32,
    pub count: u64,
    pub k: u32,
    pub hidden_dim: u32,
    pub vocab_size: u32,
    pub flags: u32,
}

impl DrprHeader {
    pub fn has_logits(&self) -> bool {
        self.flags & FLAG_LOGITS != 0
    }

    pub fn source(&self) -> Result<Source> {
        Source::from_bits((self.flags & SOURCE_MASK) >> SOURCE_SHIFT)
    }
}

pub type Item = (String, RepresentationSet);

/// Serializes items to DRPR. All items must agree on H, V, source and on
/// whether (and how) logits are stored.
pub fn write_drpr<W: Write>(mut w: W, items: &[Item]) -> Result<DrprHeader> {
    let first = items.first().map(|(_, r)| r);
    let h = first.map_or(0, |r| r.hidden_dim);
    let v = first.map_or(0, |r| r.vocab_size);
    let source = first.map_or(Source::Parallel, |r| r.source);
    let with_logits = first.is_some_and(|r| r.logits.is_some());
    let top_t = first.is_some_and(|r| matches!(r.logits, Some(Logits::TopT(_))));
    let max_k = items.iter().map(|(_, r)| r.k).max().unwrap_or(0);
    let variable = items.iter().any(|(_, r)| r.k != max_k);

    for (id, r) in items {
        if r.hidden_dim != h || r.vocab_size != v {
            return Err(Error::DimensionMismatch(format!("item {id} has different dimensions")));
        }
        if r.source != source {
            return Err(Error::InvalidArgument(format!("item {id} comes from a different decoder")));
        }
        let this_top = matches!(r.logits, Some(Logits::TopT(_)));
        if r.logits.is_some() != with_logits || this_top != top_t {
            return Err(Error::InvalidArgument(format!("item {id} has a different logit layout")));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("item id too long: {} bytes", id.len())));
        }
    }

    let mut flags = source.bits() << SOURCE_SHIFT;
    if with_logits {
        flags |= FLAG_LOGITS;
    }
    if top_t {
        flags |= FLAG_TOP_T;
    }
    if variable {
        flags |= FLAG_VARIABLE_K;
    }
    let header = DrprHeader {
        version: DRPR_VERSION,
        count: items.len() as u64,
        k: max_k as u32,
        hidden_dim: h as u32,
        vocab_size: v as u32,
        flags,
    };
    w.write_all(DRPR_MAGIC)?;
    w.write_u32::<LE>(header.version)?;
    w.write_u64::<LE>(header.count)?;
    w.write_u32::<LE>(header.k)?;
    w.write_u32::<LE>(header.hidden_dim)?;
    w.write_u32::<LE>(header.vocab_size)?;
    w.write_u32::<LE>(header.flags)?;

    for (id, r) in items {
        w.write_u16::<LE>(id.len() as u16)?;
        w.write_all(id.as_bytes())?;
        if variable {
            w.write_u32::<LE>(r.k as u32)?;
        }
        for &x in &r.hidden {
            w.write_f32::<LE>(x)?;
        }
        match &r.logits {
            Some(Logits::Dense(l)) => {
                for &x in l {
                    w.write_f32::<LE>(x)?;
                }
            }
            Some(Logits::TopT(rows)) => {
                for row in rows {
                    w.write_u32::<LE>(row.len() as u32)?;
                    for &(id, x) in row {
                        w.write_u32::<LE>(id)?;
                        w.write_f32::<LE>(x)?;
                    }
                }
            }
            None => {}
        }
    }
    w.flush()?;
    Ok(header)
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut out = vec![0f32; n];
    r.read_f32_into::<LE>(&mut out)?;
    Ok(out)
}

/// Reads a DRPR stream, validating structure and finiteness.
pub fn read_drpr<R: Read>(mut r: R) -> Result<(DrprHeader, Vec<Item>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DRPR_MAGIC {
        return Err(Error::Format("not a DRPR file (bad magic)".into()));
    }
    let header = DrprHeader {
        version: r.read_u32::<LE>()?,
        count: r.read_u64::<LE>()?,
        k: r.read_u32::<LE>()?,
        hidden_dim: r.read_u32::<LE>()?,
        vocab_size: r.read_u32::<LE>()?,
        flags: r.read_u32::<LE>()?,
    };
    if header.version != DRPR_VERSION {
        return Err(Error::Format(format!("unsupported DRPR version {}", header.version)));
    }
    let known = FLAG_LOGITS | FLAG_TOP_T | FLAG_VARIABLE_K | SOURCE_MASK;
    if header.flags & !known != 0 {
        return Err(Error::Format(format!("unknown DRPR flags {:#x}", header.flags)));
    }
    if header.flags & FLAG_TOP_T != 0 && !header.has_logits() {
        return Err(Error::Format("top-t flag set without logits flag".into()));
    }
    let source = header.source()?;
    let h = header.hidden_dim as usize;
    let v = header.vocab_size as usize;
    let mut items = Vec::with_capacity(header.count.min(1 << 20) as usize);
    for n in 0..header.count {
        let len = r.read_u16::<LE>()? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| Error::Format(format!("item {n}: id is not UTF-8")))?;
        let k = if header.flags & FLAG_VARIABLE_K != 0 {
            let k = r.read_u32::<LE>()?;
            if k == 0 || k > header.k {
                return Err(Error::Format(format!("item {id}: k = {k} outside 1..={}", header.k)));
            }
            k as usize
        } else {
            header.k as usize
        };
        let hidden = read_f32s(&mut r, k * h)?;
        let logits = if !header.has_logits() {
            None
        } else if header.flags & FLAG_TOP_T != 0 {
            let mut rows = Vec::with_capacity(k);
            for _ in 0..k {
                let t = r.read_u32::<LE>()? as usize;
                let mut row = Vec::with_capacity(t.min(v));
                for _ in 0..t {
                    row.push((r.read_u32::<LE>()?, r.read_f32::<LE>()?));
                }
                rows.push(row);
            }
            Some(Logits::TopT(rows))
        } else {
            Some(Logits::Dense(read_f32s(&mut r, k * v)?))
        };
        let set = RepresentationSet::new(hidden, h, logits, v, source)
            .map_err(|e| Error::Format(format!("item {id}: {e}")))?;
        items.push((id, set));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last item".into()));
    }
    Ok((header, items))
}

pub fn save_drpr(path: impl AsRef<Path>, items: &[Item]) -> Result<DrprHeader> {
    write_drpr(BufWriter::new(fs::File::create(path)?), items)
}

pub fn load_drpr(path: impl AsRef<Path>) -> Result<(DrprHeader, Vec<Item>)> {
    read_drpr(BufReader::new(fs::File::open(path)?))
}

/// Summary of a structurally valid DRPR file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrprReport {
    pub header: DrprHeader,
    pub duplicate_ids: Vec<String>,
}

/// Structural check of a DRPR file; does not need a model.
pub fn validate_drpr(path: impl AsRef<Path>) -> Result<DrprReport> {
    let (header, items) = load_drpr(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut duplicate_ids = Vec::new();
    for (id, _) in &items {
        if !seen.insert(id.as_str()) {
            duplicate_ids.push(id.clone());
        }
    }
    Ok(DrprReport { header, duplicate_ids })
}
