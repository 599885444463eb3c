//! Exact maximum-inner-product index over phrase vectors.
//!
//! Entries are sorted by `(ctx_id, start, end)` so each context owns one
//! contiguous range, and equal scores are broken by entry position. Vectors
//! are stored as `f32`; scores are accumulated in `f64`.
//!
//! File layout (little-endian):
//!
//! ```text
//! "PQIX" | version u32 | dim u32 | entries u64
//! contexts u64 | per context: id_len u16, id bytes, start u64, len u64
//! entries * dim f32
//! per entry: start u32, end u32, text_len u32, text bytes
//! crc32 of everything above
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use crate::dual::PhraseVector;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PQIX";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntryMeta {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextRange {
    pub id: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhraseIndex {
    dim: usize,
    vectors: Vec<f32>,
    meta: Vec<EntryMeta>,
    contexts: Vec<ContextRange>,
    lookup: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchHit {
    /// Position of the entry in the index.
    pub entry: usize,
    pub score: f64,
    pub rank: usize,
}

/// Borrowed view of one entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry<'a> {
    pub ctx_id: &'a str,
    pub start: usize,
    pub end: usize,
    pub text: &'a str,
    pub vector: &'a [f32],
}

fn lookup_of(contexts: &[ContextRange]) -> HashMap<String, usize> {
    contexts.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect()
}

pub fn build_index(vectors: &[PhraseVector]) -> Result<PhraseIndex> {
    let dim = vectors.first().map_or(0, |v| v.values.len());
    for v in vectors {
        if v.values.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: v.values.len() });
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("phrase vector {}:{}-{}", v.ctx_id, v.start, v.end)));
        }
    }
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let key = |i: &usize| (&vectors[*i].ctx_id, vectors[*i].start, vectors[*i].end);
    order.sort_by(|a, b| key(a).cmp(&key(b)));
    for w in order.windows(2) {
        if key(&w[0]) == key(&w[1]) {
            let v = &vectors[w[0]];
            return Err(Error::DuplicateEntry { ctx_id: v.ctx_id.clone(), start: v.start, end: v.end });
        }
    }
    let mut flat = Vec::with_capacity(vectors.len() * dim);
    let mut meta = Vec::with_capacity(vectors.len());
    let mut contexts: Vec<ContextRange> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let v = &vectors[i];
        flat.extend(v.values.iter().map(|&x| x as f32));
        meta.push(EntryMeta { start: v.start, end: v.end, text: v.text.clone() });
        match contexts.last_mut() {
            Some(c) if c.id == v.ctx_id => c.len += 1,
            _ => contexts.push(ContextRange { id: v.ctx_id.clone(), start: pos, len: 1 }),
        }
    }
    let lookup = lookup_of(&contexts);
    Ok(PhraseIndex { dim, vectors: flat, meta, contexts, lookup })
}

fn cmp_hits(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl PhraseIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn contexts(&self) -> &[ContextRange] {
        &self.contexts
    }

    pub fn context_range(&self, ctx_id: &str) -> Option<&ContextRange> {
        self.lookup.get(ctx_id).map(|&i| &self.contexts[i])
    }

    fn ctx_of(&self, entry: usize) -> &ContextRange {
        let i = self.contexts.partition_point(|c| c.start + c.len <= entry);
        &self.contexts[i]
    }

    pub fn entry(&self, i: usize) -> Entry<'_> {
        let m = &self.meta[i];
        Entry {
            ctx_id: &self.ctx_of(i).id,
            start: m.start,
            end: m.end,
            text: &m.text,
            vector: &self.vectors[i * self.dim..(i + 1) * self.dim],
        }
    }

    /// Inner product of `q` with entry `i`, accumulated in `f64`.
    pub fn score(&self, q: &[f64], i: usize) -> f64 {
        self.vectors[i * self.dim..(i + 1) * self.dim].iter().zip(q).map(|(&v, &x)| v as f64 * x).sum()
    }

    /// Exact top-`top_k` by inner product, optionally restricted to one
    /// context. Ties go to the earlier entry.
    pub fn search(&self, q: &[f64], top_k: usize, ctx_filter: Option<&str>) -> Result<Vec<SearchHit>> {
        if q.len() != self.dim && !self.is_empty() {
            return Err(Error::DimensionMismatch { expected: self.dim, found: q.len() });
        }
        let range = match ctx_filter {
            Some(id) => {
                let c = self.context_range(id).ok_or_else(|| Error::UnknownContext(id.to_string()))?;
                c.start..c.start + c.len
            }
            None => 0..self.len(),
        };
        let mut scored: Vec<(usize, f64)> = range.map(|i| (i, self.score(q, i))).collect();
        if top_k == 0 {
            return Ok(Vec::new());
        }
        if scored.len() > top_k {
            scored.select_nth_unstable_by(top_k - 1, cmp_hits);
            scored.truncate(top_k);
        }
        scored.sort_by(cmp_hits);
        Ok(scored.into_iter().enumerate().map(|(rank, (entry, score))| SearchHit { entry, score, rank }).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(32 + self.vectors.len() * 4 + self.meta.len() * 16);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.dim as u32).to_le_bytes());
        b.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        b.extend_from_slice(&(self.contexts.len() as u64).to_le_bytes());
        for c in &self.contexts {
            b.extend_from_slice(&(c.id.len() as u16).to_le_bytes());
            b.extend_from_slice(c.id.as_bytes());
            b.extend_from_slice(&(c.start as u64).to_le_bytes());
            b.extend_from_slice(&(c.len as u64).to_le_bytes());
        }
        for v in &self.vectors {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for m in &self.meta {
            b.extend_from_slice(&(m.start as u32).to_le_bytes());
            b.extend_from_slice(&(m.end as u32).to_le_bytes());
            b.extend_from_slice(&(m.text.len() as u32).to_le_bytes());
            b.extend_from_slice(m.text.as_bytes());
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a phrase index (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let dim = r.u32()? as usize;
        let n = r.u64()? as usize;
        let n_ctx = r.u64()? as usize;
        let mut contexts = Vec::new();
        let mut expected_start = 0usize;
        for _ in 0..n_ctx {
            let len = r.u16()? as usize;
            let id = r.string(len)?;
            let start = r.u64()? as usize;
            let len = r.u64()? as usize;
            if start != expected_start || len == 0 {
                return Err(Error::Format(format!("context {id:?} range is not contiguous")));
            }
            expected_start = start + len;
            contexts.push(ContextRange { id, start, len });
        }
        if expected_start != n {
            return Err(Error::Format("context table does not cover every entry".into()));
        }
        let floats = n.checked_mul(dim).ok_or_else(|| Error::Format("entry block too large".into()))?;
        let raw = r.take(floats.checked_mul(4).ok_or_else(|| Error::Format("entry block too large".into()))?)?;
        let vectors = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let mut meta = Vec::with_capacity(n.min(bytes.len()));
        for _ in 0..n {
            let start = r.u32()? as usize;
            let end = r.u32()? as usize;
            let len = r.u32()? as usize;
            let text = r.string(len)?;
            meta.push(EntryMeta { start, end, text });
        }
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checksum", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let lookup = lookup_of(&contexts);
        if lookup.len() != contexts.len() {
            return Err(Error::Format("duplicate context id".into()));
        }
        Ok(Self { dim, vectors, meta, contexts, lookup })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated index: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in index".into()))
    }
}

pub fn save_index(index: &PhraseIndex, path: &Path) -> Result<()> {
    std::fs::write(path, index.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<PhraseIndex> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    PhraseIndex::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(ctx: &str, start: usize, end: usize, values: Vec<f64>) -> PhraseVector {
        PhraseVector { ctx_id: ctx.into(), start, end, text: format!("{start}-{end}"), values }
    }

    #[test]
    fn hand_dot_products() {
        let idx = build_index(&[pv("c", 0, 0, vec![1.0, 0.0]), pv("c", 1, 1, vec![0.0, 1.0])]).unwrap();
        let hits = idx.search(&[2.0, 1.0], 1, None).unwrap();
        assert_eq!((hits[0].entry, hits[0].score), (0, 2.0));
        assert_eq!(idx.search(&[2.0, 1.0], 10, None).unwrap().len(), 2);
    }

    #[test]
    fn empty_and_counts() {
        let idx = build_index(&[]).unwrap();
        assert!(idx.is_empty());
        assert!(idx.search(&[], 5, None).unwrap().is_empty());
        let mut vs = Vec::new();
        for c in 0..3 {
            for s in 0..100 {
                vs.push(pv(&format!("ctx{c}"), s, s, vec![s as f64, c as f64]));
            }
        }
        let idx = build_index(&vs).unwrap();
        assert_eq!(idx.len(), 300);
        assert_eq!(idx.contexts().len(), 3);
        assert!(idx.contexts().iter().all(|c| c.len == 100));
    }

    #[test]
    fn errors() {
        let dup = [pv("c", 0, 1, vec![1.0]), pv("c", 0, 1, vec![2.0])];
        assert!(matches!(build_index(&dup), Err(Error::DuplicateEntry { .. })));
        let mixed = [pv("c", 0, 1, vec![1.0]), pv("c", 0, 2, vec![2.0, 0.0])];
        assert!(matches!(build_index(&mixed), Err(Error::DimensionMismatch { .. })));
        let idx = build_index(&[pv("c", 0, 1, vec![1.0])]).unwrap();
        assert!(matches!(idx.search(&[1.0], 1, Some("zz")), Err(Error::UnknownContext(_))));
        assert!(matches!(idx.search(&[1.0, 2.0], 1, None), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ties_break_by_entry_order() {
        let idx = build_index(&[pv("b", 0, 0, vec![1.0]), pv("a", 3, 4, vec![1.0]), pv("a", 1, 1, vec![1.0])]).unwrap();
        let hits = idx.search(&[1.0], 3, None).unwrap();
        let order: Vec<_> = hits.iter().map(|h| (idx.entry(h.entry).ctx_id, idx.entry(h.entry).start)).collect();
        assert_eq!(order, vec![("a", 1), ("a", 3), ("b", 0)]);
    }

    #[test]
    fn truncated_and_corrupted_files() {
        let idx = build_index(&[pv("c", 0, 1, vec![1.0, 2.0]), pv("d", 2, 3, vec![3.0, 4.0])]).unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(PhraseIndex::from_bytes(&bytes).unwrap(), idx);
        for cut in 0..bytes.len() {
            assert!(matches!(PhraseIndex::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(PhraseIndex::from_bytes(&bad).is_err());
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(PhraseIndex::from_bytes(&bad_magic), Err(Error::Format(_))));
    }
}
