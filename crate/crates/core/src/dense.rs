//! Id-aligned embedding matrices, exact cosine search and a deterministic
//! hashing embedder used when no external encoder is available.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_casefold::{Locale, UnicodeCaseFold, Variant};

use crate::io::{put_u16, put_u32, ByteReader};
use crate::ranking::{RankedList, ScoredDoc};
use crate::trainer::ProjectionHead;
use crate::{Error, Result};

const EMBEDDING_MAGIC: &[u8; 8] = b"XDNREMB1";

/// Row-major matrix of embeddings with one row per id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    by_id: HashMap<String, usize>,
    /// Free-form provenance, e.g. the checksum of an applied projection.
    pub meta: BTreeMap<String, String>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be > 0".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::DimMismatch {
                expected: ids.len() * dim,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding row {:?}", ids[pos / dim])));
        }
        let mut by_id = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if let Some(prev) = by_id.insert(id.clone(), i) {
                return Err(Error::DuplicateId {
                    kind: "embedding",
                    id: id.clone(),
                    first_line: prev + 1,
                    second_line: i + 1,
                });
            }
        }
        Ok(EmbeddingMatrix {
            dim,
            ids,
            data,
            by_id,
            meta: BTreeMap::new(),
        })
    }

    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            ids.push(id);
            data.extend(v);
        }
        Self::new(dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.by_id.get(id).map(|&i| self.row(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.data.chunks_exact(self.dim))
    }

    /// Binary layout: magic, u32 dim, u32 count, then per row a u16 id
    /// length, the UTF-8 id and `dim` f32 values, all little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(EMBEDDING_MAGIC);
        put_u32(&mut out, self.dim as u32);
        put_u32(&mut out, self.len() as u32);
        for (id, row) in self.rows() {
            let len = u16::try_from(id.len()).map_err(|_| Error::InvalidArgument(format!("id too long: {id:?}")))?;
            put_u16(&mut out, len);
            out.extend_from_slice(id.as_bytes());
            for &x in row {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != EMBEDDING_MAGIC {
            return Err(Error::Format("missing XDNREMB1 magic".into()));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut ids = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count.saturating_mul(dim));
        for _ in 0..count {
            let len = r.u16()? as usize;
            ids.push(r.string(len)?);
            for _ in 0..dim {
                data.push(f64::from(r.f32()?));
            }
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes in embedding file".into()));
        }
        Self::new(dim, ids, data)
    }

    /// Loads either the binary format (detected by magic) or JSONL rows of
    /// `{"id": str, "vec": [floats]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_file(path)?;
        if bytes.starts_with(EMBEDDING_MAGIC) {
            return Self::from_bytes(&bytes);
        }
        #[derive(Deserialize)]
        struct Row {
            id: String,
            vec: Vec<f64>,
        }
        let rows: Vec<(usize, Row)> = crate::io::read_jsonl(path)?;
        let dim = rows.first().map(|(_, r)| r.vec.len()).unwrap_or(0);
        for (line, r) in &rows {
            if r.vec.len() != dim {
                return Err(Error::InvalidRecord {
                    path: path.to_path_buf(),
                    line: *line,
                    message: format!("vector of length {} in a file of dimension {dim}", r.vec.len()),
                });
            }
        }
        Self::from_rows(dim, rows.into_iter().map(|(_, r)| (r.id, r.vec)).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_file(path, &self.to_bytes()?)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            vec: &'a [f64],
        }
        let rows: Vec<Row> = self.rows().map(|(id, vec)| Row { id, vec }).collect();
        crate::io::write_jsonl(path, &rows)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("cosine operand".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Result of a dense search plus the number of corpus rows skipped because
/// their norm is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHits {
    pub ranked: RankedList,
    pub excluded_zero_norm: usize,
}

/// Embedding matrix with cached row norms for exact cosine search.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    matrix: EmbeddingMatrix,
    norms: Vec<f64>,
    zero_rows: usize,
}

impl DenseIndex {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        let norms: Vec<f64> = matrix.rows().map(|(_, r)| l2_norm(r)).collect();
        let zero_rows = norms.iter().filter(|&&n| n == 0.0).count();
        if zero_rows > 0 {
            log::warn!("{zero_rows} zero-norm rows will be excluded from search");
        }
        DenseIndex {
            matrix,
            norms,
            zero_rows,
        }
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn zero_norm_rows(&self) -> usize {
        self.zero_rows
    }

    /// Exact top-k by cosine, descending, ties by ascending id.
    pub fn search(&self, query: &[f64], top_k: usize) -> Result<DenseHits> {
        if query.len() != self.matrix.dim() {
            return Err(Error::DimMismatch {
                expected: self.matrix.dim(),
                got: query.len(),
            });
        }
        let qn = l2_norm(query);
        if qn == 0.0 {
            return Err(Error::ZeroNorm("query vector".into()));
        }
        let entries = self
            .matrix
            .rows()
            .zip(&self.norms)
            .filter(|(_, &n)| n > 0.0)
            .map(|((id, row), &n)| ScoredDoc {
                id: id.to_string(),
                score: (dot(query, row) / (qn * n)).clamp(-1.0, 1.0),
            })
            .collect();
        Ok(DenseHits {
            ranked: RankedList::from_unsorted("", entries, top_k, "dense"),
            excluded_zero_norm: self.zero_rows,
        })
    }

    /// Searches every query, optionally across `threads` workers. Output
    /// order matches input order regardless of the fan-out.
    pub fn search_batch(&self, queries: &[(&str, &[f64])], top_k: usize, threads: usize) -> Result<Vec<RankedList>> {
        let run = |chunk: &[(&str, &[f64])]| -> Result<Vec<RankedList>> {
            chunk
                .iter()
                .map(|(qid, v)| {
                    let mut hits = self.search(v, top_k)?.ranked;
                    hits.query_id = qid.to_string();
                    Ok(hits)
                })
                .collect()
        };
        let threads = threads.max(1);
        if threads == 1 || queries.len() < 2 {
            return run(queries);
        }
        let chunk = queries.len().div_ceil(threads);
        let parts: Vec<Result<Vec<RankedList>>> = std::thread::scope(|s| {
            let handles: Vec<_> = queries.chunks(chunk).map(|c| s.spawn(move || run(c))).collect();
            handles.into_iter().map(|h| h.join().expect("search worker panicked")).collect()
        });
        let mut out = Vec::with_capacity(queries.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Convenience wrapper matching the free-function form.
pub fn dense_search(index: &DenseIndex, query: &[f64], top_k: usize) -> Result<DenseHits> {
    index.search(query, top_k)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn gram_hash(gram: &[char], seed: u64) -> u64 {
    // FNV-1a over the UTF-8 bytes, seeded through the offset basis, then
    // finalized so that low bits are well mixed for the modulo.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    let mut buf = [0u8; 4];
    for c in gram {
        for &b in c.encode_utf8(&mut buf).as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    splitmix64(h)
}

/// Deterministic signed feature hashing of character 3-grams.
///
/// The text is case-folded, whitespace runs collapse to one space and the
/// result is padded with a space on each side before 3-grams are taken.
/// Each gram adds ±1 to bucket `h % dim` (sign from the top hash bit); the
/// vector is then L2-normalized. Text with no grams, or whose grams cancel
/// out, maps to a one-hot unit vector chosen by `seed` alone.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < 8 {
        return Err(Error::InvalidArgument(format!("hash_embed needs dim >= 8, got {dim}")));
    }
    let folded: String = text.chars().case_fold_with(Variant::Simple, Locale::NonTurkic).collect();
    let words: Vec<&str> = folded.split_whitespace().collect();
    let mut v = vec![0.0f64; dim];
    if !words.is_empty() {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(words.join(" ").chars())
            .chain(std::iter::once(' '))
            .collect();
        for gram in padded.windows(3) {
            let h = gram_hash(gram, seed);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % dim as u64) as usize] += sign;
        }
    }
    let norm = l2_norm(&v);
    if norm == 0.0 {
        let h = splitmix64(seed ^ 0x5EED);
        v.iter_mut().for_each(|x| *x = 0.0);
        v[(h % dim as u64) as usize] = 1.0;
        return Ok(v);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Embeds `(id, text)` pairs with [`hash_embed`].
pub fn hash_embed_all<'a, I>(texts: I, dim: usize, seed: u64) -> Result<EmbeddingMatrix>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let rows = texts
        .into_iter()
        .map(|(id, text)| Ok((id.to_string(), hash_embed(text, dim, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingMatrix::from_rows(dim, rows)
}

/// Replaces every row with `head.forward(row)` and records the head's
/// checksum under `meta["projection_checksum"]`.
pub fn apply_projection(matrix: &EmbeddingMatrix, head: &ProjectionHead) -> Result<EmbeddingMatrix> {
    if head.dim_in() != matrix.dim() {
        return Err(Error::DimMismatch {
            expected: head.dim_in(),
            got: matrix.dim(),
        });
    }
    let mut data = Vec::with_capacity(matrix.len() * head.dim_out());
    for (_, row) in matrix.rows() {
        data.extend(head.forward(row));
    }
    let mut out = EmbeddingMatrix::new(head.dim_out(), matrix.ids().to_vec(), data)?;
    out.meta = matrix.meta.clone();
    out.meta.insert("projection_checksum".into(), head.checksum());
    Ok(out)
}
