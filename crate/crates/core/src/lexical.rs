//! Tokenizer, inverted index and Okapi BM25.
//!
//! Scoring follows the Lucene/Elasticsearch form:
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf / (tf + k1 · (1 − b + b · |d| / avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are a list, so a repeated term contributes once per occurrence.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_casefold::{Locale, UnicodeCaseFold, Variant};
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{doc_text, DebunkCorpus, Translations};
use crate::io::{put_u32, put_u64, ByteReader};
use crate::ranking::{RankedList, ScoredDoc};
use crate::{Error, Result};

const INDEX_MAGIC: &[u8; 8] = b"XDNRIDX1";

/// Splits text into UAX #29 words, drops tokens with no alphanumeric
/// content and applies simple Unicode case folding. No stemming, no
/// stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words()
        .map(|w| w.chars().case_fold_with(Variant::Simple, Locale::NonTurkic).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidArgument(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Lucene's non-negative BM25 idf.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    doc_ids: Vec<String>,
}

impl InvertedIndex {
    /// Indexes `(id, text)` documents in the given order; ordinals follow
    /// that order.
    pub fn from_texts<I, S, T>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::new();
        let mut doc_ids = Vec::new();
        for (ordinal, (id, text)) in docs.into_iter().enumerate() {
            let ordinal = u32::try_from(ordinal).map_err(|_| Error::InvalidArgument("too many documents".into()))?;
            let terms = tokenize(text.as_ref());
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in &terms {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: ordinal, tf });
            }
            doc_lengths.push(terms.len() as u32);
            doc_ids.push(id.into());
        }
        if doc_ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self::assemble(postings, doc_lengths, doc_ids))
    }

    fn assemble(postings: BTreeMap<String, Vec<Posting>>, doc_lengths: Vec<u32>, doc_ids: Vec<String>) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        InvertedIndex {
            postings,
            doc_lengths,
            avg_doc_length,
            doc_ids,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&crate::io::read_file(path)?)
    }

    /// Layout: magic, u32 doc_count, then three sections each prefixed by a
    /// u64 byte length: doc ids (u32 len + UTF-8 each), doc lengths (u32
    /// each), postings (u32 term count; per term u32 len + bytes, u32 df,
    /// df × (u32 ordinal, u32 tf)). All integers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, self.doc_ids.len() as u32);

        let mut ids = Vec::new();
        for id in &self.doc_ids {
            put_u32(&mut ids, id.len() as u32);
            ids.extend_from_slice(id.as_bytes());
        }
        let mut lengths = Vec::with_capacity(self.doc_lengths.len() * 4);
        for &l in &self.doc_lengths {
            put_u32(&mut lengths, l);
        }
        let mut posts = Vec::new();
        put_u32(&mut posts, self.postings.len() as u32);
        for (term, list) in &self.postings {
            put_u32(&mut posts, term.len() as u32);
            posts.extend_from_slice(term.as_bytes());
            put_u32(&mut posts, list.len() as u32);
            for p in list {
                put_u32(&mut posts, p.doc);
                put_u32(&mut posts, p.tf);
            }
        }
        for section in [ids, lengths, posts] {
            put_u64(&mut out, section.len() as u64);
            out.extend_from_slice(&section);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != INDEX_MAGIC {
            return Err(Error::Format("missing XDNRIDX1 magic".into()));
        }
        let n = r.u32()? as usize;

        let len = r.u64()? as usize;
        let mut ids = ByteReader::new(r.take(len)?);
        let mut doc_ids = Vec::with_capacity(n);
        for _ in 0..n {
            let l = ids.u32()? as usize;
            doc_ids.push(ids.string(l)?);
        }

        let len = r.u64()? as usize;
        let mut lens = ByteReader::new(r.take(len)?);
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            doc_lengths.push(lens.u32()?);
        }

        let len = r.u64()? as usize;
        let mut posts = ByteReader::new(r.take(len)?);
        let terms = posts.u32()?;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let l = posts.u32()? as usize;
            let term = posts.string(l)?;
            let df = posts.u32()? as usize;
            let mut list = Vec::with_capacity(df);
            let mut prev: Option<u32> = None;
            for _ in 0..df {
                let p = Posting {
                    doc: posts.u32()?,
                    tf: posts.u32()?,
                };
                if p.doc as usize >= n || prev.is_some_and(|q| q >= p.doc) {
                    return Err(Error::Format(format!("bad posting ordinal {} for {term:?}", p.doc)));
                }
                prev = Some(p.doc);
                list.push(p);
            }
            postings.insert(term, list);
        }
        if !(r.is_empty() && ids.is_empty() && lens.is_empty() && posts.is_empty()) {
            return Err(Error::Format("trailing bytes in index".into()));
        }
        Ok(Self::assemble(postings, doc_lengths, doc_ids))
    }
}

/// Indexes `doc_text` of every debunk, or its translation when
/// `translations` is given (every debunk must then have one).
pub fn build_index(corpus: &DebunkCorpus, translations: Option<&Translations>) -> Result<InvertedIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut docs = Vec::with_capacity(corpus.len());
    for d in corpus.iter() {
        let text = match translations {
            Some(t) => t
                .get(&d.id)
                .ok_or_else(|| Error::DanglingId {
                    kind: "translation for debunk",
                    id: d.id.clone(),
                })?
                .to_string(),
            None => doc_text(d),
        };
        docs.push((d.id.clone(), text));
    }
    InvertedIndex::from_texts(docs)
}

/// Ranks documents for a tokenized query. Documents that match no query term
/// are omitted; ties are broken by ascending id.
pub fn bm25_search(index: &InvertedIndex, query: &[String], params: Bm25Params, top_k: usize) -> RankedList {
    let n = index.doc_count();
    let mut scores = vec![0.0f64; n];
    let mut touched = vec![false; n];
    for term in query {
        let list = index.postings(term);
        if list.is_empty() {
            continue;
        }
        let w = idf(n, list.len());
        for p in list {
            let d = p.doc as usize;
            let tf = f64::from(p.tf);
            let norm = 1.0 - params.b + params.b * f64::from(index.doc_lengths[d]) / index.avg_doc_length;
            scores[d] += w * tf / (tf + params.k1 * norm);
            touched[d] = true;
        }
    }
    let entries = (0..n)
        .filter(|&d| touched[d] && scores[d] > 0.0)
        .map(|d| ScoredDoc {
            id: index.doc_ids[d].clone(),
            score: scores[d],
        })
        .collect();
    RankedList::from_unsorted("", entries, top_k, "bm25")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(text: &str) -> Vec<String> {
        tokenize(text)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("Putin dropped 800 LIONS!"), ["putin", "dropped", "800", "lions"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("COVID-19 covid-19"), ["covid", "19", "covid", "19"]);
        assert!(toks("... !!! --").is_empty());
    }

    #[test]
    fn tokenize_is_unicode_aware() {
        assert_eq!(toks("ÁRBOL Árbol"), ["árbol", "árbol"]);
        assert_eq!(toks("मगरमच्छ सड़कों पर"), ["मगरमच्छ", "सड़कों", "पर"]);
        // simple folding keeps ß as one character
        assert_eq!(toks("STRASSE Straße"), ["strasse", "straße"]);
    }

    #[test]
    fn average_length_is_arithmetic_mean() {
        let idx = InvertedIndex::from_texts([("a", "w w"), ("b", "w w w w"), ("c", "w w w w w w")]).unwrap();
        assert_eq!(idx.avg_doc_length(), 4.0);
    }

    #[test]
    fn single_empty_doc() {
        let idx = InvertedIndex::from_texts([("a", "")]).unwrap();
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.term_count(), 0);
        assert!(bm25_search(&idx, &toks("x"), Bm25Params::default(), 10).is_empty());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let docs: Vec<(String, String)> = Vec::new();
        assert!(matches!(InvertedIndex::from_texts(docs), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn empty_query_gives_empty_list() {
        let idx = InvertedIndex::from_texts([("a", "lion")]).unwrap();
        assert!(bm25_search(&idx, &[], Bm25Params::default(), 5).is_empty());
    }

    #[test]
    fn unmatched_doc_is_absent() {
        let idx = InvertedIndex::from_texts([("A", "lion roams"), ("B", "tiger sleeps")]).unwrap();
        let res = bm25_search(&idx, &toks("lion"), Bm25Params::default(), 10);
        assert_eq!(res.len(), 1);
        assert_eq!(res.entries[0].id, "A");
        assert!(res.entries[0].score > 0.0);
    }

    #[test]
    fn top_k_truncates() {
        let idx = InvertedIndex::from_texts((0..10).map(|i| (format!("d{i}"), "lion"))).unwrap();
        let res = bm25_search(&idx, &toks("lion"), Bm25Params::default(), 3);
        let ids: Vec<_> = res.ids().collect();
        assert_eq!(ids, ["d0", "d1", "d2"]);
    }

    #[test]
    fn params_validation() {
        assert!(Bm25Params::default().validate().is_ok());
        assert!(Bm25Params { k1: -1.0, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
    }

    #[test]
    fn binary_round_trip_and_magic() {
        let idx = InvertedIndex::from_texts([("a", "lion in streets"), ("b", "crocodile streets streets")]).unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..8], b"XDNRIDX1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(InvertedIndex::from_bytes(&bytes).unwrap(), idx);
        assert!(InvertedIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(InvertedIndex::from_bytes(&bad).is_err());
    }

    #[test]
    fn translated_index_needs_every_translation() {
        use crate::corpus::{Collection, Debunk};
        let d = |id: &str| Debunk {
            id: id.into(),
            lang: "hi".into(),
            claim: "दावा".into(),
            title: "शीर्षक".into(),
            published_at: None,
            source_org: None,
        };
        let corpus = Collection::new(vec![d("a"), d("b")]).unwrap();
        let mut tr = Translations::default();
        tr.insert("a", "claim title");
        assert!(build_index(&corpus, Some(&tr)).is_err());
        tr.insert("b", "other claim");
        let idx = build_index(&corpus, Some(&tr)).unwrap();
        assert_eq!(idx.postings("claim").len(), 2);
    }
}
