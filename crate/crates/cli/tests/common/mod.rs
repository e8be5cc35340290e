//! Reference implementations written straight from the definitions, kept
//! deliberately naive so they share no code paths with the engine.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_xdnr")
}

pub fn stub_scorer() -> &'static str {
    env!("CARGO_BIN_EXE_xdnr-stub-scorer")
}

/// Gain of `doc` for one query from a plain list of (doc, gain).
pub fn lookup(judged: &[(String, u32)], doc: &str) -> u32 {
    for (d, g) in judged {
        if d == doc {
            return *g;
        }
    }
    0
}

pub fn naive_rr(ranking: &[String], judged: &[(String, u32)]) -> f64 {
    for (i, d) in ranking.iter().enumerate() {
        if lookup(judged, d) > 0 {
            return 1.0 / (i as f64 + 1.0);
        }
    }
    0.0
}

pub fn naive_dcg(ranking: &[String], judged: &[(String, u32)], k: usize) -> f64 {
    let mut s = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if i >= k {
            break;
        }
        let g = lookup(judged, d) as i32;
        s += (2f64.powi(g) - 1.0) / ((i as f64 + 2.0).ln() / 2f64.ln());
    }
    s
}

pub fn naive_ndcg(ranking: &[String], judged: &[(String, u32)], k: usize) -> f64 {
    let mut gains: Vec<u32> = judged.iter().map(|(_, g)| *g).collect();
    gains.sort();
    gains.reverse();
    let mut ideal = 0.0;
    for (i, g) in gains.iter().enumerate().take(k) {
        ideal += (2f64.powi(*g as i32) - 1.0) / ((i as f64 + 2.0).ln() / 2f64.ln());
    }
    if ideal == 0.0 {
        0.0
    } else {
        naive_dcg(ranking, judged, k) / ideal
    }
}

/// BM25 (Lucene idf, no (k1+1) factor) evaluated directly from token lists.
/// Returns (doc id, score) for every doc with a positive score, best first,
/// ties by id.
pub fn naive_bm25(docs: &[(String, Vec<String>)], query: &[String], k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut out = Vec::new();
    for (id, toks) in docs {
        let dl = toks.len() as f64;
        let mut score = 0.0;
        for q in query {
            let tf = toks.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|(_, t)| t.contains(q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if score > 0.0 {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        uv += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    uv / (uu.sqrt() * vv.sqrt())
}

/// Pseudo-words built from a fixed syllable list.
pub fn vocabulary<R: Rng>(rng: &mut R, size: usize) -> Vec<String> {
    const SYL: [&str; 16] = [
        "ka", "ro", "mi", "ten", "sha", "vo", "lu", "dre", "pa", "ne", "zor", "bi", "fal", "hu", "gem", "tra",
    ];
    let mut v = std::collections::BTreeSet::new();
    while v.len() < size {
        let n = rng.gen_range(2..=3);
        v.insert((0..n).map(|_| *SYL.choose(rng).unwrap()).collect::<String>());
    }
    v.into_iter().collect()
}

pub fn sentence<R: Rng>(rng: &mut R, vocab: &[String], len: usize) -> Vec<String> {
    (0..len).map(|_| vocab.choose(rng).unwrap().clone()).collect()
}
