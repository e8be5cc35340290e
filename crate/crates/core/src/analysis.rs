//! Dataset diagnostics: claim-matching candidates, domain overlap, rater
//! agreement, debunk/claim time gaps and a retrieval latency benchmark.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{DebunkCorpus, JudgmentSet, QueryClaim, QuerySet};
use crate::dense::{DenseIndex, EmbeddingMatrix};
use crate::lexical::tokenize;
use crate::metrics::{self, Qrels};
use crate::pipeline::{RetrieveError, Retriever};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    #[serde(rename = "source")]
    pub source_claim_id: String,
    #[serde(rename = "target")]
    pub target_claim_id: String,
    #[serde(rename = "sim")]
    pub similarity: f64,
}

/// For each claim, its `depth` nearest other claims by cosine whose
/// similarity exceeds `threshold`. Both (a,b) and (b,a) can appear.
/// Output is sorted by source id, then similarity descending, then target id,
/// so it does not depend on row order. Zero-norm rows take no part.
pub fn candidate_pairs(claims: &EmbeddingMatrix, depth: usize, threshold: f64) -> Result<Vec<CandidatePair>> {
    if claims.len() < 2 {
        return Err(Error::InvalidArgument("candidate generation needs at least two claims".into()));
    }
    let index = DenseIndex::new(claims.clone());
    let mut out = Vec::new();
    for (i, (id, row)) in claims.rows().enumerate() {
        if index.norms()[i] == 0.0 {
            continue;
        }
        let hits = index.search(row, depth + 1)?.ranked;
        out.extend(
            hits.entries
                .into_iter()
                .filter(|h| h.id != id)
                .take(depth)
                .filter(|h| h.score > threshold)
                .map(|h| CandidatePair {
                    source_claim_id: id.to_string(),
                    target_claim_id: h.id,
                    similarity: h.score,
                }),
        );
    }
    out.sort_by(|a, b| {
        a.source_claim_id
            .cmp(&b.source_claim_id)
            .then(b.similarity.total_cmp(&a.similarity))
            .then_with(|| a.target_claim_id.cmp(&b.target_claim_id))
    });
    Ok(out)
}

/// Σ min / Σ max over the union of supports.
pub fn weighted_jaccard(x: &BTreeMap<String, f64>, y: &BTreeMap<String, f64>) -> Result<f64> {
    if x.values().chain(y.values()).any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (t, &a) in x {
        let b = y.get(t).copied().unwrap_or(0.0);
        num += a.min(b);
        den += a.max(b);
    }
    den += y.iter().filter(|(t, _)| !x.contains_key(*t)).map(|(_, w)| w).sum::<f64>();
    if den == 0.0 {
        return Err(Error::InvalidArgument("weighted Jaccard of two all-zero vectors".into()));
    }
    Ok(num / den)
}

/// Relative term frequencies of a corpus under the retrieval tokenizer.
pub fn term_distribution<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, f64>> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for t in texts {
        for tok in tokenize(t) {
            *counts.entry(tok).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("corpus has no tokens".into()));
    }
    Ok(counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect())
}

pub fn domain_overlap<'a, 'b>(
    test_texts: impl IntoIterator<Item = &'a str>,
    train_texts: impl IntoIterator<Item = &'b str>,
) -> Result<f64> {
    weighted_jaccard(&term_distribution(test_texts)?, &term_distribution(train_texts)?)
}

/// Fleiss' kappa for an items × categories count table where every row sums
/// to `raters`. Perfect agreement on a single category everywhere gives 1.
pub fn fleiss_kappa(table: &[Vec<u32>], raters: u32) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty rating table".into()));
    }
    if raters < 2 {
        return Err(Error::InvalidArgument("need at least two raters per item".into()));
    }
    let k = table[0].len();
    let n = f64::from(raters);
    let mut totals = vec![0u64; k];
    let mut p_bar = 0.0;
    for (i, row) in table.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidArgument(format!("row {i} has {} categories, expected {k}", row.len())));
        }
        let sum: u64 = row.iter().map(|&c| u64::from(c)).sum();
        if sum != u64::from(raters) {
            return Err(Error::InvalidArgument(format!("row {i} sums to {sum}, expected {raters}")));
        }
        let sq: f64 = row.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
        p_bar += (sq - n) / (n * (n - 1.0));
        for (t, &c) in totals.iter_mut().zip(row) {
            *t += u64::from(c);
        }
    }
    let items = table.len() as f64;
    p_bar /= items;
    let pe: f64 = totals.iter().map(|&t| (t as f64 / (items * n)).powi(2)).sum();
    let denom = 1.0 - pe;
    if denom.abs() < 1e-12 {
        return if (p_bar - 1.0).abs() < 1e-12 {
            Ok(1.0)
        } else {
            Err(Error::InvalidArgument("kappa undefined: chance agreement is 1".into()))
        };
    }
    Ok((p_bar - pe) / denom)
}

/// Reads `item_id,cat_1,...,cat_n` counts. Returns the table and the
/// common row sum.
pub fn read_kappa_csv(path: &Path) -> Result<(Vec<Vec<u32>>, u32)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut table = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidRecord {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })?;
        table.push(row);
    }
    let raters = table
        .first()
        .map(|r: &Vec<u32>| r.iter().sum())
        .ok_or_else(|| Error::Format(format!("{}: no rows", path.display())))?;
    Ok((table, raters))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub from_days: i64,
    pub to_days: i64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGapStats {
    pub median_days: f64,
    pub fraction_debunk_first: f64,
    pub dated_pairs: usize,
    pub debunk_first_pairs: usize,
    pub undated_pairs: usize,
    /// 30-day bins over the debunk-first gaps.
    pub histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BIN_DAYS: i64 = 30;

/// Gaps (query date − debunk date, in days) over positive judgments. A
/// debunk published on or before the query date counts as debunk-first;
/// the median is taken over those gaps.
pub fn time_gap_stats(judgments: &JudgmentSet, queries: &QuerySet, debunks: &DebunkCorpus) -> Result<TimeGapStats> {
    let mut gaps = Vec::new();
    let mut dated = 0usize;
    let mut undated = 0usize;
    for j in judgments.iter().filter(|j| j.level.is_positive()) {
        let q = queries.get(&j.query_id).and_then(|q| q.created_at);
        let d = debunks.get(&j.debunk_id).and_then(|d| d.published_at);
        match (q, d) {
            (Some(q), Some(d)) => {
                dated += 1;
                let gap = (q - d).num_days();
                if gap >= 0 {
                    gaps.push(gap);
                }
            }
            _ => undated += 1,
        }
    }
    if dated == 0 {
        return Err(Error::InvalidArgument("no positive pairs with dates on both sides".into()));
    }
    gaps.sort_unstable();
    let median_days = match gaps.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => gaps[n / 2] as f64,
        n => (gaps[n / 2 - 1] + gaps[n / 2]) as f64 / 2.0,
    };
    let mut histogram: Vec<HistogramBin> = Vec::new();
    for &g in &gaps {
        let from = g / HISTOGRAM_BIN_DAYS * HISTOGRAM_BIN_DAYS;
        match histogram.last_mut() {
            Some(b) if b.from_days == from => b.count += 1,
            _ => histogram.push(HistogramBin {
                from_days: from,
                to_days: from + HISTOGRAM_BIN_DAYS,
                count: 1,
            }),
        }
    }
    Ok(TimeGapStats {
        median_days,
        fraction_debunk_first: gaps.len() as f64 / dated as f64,
        dated_pairs: dated,
        debunk_first_pairs: gaps.len(),
        undated_pairs: undated,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model_tag: String,
    pub sample_size: usize,
    /// Per-query seconds, ascending.
    pub samples: Vec<f64>,
    pub p50: f64,
    pub p90: f64,
    pub mean: f64,
    pub mrr: Option<f64>,
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times each query individually for `repeats` passes after `warmup`
/// discarded passes. Only the retrieval call is inside the timed region.
/// MRR is computed over the results of the last pass.
pub fn latency_bench(
    retriever: &mut dyn Retriever,
    queries: &[QueryClaim],
    warmup: usize,
    repeats: usize,
    qrels: Option<&Qrels>,
) -> std::result::Result<LatencyReport, RetrieveError> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()).into());
    }
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries to benchmark".into()).into());
    }
    for _ in 0..warmup {
        for q in queries {
            retriever.retrieve(q)?;
        }
    }
    let mut samples = Vec::with_capacity(queries.len() * repeats);
    let mut last = Vec::with_capacity(queries.len());
    for r in 0..repeats {
        for q in queries {
            let start = Instant::now();
            let list = retriever.retrieve(q)?;
            samples.push(start.elapsed().as_secs_f64());
            if r + 1 == repeats {
                last.push(list);
            }
        }
    }
    samples.sort_by(f64::total_cmp);
    let mrr = qrels.map(|q| metrics::mrr(&last, q)).transpose()?;
    Ok(LatencyReport {
        model_tag: retriever.tag(),
        sample_size: samples.len(),
        p50: percentile(&samples, 0.5),
        p90: percentile(&samples, 0.9),
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
        samples,
        mrr,
    })
}

pub fn write_candidates(path: &Path, pairs: &[CandidatePair]) -> Result<()> {
    crate::io::write_jsonl(path, pairs)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    crate::io::write_file(path, s.as_bytes())
}

/// Query → language lookup used to break reports down per language.
pub fn query_languages(queries: &QuerySet) -> HashMap<String, String> {
    queries.iter().map(|q| (q.id.clone(), q.lang.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Collection, Debunk, RelevanceJudgment, RelevanceLevel};
    use chrono::NaiveDate;

    fn w(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn jaccard_examples() {
        let x = w(&[("a", 1.0), ("b", 2.0)]);
        let y = w(&[("a", 2.0), ("b", 1.0)]);
        assert_eq!(weighted_jaccard(&x, &y).unwrap(), 0.5);
        assert_eq!(weighted_jaccard(&x, &x).unwrap(), 1.0);
        assert_eq!(weighted_jaccard(&x, &w(&[("c", 3.0)])).unwrap(), 0.0);
        assert!(weighted_jaccard(&w(&[]), &w(&[("a", 0.0)])).is_err());
        assert!(weighted_jaccard(&w(&[("a", -1.0)]), &x).is_err());
    }

    #[test]
    fn overlap_toy_corpora() {
        // A: a a b | b c | a   -> a 3/6, b 2/6, c 1/6
        // B: a d | d d | c     -> a 1/5, d 3/5, c 1/5
        let a = ["a a b", "b c", "a"];
        let b = ["a d", "d d", "c"];
        let num = (1.0f64 / 5.0).min(3.0 / 6.0) + (1.0f64 / 6.0).min(1.0 / 5.0);
        let den = 3.0 / 6.0 + 2.0 / 6.0 + 1.0 / 5.0 + 3.0 / 5.0;
        let got = domain_overlap(a, b).unwrap();
        assert!((got - num / den).abs() < 1e-12);
        assert_eq!(domain_overlap(a, a).unwrap(), 1.0);
        assert_eq!(domain_overlap(["x y"], ["z"]).unwrap(), 0.0);
        assert!(domain_overlap([""], ["z"]).is_err());
    }

    #[test]
    fn kappa_examples() {
        let unanimous = vec![vec![3, 0], vec![0, 3], vec![3, 0]];
        assert!((fleiss_kappa(&unanimous, 3).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fleiss_kappa(&[vec![2, 0], vec![2, 0]], 2).unwrap(), 1.0);
        assert!(fleiss_kappa(&[vec![1, 1], vec![1, 1]], 2).is_ok());
        assert!(fleiss_kappa(&[vec![2, 1]], 2).is_err());
        // Wikipedia worked example: 10 items, 14 raters, kappa 0.210
        let t: Vec<Vec<u32>> = vec![
            vec![0, 0, 0, 0, 14],
            vec![0, 2, 6, 4, 2],
            vec![0, 0, 3, 5, 6],
            vec![0, 3, 9, 2, 0],
            vec![2, 2, 8, 1, 1],
            vec![7, 7, 0, 0, 0],
            vec![3, 2, 6, 3, 0],
            vec![2, 5, 3, 2, 2],
            vec![6, 5, 2, 1, 0],
            vec![0, 2, 2, 3, 7],
        ];
        assert!((fleiss_kappa(&t, 14).unwrap() - 0.20993070442195522).abs() < 1e-9);
    }

    fn date(s: &str) -> Option<NaiveDate> {
        Some(s.parse().unwrap())
    }

    #[test]
    fn time_gaps() {
        let debunks = Collection::new(
            ["2020-01-01", "2020-01-01", "2020-01-01", "2020-06-01", ""]
                .iter()
                .enumerate()
                .map(|(i, d)| Debunk {
                    id: format!("d{i}"),
                    lang: "en".into(),
                    claim: "c".into(),
                    title: String::new(),
                    published_at: if d.is_empty() { None } else { date(d) },
                    source_org: None,
                })
                .collect(),
        )
        .unwrap();
        let queries = Collection::new(
            ["2020-01-11", "2020-03-17", "2020-07-19", "2020-05-01", "2020-05-01"]
                .iter()
                .enumerate()
                .map(|(i, d)| QueryClaim {
                    id: format!("q{i}"),
                    lang: "en".into(),
                    text: "t".into(),
                    text_en: None,
                    created_at: date(d),
                })
                .collect(),
        )
        .unwrap();
        let j = |q: usize, d: usize, level| RelevanceJudgment {
            query_id: format!("q{q}"),
            debunk_id: format!("d{d}"),
            level,
        };
        let js = JudgmentSet::new(vec![
            j(0, 0, RelevanceLevel::Exact),
            j(1, 1, RelevanceLevel::Partial),
            j(2, 2, RelevanceLevel::Exact),
            j(3, 3, RelevanceLevel::Exact),
            j(4, 4, RelevanceLevel::Exact),
            j(0, 3, RelevanceLevel::Irrelevant),
        ])
        .unwrap();
        let s = time_gap_stats(&js, &queries, &debunks).unwrap();
        assert_eq!(s.median_days, 76.0);
        assert_eq!(s.dated_pairs, 4);
        assert_eq!(s.undated_pairs, 1);
        assert_eq!(s.fraction_debunk_first, 0.75);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<usize>(), 3);
        assert_eq!(s.histogram[0].from_days, 0);
    }

    #[test]
    fn percentiles() {
        assert_eq!(percentile(&[1.0], 0.5), 1.0);
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.5), 5.0);
        assert_eq!(percentile(&s, 0.9), 9.0);
    }

    #[test]
    fn candidate_pair_rules() {
        let m = EmbeddingMatrix::from_rows(
            2,
            vec![
                ("a".into(), vec![1.0, 0.0]),
                ("b".into(), vec![1.0, 0.0]),
                ("c".into(), vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        let p = candidate_pairs(&m, 7, 0.6).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].source_claim_id.as_str(), p[0].target_claim_id.as_str()), ("a", "b"));
        assert_eq!(p[0].similarity, 1.0);
        assert!(candidate_pairs(&m, 7, 1.0).unwrap().is_empty());
    }
}
