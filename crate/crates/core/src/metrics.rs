//! Graded-relevance ranking metrics: MRR, DCG@K and nDCG@K.
//!
//! Gains come from [`Qrels`]; unjudged documents have gain 0. A document is
//! relevant for MRR when its gain is positive. DCG uses the exponential gain
//! `(2^rel − 1) / log2(rank + 1)`, and the ideal DCG of a query is built from
//! all of its judged gains.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{JudgmentSet, RelevanceLevel};
use crate::ranking::RankedList;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GainMap {
    pub exact: u32,
    pub partial: u32,
    pub irrelevant: u32,
}

impl Default for GainMap {
    fn default() -> Self {
        GainMap {
            exact: 2,
            partial: 1,
            irrelevant: 0,
        }
    }
}

impl GainMap {
    pub fn gain(&self, level: RelevanceLevel) -> u32 {
        match level {
            RelevanceLevel::Exact => self.exact,
            RelevanceLevel::Partial => self.partial,
            RelevanceLevel::Irrelevant => self.irrelevant,
        }
    }
}

/// Graded judgments as integer gains.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    gains: HashMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn from_judgments(judgments: &JudgmentSet, map: GainMap) -> Self {
        let mut q = Qrels::default();
        for j in judgments.iter() {
            q.insert(&j.query_id, &j.debunk_id, map.gain(j.level));
        }
        q
    }

    pub fn insert(&mut self, query_id: &str, debunk_id: &str, gain: u32) {
        self.gains
            .entry(query_id.to_string())
            .or_default()
            .insert(debunk_id.to_string(), gain);
    }

    pub fn gain(&self, query_id: &str, debunk_id: &str) -> u32 {
        self.gains
            .get(query_id)
            .and_then(|m| m.get(debunk_id))
            .copied()
            .unwrap_or(0)
    }

    /// Judged gains of one query, sorted descending.
    pub fn judged_gains(&self, query_id: &str) -> Vec<u32> {
        let mut g: Vec<u32> = self
            .gains
            .get(query_id)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default();
        g.sort_unstable_by(|a, b| b.cmp(a));
        g
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.gains.keys().map(String::as_str)
    }

    /// Restricts to the given queries.
    pub fn subset<'a>(&self, query_ids: impl IntoIterator<Item = &'a str>) -> Qrels {
        let mut out = Qrels::default();
        for q in query_ids {
            if let Some(m) = self.gains.get(q) {
                out.gains.insert(q.to_string(), m.clone());
            }
        }
        out
    }
}

fn discounted(gain: u32, rank: usize) -> f64 {
    ((1u64 << gain.min(63)) - 1) as f64 / ((rank + 1) as f64).log2()
}

/// 1/rank of the first document with positive gain, or 0.
pub fn reciprocal_rank(list: &RankedList, qrels: &Qrels) -> f64 {
    list.entries
        .iter()
        .position(|e| qrels.gain(&list.query_id, &e.id) > 0)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

pub fn query_dcg(list: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    list.entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| discounted(qrels.gain(&list.query_id, &e.id), i + 1))
        .sum()
}

pub fn ideal_dcg(query_id: &str, qrels: &Qrels, k: usize) -> f64 {
    qrels
        .judged_gains(query_id)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| discounted(g, i + 1))
        .sum()
}

/// Per-query nDCG@K; 0 when the ideal DCG is 0.
pub fn query_ndcg(list: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let ideal = ideal_dcg(&list.query_id, qrels, k);
    if ideal == 0.0 {
        0.0
    } else {
        (query_dcg(list, qrels, k) / ideal).min(1.0)
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

fn check_unique(results: &[RankedList]) -> Result<()> {
    let mut seen = HashSet::with_capacity(results.len());
    for r in results {
        if !seen.insert(r.query_id.as_str()) {
            return Err(Error::DuplicateId {
                kind: "result query",
                id: r.query_id.clone(),
                first_line: results.iter().position(|x| x.query_id == r.query_id).unwrap() + 1,
                second_line: results.iter().rposition(|x| x.query_id == r.query_id).unwrap() + 1,
            });
        }
    }
    Ok(())
}

/// Mean reciprocal rank over one list per query.
pub fn mrr(results: &[RankedList], qrels: &Qrels) -> Result<f64> {
    check_unique(results)?;
    Ok(mean(results.iter().map(|r| reciprocal_rank(r, qrels))))
}

pub fn dcg_at_k(results: &[RankedList], qrels: &Qrels, k: usize) -> f64 {
    mean(results.iter().map(|r| query_dcg(r, qrels, k)))
}

pub fn ndcg_at_k(results: &[RankedList], qrels: &Qrels, k: usize) -> f64 {
    mean(results.iter().map(|r| query_ndcg(r, qrels, k)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub lang: String,
    pub reciprocal_rank: f64,
    #[serde(rename = "ndcg@1")]
    pub ndcg1: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub queries: usize,
    pub mrr: f64,
    #[serde(rename = "ndcg@1")]
    pub ndcg1: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: f64,
}

impl MetricRow {
    fn from_queries<'a>(rows: impl Iterator<Item = &'a QueryMetrics> + Clone) -> Self {
        let v: Vec<&QueryMetrics> = rows.collect();
        MetricRow {
            queries: v.len(),
            mrr: mean(v.iter().map(|q| q.reciprocal_rank)),
            ndcg1: mean(v.iter().map(|q| q.ndcg1)),
            ndcg5: mean(v.iter().map(|q| q.ndcg5)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricRow,
    pub by_language: BTreeMap<String, MetricRow>,
    pub per_query: Vec<QueryMetrics>,
}

pub const UNKNOWN_LANGUAGE: &str = "unknown";

/// Corpus-level and per-language MRR, nDCG@1 and nDCG@5. Queries without a
/// language mapping are grouped under `"unknown"`.
pub fn evaluate(results: &[RankedList], qrels: &Qrels, languages: &HashMap<String, String>) -> Result<EvalReport> {
    check_unique(results)?;
    let per_query: Vec<QueryMetrics> = results
        .iter()
        .map(|r| QueryMetrics {
            query_id: r.query_id.clone(),
            lang: languages
                .get(&r.query_id)
                .cloned()
                .unwrap_or_else(|| UNKNOWN_LANGUAGE.to_string()),
            reciprocal_rank: reciprocal_rank(r, qrels),
            ndcg1: query_ndcg(r, qrels, 1),
            ndcg5: query_ndcg(r, qrels, 5),
        })
        .collect();
    let langs: std::collections::BTreeSet<&str> = per_query.iter().map(|q| q.lang.as_str()).collect();
    let by_language = langs
        .into_iter()
        .map(|l| {
            (
                l.to_string(),
                MetricRow::from_queries(per_query.iter().filter(move |q| q.lang == l)),
            )
        })
        .collect();
    Ok(EvalReport {
        overall: MetricRow::from_queries(per_query.iter()),
        by_language,
        per_query,
    })
}

impl EvalReport {
    /// Aligned-column table: one row per language, then the overall row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>7} {:>8} {:>8} {:>8}", "lang", "queries", "ndcg@1", "ndcg@5", "mrr");
        let rows = self
            .by_language
            .iter()
            .map(|(l, r)| (l.as_str(), r))
            .chain(std::iter::once(("all", &self.overall)));
        for (lang, r) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>7} {:>8.3} {:>8.3} {:>8.3}",
                lang, r.queries, r.ndcg1, r.ndcg5, r.mrr
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::ScoredDoc;

    fn list(qid: &str, ids: &[&str]) -> RankedList {
        RankedList::new(
            qid,
            ids.iter()
                .enumerate()
                .map(|(i, id)| ScoredDoc {
                    id: id.to_string(),
                    score: -(i as f64),
                })
                .collect(),
            "",
        )
    }

    #[test]
    fn mrr_examples() {
        let mut q = Qrels::default();
        q.insert("a", "r", 1);
        assert_eq!(mrr(&[list("a", &["r", "x"])], &q).unwrap(), 1.0);

        q.insert("b", "r", 2);
        let runs = [list("a", &["r"]), list("b", &["x", "y", "z", "r"])];
        assert!((mrr(&runs, &q).unwrap() - 0.625).abs() < 1e-12);

        assert_eq!(mrr(&[list("a", &["x", "y"])], &q).unwrap(), 0.0);
        assert!(mrr(&[list("a", &["r"]), list("a", &["r"])], &q).is_err());
    }

    #[test]
    fn dcg_examples() {
        let mut q = Qrels::default();
        assert_eq!(dcg_at_k(&[list("a", &["x", "y"])], &q, 5), 0.0);
        q.insert("a", "g2", 2);
        q.insert("a", "g1", 1);
        let got = dcg_at_k(&[list("a", &["g2", "n", "g1"])], &q, 3);
        assert!((got - 3.5).abs() < 1e-12);
        let mut q1 = Qrels::default();
        q1.insert("a", "g", 1);
        assert_eq!(dcg_at_k(&[list("a", &["g"])], &q1, 1), 1.0);
    }

    #[test]
    fn ndcg_examples() {
        let mut q = Qrels::default();
        q.insert("a", "g", 2);
        let got = ndcg_at_k(&[list("a", &["n", "g"])], &q, 2);
        assert!((got - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((got - 0.6309).abs() < 1e-4);

        q.insert("a", "h", 1);
        assert!((ndcg_at_k(&[list("a", &["g", "h"])], &q, 5) - 1.0).abs() < 1e-15);

        let mut irr = Qrels::default();
        irr.insert("b", "x", 0);
        assert_eq!(ndcg_at_k(&[list("b", &["x"])], &irr, 5), 0.0);
    }

    #[test]
    fn ideal_uses_all_judged_docs() {
        let mut q = Qrels::default();
        q.insert("a", "g", 2);
        q.insert("a", "h", 2);
        // only one of the two ideal documents retrieved
        let v = ndcg_at_k(&[list("a", &["g"])], &q, 2);
        let expected = 3.0 / (3.0 + 3.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn evaluate_groups_by_language() {
        let mut q = Qrels::default();
        q.insert("a", "g", 2);
        q.insert("b", "g", 1);
        let runs = [list("a", &["g"]), list("b", &["x", "g"]), list("c", &["g"])];
        let langs: HashMap<String, String> = [("a", "en"), ("b", "en")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let rep = evaluate(&runs, &q, &langs).unwrap();
        assert_eq!(rep.overall.queries, 3);
        assert_eq!(rep.by_language["en"].queries, 2);
        assert_eq!(rep.by_language[UNKNOWN_LANGUAGE].queries, 1);
        assert!((rep.by_language["en"].mrr - 0.75).abs() < 1e-12);
        assert!(rep.to_table().contains("all"));
    }

    #[test]
    fn single_language_row_equals_overall() {
        let mut q = Qrels::default();
        q.insert("a", "g", 2);
        q.insert("b", "h", 1);
        let runs = [list("a", &["x", "g"]), list("b", &["h"])];
        let langs: HashMap<String, String> = [("a", "hi"), ("b", "hi")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let rep = evaluate(&runs, &q, &langs).unwrap();
        assert_eq!(rep.by_language["hi"], rep.overall);
    }
}
