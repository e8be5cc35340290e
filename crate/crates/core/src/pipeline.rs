//! Multistage retrieval: a first stage (BM25 or dense) produces candidates,
//! then the top `depth` of them are re-scored by a pair scorer or reordered
//! by a listwise re-ranker. Candidates below the depth keep their first-stage
//! order and scores.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{doc_text, DebunkCorpus, QueryClaim, Translations};
use crate::dense::{hash_embed, DenseIndex, EmbeddingMatrix};
use crate::lexical::{bm25_search, tokenize, Bm25Params, InvertedIndex};
use crate::metrics::Qrels;
use crate::ranking::{RankedList, ScoredDoc};
use crate::trainer::ProjectionHead;
use crate::{Error, Result};

pub mod external;
pub mod protocol;

pub use external::{ExternalScorer, ExternalScorerConfig};

/// A candidate generator over a fixed debunk corpus.
pub trait FirstStage: Send + Sync {
    fn tag(&self) -> String;
    fn search(&self, query: &QueryClaim, top_k: usize) -> Result<RankedList>;
}

/// BM25 over the inverted index. With `translated_queries` set the query's
/// English translation is used (its `text_en` field, else the side file).
pub struct LexicalStage {
    pub index: InvertedIndex,
    pub params: Bm25Params,
    pub translated_queries: bool,
    pub query_translations: Option<Translations>,
}

impl LexicalStage {
    pub fn new(index: InvertedIndex, params: Bm25Params) -> Self {
        LexicalStage {
            index,
            params,
            translated_queries: false,
            query_translations: None,
        }
    }

    fn query_text<'a>(&'a self, q: &'a QueryClaim) -> Result<&'a str> {
        if !self.translated_queries {
            return Ok(&q.text);
        }
        q.text_en
            .as_deref()
            .or_else(|| self.query_translations.as_ref().and_then(|t| t.get(&q.id)))
            .ok_or_else(|| Error::DanglingId {
                kind: "translation for query",
                id: q.id.clone(),
            })
    }
}

impl FirstStage for LexicalStage {
    fn tag(&self) -> String {
        format!(
            "bm25(k1={},b={}{})",
            self.params.k1,
            self.params.b,
            if self.translated_queries { ",translated" } else { "" }
        )
    }

    fn search(&self, query: &QueryClaim, top_k: usize) -> Result<RankedList> {
        let terms = tokenize(self.query_text(query)?);
        let mut list = bm25_search(&self.index, &terms, self.params, top_k);
        list.query_id = query.id.clone();
        list.stage_tag = self.tag();
        Ok(list)
    }
}

/// Where query vectors for dense retrieval come from.
pub enum QueryEncoder {
    /// Precomputed embeddings looked up by query id.
    Table(EmbeddingMatrix),
    /// [`hash_embed`] of the original-language query text.
    Hash { dim: usize, seed: u64 },
}

/// Exact cosine search. The debunk index is expected to be projected
/// already; `head`, when set, is applied to each query vector.
pub struct DenseStage {
    pub index: DenseIndex,
    pub encoder: QueryEncoder,
    pub head: Option<ProjectionHead>,
}

impl DenseStage {
    pub fn query_vector(&self, query: &QueryClaim) -> Result<Vec<f64>> {
        let v = match &self.encoder {
            QueryEncoder::Table(m) => m
                .get(&query.id)
                .ok_or_else(|| Error::DanglingId {
                    kind: "query embedding",
                    id: query.id.clone(),
                })?
                .to_vec(),
            QueryEncoder::Hash { dim, seed } => hash_embed(&query.text, *dim, *seed)?,
        };
        Ok(match &self.head {
            Some(h) => {
                if h.dim_in() != v.len() {
                    return Err(Error::DimMismatch {
                        expected: h.dim_in(),
                        got: v.len(),
                    });
                }
                h.forward(&v)
            }
            None => v,
        })
    }
}

impl FirstStage for DenseStage {
    fn tag(&self) -> String {
        let enc = match &self.encoder {
            QueryEncoder::Table(_) => "table".to_string(),
            QueryEncoder::Hash { dim, seed } => format!("hash{dim}/{seed}"),
        };
        let head = self.head.as_ref().map(|h| format!(",head={}", &h.checksum()[..12])).unwrap_or_default();
        format!("dense({enc}{head})")
    }

    fn search(&self, query: &QueryClaim, top_k: usize) -> Result<RankedList> {
        let mut list = self.index.search(&self.query_vector(query)?, top_k)?.ranked;
        list.query_id = query.id.clone();
        list.stage_tag = self.tag();
        Ok(list)
    }
}

/// Cross-encoder input: the original-language query text and the debunk's
/// claim-then-title text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInput {
    pub debunk_id: String,
    pub query_text: String,
    pub doc_text: String,
}

pub fn make_pair_inputs(query: &QueryClaim, candidates: &RankedList, corpus: &DebunkCorpus) -> Result<Vec<PairInput>> {
    candidates
        .entries
        .iter()
        .map(|e| {
            let d = corpus.get(&e.id).ok_or_else(|| Error::DanglingId {
                kind: "debunk",
                id: e.id.clone(),
            })?;
            Ok(PairInput {
                debunk_id: e.id.clone(),
                query_text: query.text.clone(),
                doc_text: doc_text(d),
            })
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("failed to start scorer: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("scorer transport failure: {0}")]
    Transport(String),
    #[error("scorer did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("scorer protocol violation: {0}")]
    Protocol(String),
    #[error("scorer reported an error: {0}")]
    Remote(String),
    #[error("empty scorer response")]
    EmptyResponse,
}

/// Scores (query, debunk) pairs independently; one score per input, in order.
pub trait PairScorer {
    fn score(&mut self, inputs: &[PairInput]) -> std::result::Result<Vec<f64>, ScorerError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListCandidate {
    pub id: String,
    pub text: String,
}

/// Orders a whole candidate list at once, returning candidate ids.
pub trait ListwiseScorer {
    fn order(&mut self, query: &str, candidates: &[ListCandidate]) -> std::result::Result<Vec<String>, ScorerError>;

    /// Largest list the scorer accepts in one request.
    fn max_candidates(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    PassThrough,
    ExternalPair,
    ExternalListwise,
    OracleQrels,
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::PassThrough => "pass-through",
            ScorerKind::ExternalPair => "external-pair",
            ScorerKind::ExternalListwise => "external-listwise",
            ScorerKind::OracleQrels => "oracle-qrels",
        })
    }
}

pub enum Reranker {
    PassThrough,
    Pair(Box<dyn PairScorer>),
    Listwise(Box<dyn ListwiseScorer>),
    /// Scores each candidate by its judged gain.
    Oracle(Arc<Qrels>),
}

impl Reranker {
    pub fn kind(&self) -> ScorerKind {
        match self {
            Reranker::PassThrough => ScorerKind::PassThrough,
            Reranker::Pair(_) => ScorerKind::ExternalPair,
            Reranker::Listwise(_) => ScorerKind::ExternalListwise,
            Reranker::Oracle(_) => ScorerKind::OracleQrels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub top_k_stage1: usize,
    /// Number of leading candidates handed to the re-ranker.
    pub depth: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            top_k_stage1: 100,
            depth: 20,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.depth > self.top_k_stage1 {
            return Err(Error::InvalidArgument(format!(
                "re-rank depth must satisfy 1 <= depth <= top_k_stage1, got {} and {}",
                self.depth, self.top_k_stage1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrieveError {
    #[error(transparent)]
    Data(#[from] Error),
    /// The re-ranker failed; the first-stage list is returned for fallback.
    #[error("re-ranking query {:?} failed: {source}", stage1.query_id)]
    Scorer {
        stage1: RankedList,
        #[source]
        source: ScorerError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListwiseOutcome {
    pub list: RankedList,
    /// True when the returned permutation had to be repaired.
    pub repaired: bool,
}

/// Turns a possibly malformed order into a permutation of `candidates`:
/// foreign ids are dropped, repeated ids keep their first occurrence and
/// missing ids are appended in candidate order. Returns candidate indices
/// and whether any repair happened.
pub fn repair_permutation(candidates: &[&str], order: &[String]) -> (Vec<usize>, bool) {
    let pos: std::collections::HashMap<&str, usize> =
        candidates.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut used = vec![false; candidates.len()];
    let mut out = Vec::with_capacity(candidates.len());
    let mut repaired = false;
    for id in order {
        match pos.get(id.as_str()) {
            Some(&i) if !used[i] => {
                used[i] = true;
                out.push(i);
            }
            _ => repaired = true,
        }
    }
    for (i, u) in used.iter().enumerate() {
        if !u {
            repaired = true;
            out.push(i);
        }
    }
    (out, repaired)
}

/// Sends the query and all candidate texts to a listwise re-ranker in one
/// request and reorders the candidates (keeping their scores) accordingly.
pub fn listwise_rerank(
    query: &QueryClaim,
    candidates: &RankedList,
    scorer: &mut dyn ListwiseScorer,
    corpus: &DebunkCorpus,
) -> std::result::Result<ListwiseOutcome, RetrieveError> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("listwise re-ranking needs at least one candidate".into()).into());
    }
    let payload: Vec<ListCandidate> = make_pair_inputs(query, candidates, corpus)?
        .into_iter()
        .map(|p| ListCandidate {
            id: p.debunk_id,
            text: p.doc_text,
        })
        .collect();
    let order = scorer.order(&query.text, &payload).map_err(|source| RetrieveError::Scorer {
        stage1: candidates.clone(),
        source,
    })?;
    if order.is_empty() {
        return Err(RetrieveError::Scorer {
            stage1: candidates.clone(),
            source: ScorerError::EmptyResponse,
        });
    }
    let ids: Vec<&str> = candidates.ids().collect();
    let (perm, repaired) = repair_permutation(&ids, &order);
    if repaired {
        log::warn!("repaired listwise permutation for query {:?}", query.id);
    }
    let entries = perm.into_iter().map(|i| candidates.entries[i].clone()).collect();
    Ok(ListwiseOutcome {
        list: RankedList::new(candidates.query_id.clone(), entries, candidates.stage_tag.clone()),
        repaired,
    })
}

/// Re-ranks the first `depth` entries of a first-stage list.
///
/// Pair and oracle scorers replace the block's scores and the block is
/// stably sorted by them, so ties keep first-stage order. Entries past the
/// depth are copied unchanged.
pub fn rerank(
    query: &QueryClaim,
    stage1: RankedList,
    reranker: &mut Reranker,
    depth: usize,
    corpus: &DebunkCorpus,
) -> std::result::Result<ListwiseOutcome, RetrieveError> {
    let depth = match reranker {
        Reranker::Listwise(s) => s.max_candidates().map_or(depth, |m| depth.min(m)),
        _ => depth,
    }
    .min(stage1.len());
    let tag = format!("{}+{}(depth={depth})", stage1.stage_tag, reranker.kind());
    if depth == 0 || matches!(reranker, Reranker::PassThrough) {
        let mut list = stage1;
        list.stage_tag = tag;
        return Ok(ListwiseOutcome { list, repaired: false });
    }

    let head = RankedList::new(stage1.query_id.clone(), stage1.entries[..depth].to_vec(), stage1.stage_tag.clone());
    let (block, repaired) = match reranker {
        Reranker::PassThrough => unreachable!(),
        Reranker::Listwise(scorer) => {
            let out = listwise_rerank(query, &head, scorer.as_mut(), corpus).map_err(|e| with_stage1(e, &stage1))?;
            (out.list.entries, out.repaired)
        }
        Reranker::Pair(scorer) => {
            let inputs = make_pair_inputs(query, &head, corpus)?;
            let scores = scorer.score(&inputs).map_err(|source| RetrieveError::Scorer {
                stage1: stage1.clone(),
                source,
            })?;
            if scores.len() != inputs.len() || scores.iter().any(|s| !s.is_finite()) {
                return Err(RetrieveError::Scorer {
                    stage1,
                    source: ScorerError::Protocol(format!(
                        "expected {} finite scores, got {:?}",
                        inputs.len(),
                        scores
                    )),
                });
            }
            (rescore(&head.entries, &scores), false)
        }
        Reranker::Oracle(qrels) => {
            let scores: Vec<f64> = head
                .entries
                .iter()
                .map(|e| f64::from(qrels.gain(&query.id, &e.id)))
                .collect();
            (rescore(&head.entries, &scores), false)
        }
    };
    let mut entries = block;
    entries.extend_from_slice(&stage1.entries[depth..]);
    Ok(ListwiseOutcome {
        list: RankedList::new(stage1.query_id, entries, tag),
        repaired,
    })
}

fn with_stage1(e: RetrieveError, stage1: &RankedList) -> RetrieveError {
    match e {
        RetrieveError::Scorer { source, .. } => RetrieveError::Scorer {
            stage1: stage1.clone(),
            source,
        },
        other => other,
    }
}

fn rescore(entries: &[ScoredDoc], scores: &[f64]) -> Vec<ScoredDoc> {
    let mut block: Vec<ScoredDoc> = entries
        .iter()
        .zip(scores)
        .map(|(e, &s)| ScoredDoc {
            id: e.id.clone(),
            score: s,
        })
        .collect();
    // stable: equal scores keep first-stage order
    block.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    block
}

/// Anything that maps a query to a ranked list; the unit timed by the
/// latency benchmark.
pub trait Retriever {
    fn tag(&self) -> String;
    fn retrieve(&mut self, query: &QueryClaim) -> std::result::Result<RankedList, RetrieveError>;
}

/// A first stage followed by a re-ranker.
pub struct Pipeline {
    pub stage1: Box<dyn FirstStage>,
    pub reranker: Reranker,
    pub config: RerankConfig,
    pub corpus: Arc<DebunkCorpus>,
}

impl Pipeline {
    pub fn new(
        stage1: Box<dyn FirstStage>,
        reranker: Reranker,
        config: RerankConfig,
        corpus: Arc<DebunkCorpus>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            stage1,
            reranker,
            config,
            corpus,
        })
    }
}

/// Runs the first stage, then re-ranks the top `config.depth` candidates.
pub fn retrieve(
    query: &QueryClaim,
    stage1: &dyn FirstStage,
    reranker: &mut Reranker,
    config: &RerankConfig,
    corpus: &DebunkCorpus,
) -> std::result::Result<RankedList, RetrieveError> {
    config.validate()?;
    let first = stage1.search(query, config.top_k_stage1)?;
    let mut out = rerank(query, first, reranker, config.depth, corpus)?.list;
    out.stage_tag = format!("{}|top={}", out.stage_tag, config.top_k_stage1);
    Ok(out)
}

impl Retriever for Pipeline {
    fn tag(&self) -> String {
        format!(
            "{}+{}(depth={})|top={}",
            self.stage1.tag(),
            self.reranker.kind(),
            self.config.depth,
            self.config.top_k_stage1
        )
    }

    fn retrieve(&mut self, query: &QueryClaim) -> std::result::Result<RankedList, RetrieveError> {
        retrieve(query, self.stage1.as_ref(), &mut self.reranker, &self.config, &self.corpus)
    }
}
