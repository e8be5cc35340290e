//! Data model and ingestion for debunks, query claims and graded relevance
//! judgments, plus train/validation/test splitting and training-pair
//! construction.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::read_jsonl;
use crate::{Error, Result};

/// One fact-checking article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Debunk {
    pub id: String,
    pub lang: String,
    pub claim: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at: Option<NaiveDate>,
    #[serde(default, rename = "source", skip_serializing_if = "Option::is_none")]
    pub source_org: Option<String>,
}

/// A claim used as a retrieval query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryClaim {
    pub id: String,
    pub lang: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_en: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceLevel {
    Exact,
    Partial,
    Irrelevant,
}

impl RelevanceLevel {
    pub fn is_positive(self) -> bool {
        matches!(self, RelevanceLevel::Exact | RelevanceLevel::Partial)
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Some(RelevanceLevel::Exact),
            "partial" => Some(RelevanceLevel::Partial),
            "irrelevant" => Some(RelevanceLevel::Irrelevant),
            _ => None,
        }
    }
}

impl fmt::Display for RelevanceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelevanceLevel::Exact => "exact",
            RelevanceLevel::Partial => "partial",
            RelevanceLevel::Irrelevant => "irrelevant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub debunk_id: String,
    pub level: RelevanceLevel,
}

/// The retrieval text of a debunk: claim and title joined by one space.
/// Empty fields contribute nothing, so no stray separator is emitted.
pub fn doc_text(d: &Debunk) -> String {
    match (d.claim.is_empty(), d.title.is_empty()) {
        (false, false) => format!("{} {}", d.claim, d.title),
        (false, true) => d.claim.clone(),
        (true, _) => d.title.clone(),
    }
}

fn is_lang_code(s: &str) -> bool {
    s.len() == 2 && s.bytes().all(|b| b.is_ascii_lowercase())
}

/// Immutable, id-indexed collection of records in file order.
#[derive(Debug, Clone)]
pub struct Collection<T> {
    items: Vec<T>,
    by_id: HashMap<String, usize>,
}

pub type DebunkCorpus = Collection<Debunk>;
pub type QuerySet = Collection<QueryClaim>;

pub trait Identified {
    fn id(&self) -> &str;
}

impl Identified for Debunk {
    fn id(&self) -> &str {
        &self.id
    }
}

impl Identified for QueryClaim {
    fn id(&self) -> &str {
        &self.id
    }
}

impl<T: Identified> Collection<T> {
    /// Builds a collection, rejecting duplicate ids. Line numbers in the
    /// error are 1-based positions in `items`.
    pub fn new(items: Vec<T>) -> Result<Self> {
        let lines: Vec<usize> = (1..=items.len()).collect();
        Self::with_lines(items, &lines, "record")
    }

    fn with_lines(items: Vec<T>, lines: &[usize], kind: &'static str) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            if let Some(prev) = by_id.insert(item.id().to_string(), idx) {
                return Err(Error::DuplicateId {
                    kind,
                    id: item.id().to_string(),
                    first_line: lines[prev],
                    second_line: lines[idx],
                });
            }
        }
        Ok(Collection { items, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&T> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Graded judgments keyed by query, in file order.
#[derive(Debug, Clone, Default)]
pub struct JudgmentSet {
    judgments: Vec<RelevanceJudgment>,
    by_query: HashMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LevelCounts {
    pub exact: usize,
    pub partial: usize,
    pub irrelevant: usize,
}

impl LevelCounts {
    pub fn positives(&self) -> usize {
        self.exact + self.partial
    }

    fn add(&mut self, level: RelevanceLevel) {
        match level {
            RelevanceLevel::Exact => self.exact += 1,
            RelevanceLevel::Partial => self.partial += 1,
            RelevanceLevel::Irrelevant => self.irrelevant += 1,
        }
    }
}

impl JudgmentSet {
    /// Builds a set, rejecting a repeated (query, debunk) pair.
    pub fn new(judgments: Vec<RelevanceJudgment>) -> Result<Self> {
        let lines: Vec<usize> = (1..=judgments.len()).collect();
        Self::with_lines(judgments, &lines)
    }

    fn with_lines(judgments: Vec<RelevanceJudgment>, lines: &[usize]) -> Result<Self> {
        let mut seen: HashMap<(&str, &str), usize> = HashMap::new();
        let mut by_query: HashMap<String, Vec<usize>> = HashMap::new();
        for (idx, j) in judgments.iter().enumerate() {
            if let Some(prev) = seen.insert((&j.query_id, &j.debunk_id), idx) {
                return Err(Error::DuplicateId {
                    kind: "judgment",
                    id: format!("{}/{}", j.query_id, j.debunk_id),
                    first_line: lines[prev],
                    second_line: lines[idx],
                });
            }
            by_query.entry(j.query_id.clone()).or_default().push(idx);
        }
        drop(seen);
        Ok(JudgmentSet { judgments, by_query })
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RelevanceJudgment> {
        self.judgments.iter()
    }

    pub fn for_query<'a>(&'a self, query_id: &str) -> impl Iterator<Item = &'a RelevanceJudgment> + 'a {
        self.by_query
            .get(query_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.judgments[i])
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn counts(&self) -> LevelCounts {
        let mut c = LevelCounts::default();
        for j in &self.judgments {
            c.add(j.level);
        }
        c
    }

    fn check_ids(&self, queries: &QuerySet, debunks: &DebunkCorpus) -> Result<()> {
        for j in &self.judgments {
            if !queries.contains(&j.query_id) {
                return Err(Error::DanglingId {
                    kind: "query",
                    id: j.query_id.clone(),
                });
            }
            if !debunks.contains(&j.debunk_id) {
                return Err(Error::DanglingId {
                    kind: "debunk",
                    id: j.debunk_id.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub queries: usize,
    pub debunks: usize,
    pub exact: usize,
    pub partial: usize,
    pub irrelevant: usize,
}

pub fn summarize(debunks: &DebunkCorpus, queries: &QuerySet, judgments: &JudgmentSet) -> DatasetSummary {
    let c = judgments.counts();
    DatasetSummary {
        queries: queries.len(),
        debunks: debunks.len(),
        exact: c.exact,
        partial: c.partial,
        irrelevant: c.irrelevant,
    }
}

/// Accepts `YYYY-MM-DD` or an RFC 3339 timestamp (reduced to its UTC date).
fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|dt| dt.naive_utc().date()))
}

#[derive(Deserialize)]
struct RawDebunk {
    id: String,
    lang: String,
    #[serde(default)]
    claim: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    published_at: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

#[derive(Deserialize)]
struct RawQuery {
    id: String,
    lang: String,
    text: String,
    #[serde(default)]
    text_en: Option<String>,
    #[serde(default)]
    created_at: Option<String>,
}

#[derive(Deserialize)]
struct RawJudgment {
    query_id: String,
    debunk_id: String,
    level: String,
}

fn invalid(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::InvalidRecord {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn optional_date(path: &Path, line: usize, field: &str, raw: Option<String>) -> Result<Option<NaiveDate>> {
    match raw.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => parse_date(s)
            .map(Some)
            .ok_or_else(|| invalid(path, line, format!("unparseable {field} {s:?}"))),
    }
}

pub fn load_debunks(path: &Path) -> Result<DebunkCorpus> {
    let rows: Vec<(usize, RawDebunk)> = read_jsonl(path)?;
    let mut lines = Vec::with_capacity(rows.len());
    let mut items = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if r.id.is_empty() {
            return Err(invalid(path, line, "empty debunk id"));
        }
        if !is_lang_code(&r.lang) {
            return Err(invalid(path, line, format!("invalid language code {:?}", r.lang)));
        }
        if r.claim.is_empty() && r.title.is_empty() {
            return Err(invalid(path, line, format!("debunk {:?} has neither claim nor title", r.id)));
        }
        let published_at = optional_date(path, line, "published_at", r.published_at)?;
        lines.push(line);
        items.push(Debunk {
            id: r.id,
            lang: r.lang,
            claim: r.claim,
            title: r.title,
            published_at,
            source_org: r.source,
        });
    }
    Collection::with_lines(items, &lines, "debunk")
}

pub fn load_queries(path: &Path) -> Result<QuerySet> {
    let rows: Vec<(usize, RawQuery)> = read_jsonl(path)?;
    let mut lines = Vec::with_capacity(rows.len());
    let mut items = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if r.id.is_empty() {
            return Err(invalid(path, line, "empty query id"));
        }
        if !is_lang_code(&r.lang) {
            return Err(invalid(path, line, format!("invalid language code {:?}", r.lang)));
        }
        if r.text.is_empty() {
            return Err(invalid(path, line, format!("query {:?} has empty text", r.id)));
        }
        let created_at = optional_date(path, line, "created_at", r.created_at)?;
        lines.push(line);
        items.push(QueryClaim {
            id: r.id,
            lang: r.lang,
            text: r.text,
            text_en: r.text_en,
            created_at,
        });
    }
    Collection::with_lines(items, &lines, "query")
}

/// Reads judgments without resolving ids; see [`load_corpus`] for the
/// checked variant.
pub fn load_qrels(path: &Path) -> Result<JudgmentSet> {
    let rows: Vec<(usize, RawJudgment)> = read_jsonl(path)?;
    let mut lines = Vec::with_capacity(rows.len());
    let mut items = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let level = RelevanceLevel::parse(&r.level).ok_or_else(|| Error::UnknownLevel {
            path: path.to_path_buf(),
            line,
            level: r.level.clone(),
        })?;
        lines.push(line);
        items.push(RelevanceJudgment {
            query_id: r.query_id,
            debunk_id: r.debunk_id,
            level,
        });
    }
    JudgmentSet::with_lines(items, &lines)
}

/// Loads the three JSONL files and checks that every judgment resolves.
pub fn load_corpus(
    debunks_path: &Path,
    queries_path: &Path,
    qrels_path: &Path,
) -> Result<(DebunkCorpus, QuerySet, JudgmentSet)> {
    let debunks = load_debunks(debunks_path)?;
    let queries = load_queries(queries_path)?;
    let judgments = load_qrels(qrels_path)?;
    judgments.check_ids(&queries, &debunks)?;
    let s = summarize(&debunks, &queries, &judgments);
    log::info!(
        "loaded {} queries, {} debunks, {} judgments ({} exact, {} partial, {} irrelevant)",
        s.queries,
        s.debunks,
        judgments.len(),
        s.exact,
        s.partial,
        s.irrelevant
    );
    Ok((debunks, queries, judgments))
}

/// Externally produced English translations keyed by debunk or query id.
#[derive(Debug, Clone, Default)]
pub struct Translations(HashMap<String, String>);

impl Translations {
    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            text_en: String,
        }
        let rows: Vec<(usize, Row)> = read_jsonl(path)?;
        let mut map = HashMap::with_capacity(rows.len());
        let mut first_line = HashMap::new();
        for (line, r) in rows {
            if let Some(prev) = first_line.insert(r.id.clone(), line) {
                return Err(Error::DuplicateId {
                    kind: "translation",
                    id: r.id,
                    first_line: prev,
                    second_line: line,
                });
            }
            map.insert(r.id, r.text_en);
        }
        Ok(Translations(map))
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }

    pub fn insert(&mut self, id: impl Into<String>, text_en: impl Into<String>) {
        self.0.insert(id.into(), text_en.into());
    }
}

/// Split configuration as stored in `splits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_query_ids: Vec<String>,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Restricts the split to these queries (e.g. only claims annotated as
    /// textual misinformation). All queries take part when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_query_ids: Option<Vec<String>>,
}

fn default_validation_fraction() -> f64 {
    0.10
}

impl SplitSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: PathBuf::from(path),
            line: source.line(),
            source,
        })
    }
}

/// Training queries together with the debunks that must never appear as
/// training positives because they are linked to a test query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSet {
    pub query_ids: Vec<String>,
    pub blocked_debunks: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: TrainSet,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    /// Positive judgments of train/validation queries whose debunk is also
    /// linked to a test query; these never become training positives.
    pub leakage_excluded: usize,
}

impl Split {
    /// Train and validation queries together (train first), as one
    /// pair-building pool.
    pub fn train_with_validation(&self) -> TrainSet {
        let mut query_ids = self.train.query_ids.clone();
        query_ids.extend(self.validation.iter().cloned());
        TrainSet {
            query_ids,
            blocked_debunks: self.train.blocked_debunks.clone(),
        }
    }

    pub fn validation_set(&self) -> TrainSet {
        TrainSet {
            query_ids: self.validation.clone(),
            blocked_debunks: self.train.blocked_debunks.clone(),
        }
    }
}

/// Partitions queries into train, validation and test.
///
/// Test membership is taken verbatim from `spec`. Validation queries are a
/// seeded uniform draw of `round(fraction * n)` non-test queries (at most
/// `n - 1`, so training is never emptied by validation alone). All three
/// lists keep query-file order.
pub fn split(queries: &QuerySet, judgments: &JudgmentSet, spec: &SplitSpec) -> Result<Split> {
    if !(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0) {
        return Err(Error::InvalidFraction(spec.validation_fraction));
    }
    let test_ids: HashSet<&str> = spec.test_query_ids.iter().map(String::as_str).collect();
    if test_ids.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    for id in &test_ids {
        if !queries.contains(id) {
            return Err(Error::DanglingId {
                kind: "test query",
                id: id.to_string(),
            });
        }
    }
    let pool: Option<HashSet<&str>> = match &spec.pool_query_ids {
        Some(ids) => {
            for id in ids {
                if !queries.contains(id) {
                    return Err(Error::DanglingId {
                        kind: "pool query",
                        id: id.clone(),
                    });
                }
            }
            Some(ids.iter().map(String::as_str).collect())
        }
        None => None,
    };
    let in_pool = |id: &str| pool.as_ref().is_none_or(|p| p.contains(id));

    let test: Vec<String> = queries
        .iter()
        .filter(|q| test_ids.contains(q.id.as_str()))
        .map(|q| q.id.clone())
        .collect();
    let non_test: Vec<String> = queries
        .iter()
        .filter(|q| !test_ids.contains(q.id.as_str()) && in_pool(&q.id))
        .map(|q| q.id.clone())
        .collect();
    if non_test.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }

    let n = non_test.len();
    let n_val = ((spec.validation_fraction * n as f64).round() as usize).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    partial_shuffle(&mut order, n_val, &mut rng);
    let chosen: HashSet<usize> = order[..n_val].iter().copied().collect();

    let mut train = Vec::with_capacity(n - n_val);
    let mut validation = Vec::with_capacity(n_val);
    for (i, id) in non_test.into_iter().enumerate() {
        if chosen.contains(&i) {
            validation.push(id);
        } else {
            train.push(id);
        }
    }

    let blocked_debunks: BTreeSet<String> = test
        .iter()
        .flat_map(|q| judgments.for_query(q))
        .filter(|j| j.level.is_positive())
        .map(|j| j.debunk_id.clone())
        .collect();
    let leakage_excluded = train
        .iter()
        .chain(&validation)
        .flat_map(|q| judgments.for_query(q))
        .filter(|j| j.level.is_positive() && blocked_debunks.contains(&j.debunk_id))
        .count();
    if leakage_excluded > 0 {
        log::warn!("{leakage_excluded} training positives point at test-linked debunks and are excluded");
    }

    Ok(Split {
        train: TrainSet {
            query_ids: train,
            blocked_debunks,
        },
        validation,
        test,
        leakage_excluded,
    })
}

/// In-place partial Fisher-Yates: after the call, `items[..k]` holds a
/// uniform draw without replacement, in draw order.
pub(crate) fn partial_shuffle<T, R: Rng>(items: &mut [T], k: usize, rng: &mut R) {
    let len = items.len();
    for i in 0..k.min(len) {
        let j = rng.gen_range(i..len);
        items.swap(i, j);
    }
}

/// Numeric training labels per judgment level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub exact: f64,
    pub partial: f64,
    pub negative: f64,
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap {
            exact: 1.0,
            partial: 0.5,
            negative: 0.0,
        }
    }
}

impl LabelMap {
    pub fn label(&self, level: RelevanceLevel) -> f64 {
        match level {
            RelevanceLevel::Exact => self.exact,
            RelevanceLevel::Partial => self.partial,
            RelevanceLevel::Irrelevant => self.negative,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("exact", self.exact), ("partial", self.partial), ("negative", self.negative)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("label for {name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub negatives_per_query: usize,
    pub label_map: LabelMap,
    pub seed: u64,
    /// Also emit Irrelevant-judged pairs as explicit negatives (they are then
    /// removed from the sampling pool). Off by default.
    #[serde(default)]
    pub irrelevant_as_negatives: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            negatives_per_query: 10,
            label_map: LabelMap::default(),
            seed: 42,
            irrelevant_as_negatives: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub query_id: String,
    pub debunk_id: String,
    pub label: f64,
}

/// Builds labelled (query, debunk) pairs for the given queries.
///
/// For each query in order: its Exact/Partial judgments (in file order) become
/// positives, except those pointing at a blocked debunk; then
/// `negatives_per_query` debunks are drawn uniformly without replacement from
/// the debunks that carry no Exact/Partial judgment for that query. The draw
/// uses a single ChaCha8 stream seeded once, applying a partial Fisher-Yates
/// shuffle over the eligible debunks in corpus order.
pub fn build_train_pairs(
    train: &TrainSet,
    judgments: &JudgmentSet,
    corpus: &DebunkCorpus,
    config: &PairConfig,
) -> Result<Vec<TrainPair>> {
    config.label_map.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = Vec::new();
    for qid in &train.query_ids {
        let mut excluded: HashSet<&str> = HashSet::new();
        let mut explicit_negatives = Vec::new();
        for j in judgments.for_query(qid) {
            if !corpus.contains(&j.debunk_id) {
                return Err(Error::DanglingId {
                    kind: "debunk",
                    id: j.debunk_id.clone(),
                });
            }
            if j.level.is_positive() {
                excluded.insert(&j.debunk_id);
                if !train.blocked_debunks.contains(&j.debunk_id) {
                    pairs.push(TrainPair {
                        query_id: qid.clone(),
                        debunk_id: j.debunk_id.clone(),
                        label: config.label_map.label(j.level),
                    });
                }
            } else if config.irrelevant_as_negatives {
                excluded.insert(&j.debunk_id);
                explicit_negatives.push(TrainPair {
                    query_id: qid.clone(),
                    debunk_id: j.debunk_id.clone(),
                    label: config.label_map.negative,
                });
            }
        }
        pairs.extend(explicit_negatives);

        let mut eligible: Vec<&str> = corpus
            .iter()
            .map(|d| d.id.as_str())
            .filter(|id| !excluded.contains(id))
            .collect();
        let k = config.negatives_per_query;
        if eligible.len() < k {
            return Err(Error::NotEnoughNegatives {
                query_id: qid.clone(),
                eligible: eligible.len(),
                required: k,
            });
        }
        partial_shuffle(&mut eligible, k, &mut rng);
        pairs.extend(eligible[..k].iter().map(|id| TrainPair {
            query_id: qid.clone(),
            debunk_id: id.to_string(),
            label: config.label_map.negative,
        }));
    }
    Ok(pairs)
}
