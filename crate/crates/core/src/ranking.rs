//! Ranked result lists, the unit exchanged between retrieval stages and
//! consumed by the metrics.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: String,
    pub score: f64,
}

/// Ordered results for a single query. Position in `entries` is the rank;
/// scores are informational once a re-ranker has rewritten the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    #[serde(rename = "ranking")]
    pub entries: Vec<ScoredDoc>,
    #[serde(default)]
    pub stage_tag: String,
}

/// Descending score, then ascending id.
pub(crate) fn by_score_then_id(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, entries: Vec<ScoredDoc>, stage_tag: impl Into<String>) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries,
            stage_tag: stage_tag.into(),
        }
    }

    /// Sorts `entries` by descending score with ascending-id tie-break and
    /// keeps at most `top_k`.
    pub(crate) fn from_unsorted(
        query_id: impl Into<String>,
        mut entries: Vec<ScoredDoc>,
        top_k: usize,
        stage_tag: impl Into<String>,
    ) -> Self {
        entries.sort_by(by_score_then_id);
        entries.truncate(top_k);
        RankedList::new(query_id, entries, stage_tag)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Checks the structural invariants: unique ids and finite scores.
    /// Score monotonicity is only required of first-stage output, see
    /// [`RankedList::is_score_sorted`].
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if !e.score.is_finite() {
                return Err(Error::NonFinite(format!(
                    "score for {:?} in ranking of {:?}",
                    e.id, self.query_id
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "debunk {:?} appears twice in ranking of {:?}",
                    e.id, self.query_id
                )));
            }
        }
        Ok(())
    }

    pub fn is_score_sorted(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].score >= w[1].score)
    }
}

/// Reads a run file: one [`RankedList`] per line.
pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let rows: Vec<(usize, RankedList)> = crate::io::read_jsonl(path)?;
    rows.into_iter()
        .map(|(line, list)| {
            list.validate().map_err(|e| Error::InvalidRecord {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
            Ok(list)
        })
        .collect()
}

pub fn write_run(path: &Path, lists: &[RankedList]) -> Result<()> {
    crate::io::write_jsonl(path, lists)
}
