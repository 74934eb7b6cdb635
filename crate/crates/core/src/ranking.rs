//! Ranked result lists shared by every retrieval stage.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub cid: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(cid: impl Into<String>, score: f64) -> Self {
        Self { cid: cid.into(), score }
    }
}

/// Score descending, then cid ascending. Total over finite scores.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.cid.cmp(&b.cid))
}

/// An ordered list of `(cid, score)` for one query, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList(pub Vec<ScoredDoc>);

impl RankedList {
    /// Sorts `docs` by [`rank_order`] and keeps the first `k`.
    pub fn top_k(mut docs: Vec<ScoredDoc>, k: usize) -> Self {
        if k < docs.len() {
            docs.select_nth_unstable_by(k, rank_order);
            docs.truncate(k);
        }
        docs.sort_by(rank_order);
        RankedList(docs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ScoredDoc> {
        self.0.iter()
    }

    pub fn cids(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|d| d.cid.as_str())
    }

    pub fn truncated(&self, k: usize) -> Self {
        RankedList(self.0.iter().take(k).cloned().collect())
    }
}

impl<'a> IntoIterator for &'a RankedList {
    type Item = &'a ScoredDoc;
    type IntoIter = std::slice::Iter<'a, ScoredDoc>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
