//! Exist@m and MRR@k over runs with one or more gold documents per query.
//!
//! Both metrics average over every query in the qrels. A query with no
//! entry in the run scores 0. Summation runs in qid order so results are
//! bit-stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::ranking::{RankedList, ScoredDoc};

/// Gold documents per query. Every set is non-empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels(BTreeMap<String, BTreeSet<String>>);

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, cid: impl Into<String>) {
        self.0.entry(qid.into()).or_default().insert(cid.into());
    }

    pub fn gold(&self, qid: &str) -> Option<&BTreeSet<String>> {
        self.0.get(qid)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.0.iter()
    }

    pub fn qids(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    /// Reads `qid<TAB>cid` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut qrels = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let (qid, cid) = line
                .split_once('\t')
                .filter(|(_, c)| !c.contains('\t'))
                .ok_or_else(|| Error::Format(format!("{}:{}: expected `qid<TAB>cid`", path.display(), i + 1)))?;
            qrels.insert(qid, cid);
        }
        Ok(qrels)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (qid, golds) in &self.0 {
            for cid in golds {
                let _ = writeln!(out, "{qid}\t{cid}");
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }
}

impl<Q: Into<String>, C: Into<String>> FromIterator<(Q, C)> for Qrels {
    fn from_iter<I: IntoIterator<Item = (Q, C)>>(iter: I) -> Self {
        let mut q = Qrels::new();
        for (qid, cid) in iter {
            q.insert(qid, cid);
        }
        q
    }
}

/// Ranked output per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run(BTreeMap<String, RankedList>);

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one query's list, rejecting duplicate cids within it.
    pub fn insert(&mut self, qid: impl Into<String>, list: RankedList) -> Result<()> {
        let qid = qid.into();
        let mut seen = HashSet::with_capacity(list.len());
        if let Some(dup) = list.cids().find(|c| !seen.insert(*c)) {
            return Err(Error::Format(format!("query {qid}: cid `{dup}` appears twice")));
        }
        self.0.insert(qid, list);
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&RankedList> {
        self.0.get(qid)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RankedList)> {
        self.0.iter()
    }

    /// `qid<TAB>rank<TAB>cid<TAB>score`, ranks from 1, qids ascending.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (qid, list) in &self.0 {
            for (i, d) in list.iter().enumerate() {
                let _ = writeln!(out, "{qid}\t{}\t{}\t{:?}", i + 1, d.cid, d.score);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut rows: BTreeMap<String, Vec<(usize, ScoredDoc)>> = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("{}:{}: expected `qid<TAB>rank<TAB>cid<TAB>score`", path.display(), i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [qid, rank, cid, score] = fields[..] else { return Err(bad()) };
            let rank: usize = rank.parse().ok().filter(|&r| r >= 1).ok_or_else(bad)?;
            let score: f64 = score.parse().map_err(|_| bad())?;
            rows.entry(qid.to_owned()).or_default().push((rank, ScoredDoc::new(cid, score)));
        }
        let mut run = Run::new();
        for (qid, mut entries) in rows {
            entries.sort_by_key(|(rank, _)| *rank);
            run.insert(qid, RankedList(entries.into_iter().map(|(_, d)| d).collect()))?;
        }
        Ok(run)
    }
}

/// 1-based rank of the first gold document within the first `cutoff`
/// entries, if any.
pub fn first_gold_rank(list: &RankedList, gold: &BTreeSet<String>, cutoff: usize) -> Option<usize> {
    list.cids().take(cutoff).position(|c| gold.contains(c)).map(|p| p + 1)
}

fn check_cutoff(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(Error::Parameter(format!("{name} must be >= 1")));
    }
    Ok(())
}

fn mean_over_queries(run: &Run, qrels: &Qrels, payoff: impl Fn(Option<usize>) -> f64, cutoff: usize) -> Result<f64> {
    if qrels.is_empty() {
        return Err(Error::Parameter("no evaluation queries".into()));
    }
    let empty = RankedList::default();
    let total: f64 = qrels
        .iter()
        .map(|(qid, gold)| payoff(first_gold_rank(run.get(qid).unwrap_or(&empty), gold, cutoff)))
        .sum();
    Ok(total / qrels.len() as f64)
}

/// Fraction of queries with at least one gold document in the top `m`.
pub fn exist_at_m(run: &Run, qrels: &Qrels, m: usize) -> Result<f64> {
    check_cutoff("m", m)?;
    mean_over_queries(run, qrels, |r| if r.is_some() { 1.0 } else { 0.0 }, m)
}

/// Mean reciprocal rank of the first gold document within the top `k`.
pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    check_cutoff("k", k)?;
    mean_over_queries(run, qrels, |r| r.map_or(0.0, |r| 1.0 / r as f64), k)
}

/// Serialized metric summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "exist@m")]
    pub exist_at_m: f64,
    #[serde(rename = "mrr@k")]
    pub mrr_at_k: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Both metrics rounded to four decimals.
    pub display: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(exist_at_m: f64, mrr_at_k: f64, n: usize, m: usize, k: usize) -> Self {
        let display = BTreeMap::from([
            ("exist@m".to_owned(), format!("{exist_at_m:.4}")),
            ("mrr@k".to_owned(), format!("{mrr_at_k:.4}")),
        ]);
        Self { exist_at_m, mrr_at_k, n, m, k, display }
    }

    /// Exist@m over `first_stage`, MRR@k over `final_stage`.
    pub fn compute(first_stage: &Run, final_stage: &Run, qrels: &Qrels, m: usize, k: usize) -> Result<Self> {
        Ok(Self::new(
            exist_at_m(first_stage, qrels, m)?,
            mrr_at_k(final_stage, qrels, k)?,
            qrels.len(),
            m,
            k,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
