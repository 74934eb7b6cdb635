//! Negative mining for re-ranker training data.
//!
//! Three strategies draw negatives for a question once its gold documents
//! are removed:
//!
//! * **hard**: the top `n` remaining first-stage candidates, in rank order;
//! * **semi-hard**: `n` remaining candidates sampled uniformly without
//!   replacement;
//! * **easy**: `n` documents sampled uniformly from the whole corpus.
//!
//! Randomness comes from a SplitMix64 stream seeded per question from the
//! global seed and the qid (see [`question_seed`]), so results do not depend
//! on processing order or thread count. Sampling is a partial Fisher–Yates
//! shuffle over the cid-sorted pool, which makes results reproducible from
//! the documented generator alone.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QaPair};
use crate::dense::fnv1a64;
use crate::error::{io_err, Error, Result};
use crate::ranking::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Hard,
    SemiHard,
    Easy,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "hard" => Ok(Strategy::Hard),
            "semi_hard" | "semihard" => Ok(Strategy::SemiHard),
            "easy" => Ok(Strategy::Easy),
            other => Err(Error::Parameter(format!("unknown mining strategy `{other}`"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Hard => "hard",
            Strategy::SemiHard => "semi_hard",
            Strategy::Easy => "easy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningConfig {
    pub strategy: Strategy,
    pub n: usize,
    pub seed: u64,
    /// How many first-stage candidates form the pool for hard and semi-hard.
    pub pool_size: usize,
}

impl MiningConfig {
    pub const DEFAULT_POOL_SIZE: usize = 90;

    pub fn new(strategy: Strategy, n: usize, seed: u64) -> Self {
        Self { strategy, n, seed, pool_size: Self::DEFAULT_POOL_SIZE }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.pool_size == 0 {
            return Err(Error::Parameter("mining n and pool_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }

    /// Uniform integer in `0..bound` by rejection. `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let limit = u64::MAX - u64::MAX % bound;
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % bound;
            }
        }
    }
}

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream seed for one question: `mix64(seed ^ mix64(fnv1a64(qid)))`.
pub fn question_seed(seed: u64, qid: &str) -> u64 {
    mix64(seed ^ mix64(fnv1a64(qid)))
}

/// First `n` positions of a Fisher–Yates shuffle of `0..len`, using a sparse
/// swap table so memory is O(n) rather than O(len).
pub fn partial_fisher_yates(len: usize, n: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let n = n.min(len);
    let mut swapped: HashMap<usize, usize> = HashMap::with_capacity(2 * n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let j = i + rng.below((len - i) as u64) as usize;
        let at_j = *swapped.get(&j).unwrap_or(&j);
        let at_i = *swapped.get(&i).unwrap_or(&i);
        swapped.insert(j, at_i);
        out.push(at_j);
    }
    out
}

/// A mined negative with its 1-based first-stage rank, when it came from
/// the candidate pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negative {
    pub cid: String,
    pub rank: Option<usize>,
}

/// Mines negatives for question `qid`.
///
/// `candidates` must be sorted best-first; only the first
/// `cfg.pool_size` entries are used. Every gold cid is excluded.
pub fn mine_negatives(
    qid: &str,
    candidates: &RankedList,
    gold: &BTreeSet<String>,
    corpus: &Corpus,
    cfg: &MiningConfig,
) -> Result<Vec<Negative>> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(question_seed(cfg.seed, qid));
    let out = match cfg.strategy {
        Strategy::Hard | Strategy::SemiHard => {
            let mut pool: Vec<Negative> = candidates
                .iter()
                .take(cfg.pool_size)
                .enumerate()
                .filter(|(_, d)| !gold.contains(&d.cid))
                .map(|(i, d)| Negative { cid: d.cid.clone(), rank: Some(i + 1) })
                .collect();
            if cfg.strategy == Strategy::Hard {
                pool.truncate(cfg.n);
                pool
            } else {
                pool.sort_by(|a, b| a.cid.cmp(&b.cid));
                partial_fisher_yates(pool.len(), cfg.n, &mut rng).into_iter().map(|i| pool[i].clone()).collect()
            }
        }
        Strategy::Easy => {
            // positions of golds within the cid-sorted corpus, ascending
            let mut excluded: Vec<usize> = gold.iter().filter_map(|c| corpus.sorted_rank(c)).collect();
            excluded.sort_unstable();
            let available = corpus.len() - excluded.len();
            partial_fisher_yates(available, cfg.n, &mut rng)
                .into_iter()
                .map(|i| {
                    let mut pos = i;
                    for &g in &excluded {
                        if g <= pos {
                            pos += 1;
                        } else {
                            break;
                        }
                    }
                    Negative { cid: corpus.sorted_at(pos).cid.clone(), rank: None }
                })
                .collect()
        }
    };
    if out.is_empty() {
        log::info!("question {qid}: no {} negatives available", cfg.strategy);
    }
    Ok(out)
}

/// One question's mining input.
#[derive(Debug, Clone)]
pub struct MiningQuery {
    pub qid: String,
    pub question: String,
    pub gold: BTreeSet<String>,
    pub candidates: RankedList,
}

/// Labeled (question, document) training example.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub qid: String,
    pub question: String,
    pub cid: String,
    /// 1 for a gold document, 0 for a negative.
    pub label: u8,
    /// `None` for positives.
    pub strategy: Option<Strategy>,
    /// First-stage rank of a pool-sourced negative.
    pub rank: Option<usize>,
}

impl LabeledPair {
    pub fn positive(pair: &QaPair) -> Self {
        Self {
            qid: pair.qid.clone(),
            question: pair.question.clone(),
            cid: pair.cid.clone(),
            label: 1,
            strategy: None,
            rank: None,
        }
    }
}

/// Mines every query in parallel; output follows input order.
pub fn mine_all(queries: &[MiningQuery], corpus: &Corpus, cfg: &MiningConfig) -> Result<Vec<LabeledPair>> {
    let per_query: Vec<Vec<LabeledPair>> = queries
        .par_iter()
        .map(|q| {
            let negatives = mine_negatives(&q.qid, &q.candidates, &q.gold, corpus, cfg)?;
            Ok(negatives
                .into_iter()
                .map(|n| LabeledPair {
                    qid: q.qid.clone(),
                    question: q.question.clone(),
                    cid: n.cid,
                    label: 0,
                    strategy: Some(cfg.strategy),
                    rank: n.rank,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

/// Share of scores in `(-inf, 0.5)`, `[0.5, 0.8)`, `[0.8, 0.9)`, `[0.9, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandReport {
    /// `None` when there are no samples.
    pub fractions: Option<[f64; 4]>,
    pub mean: Option<f64>,
    pub count: usize,
}

pub const BAND_EDGES: [f64; 3] = [0.5, 0.8, 0.9];

pub fn band_of(score: f64) -> usize {
    BAND_EDGES.iter().take_while(|&&e| score >= e).count()
}

pub fn band_stats(scores: &[f64]) -> BandReport {
    let count = scores.len();
    if count == 0 {
        return BandReport { fractions: None, mean: None, count };
    }
    let mut counts = [0usize; 4];
    for &s in scores {
        counts[band_of(s)] += 1;
    }
    let n = count as f64;
    BandReport {
        fractions: Some(counts.map(|c| c as f64 / n)),
        mean: Some(scores.iter().sum::<f64>() / n),
        count,
    }
}

#[derive(Serialize)]
struct BandJson {
    lt_0_5: Option<f64>,
    b_0_5_0_8: Option<f64>,
    b_0_8_0_9: Option<f64>,
    ge_0_9: Option<f64>,
    mean: Option<f64>,
    count: usize,
}

impl BandReport {
    /// JSON object keyed `lt_0_5`, `b_0_5_0_8`, `b_0_8_0_9`, `ge_0_9`,
    /// `mean`, `count`; fractions are `null` for an empty sample.
    pub fn to_json(&self) -> String {
        let f = |i: usize| self.fractions.map(|fr| fr[i]);
        let json = BandJson {
            lt_0_5: f(0),
            b_0_5_0_8: f(1),
            b_0_8_0_9: f(2),
            ge_0_9: f(3),
            mean: self.mean,
            count: self.count,
        };
        serde_json::to_string_pretty(&json).expect("band report serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PairLine {
    qid: String,
    question: String,
    cid: String,
    label: u8,
    strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
}

const POSITIVE_TAG: &str = "positive";

impl From<&LabeledPair> for PairLine {
    fn from(p: &LabeledPair) -> Self {
        Self {
            qid: p.qid.clone(),
            question: p.question.clone(),
            cid: p.cid.clone(),
            label: p.label,
            strategy: p.strategy.map_or_else(|| POSITIVE_TAG.to_owned(), |s| s.to_string()),
            rank: p.rank,
        }
    }
}

/// Writes training pairs as JSON lines: for each qid (in first-appearance
/// order), its positives and then its negatives.
pub fn export_pairs(positives: &[QaPair], negatives: &[LabeledPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, (Vec<LabeledPair>, Vec<&LabeledPair>)> = HashMap::new();
    for p in positives {
        let entry = groups.entry(&p.qid).or_insert_with(|| {
            order.push(&p.qid);
            Default::default()
        });
        entry.0.push(LabeledPair::positive(p));
    }
    for n in negatives {
        let entry = groups.entry(&n.qid).or_insert_with(|| {
            order.push(&n.qid);
            Default::default()
        });
        entry.1.push(n);
    }

    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for qid in order {
        let (pos, neg) = &groups[qid];
        for p in pos.iter().chain(neg.iter().copied()) {
            let line = serde_json::to_string(&PairLine::from(p)).expect("pair serializes");
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads a file written by [`export_pairs`].
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Format(format!("{}:{}: {m}", path.display(), i + 1));
        let rec: PairLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let strategy = if rec.strategy == POSITIVE_TAG { None } else { Some(rec.strategy.parse()?) };
        if rec.label > 1 || (rec.label == 1) != strategy.is_none() {
            return Err(bad(format!("label {} inconsistent with strategy `{}`", rec.label, rec.strategy)));
        }
        out.push(LabeledPair {
            qid: rec.qid,
            question: rec.question,
            cid: rec.cid,
            label: rec.label,
            strategy,
            rank: rec.rank,
        });
    }
    Ok(out)
}
