//! BM25 retrieval over an in-memory inverted index.
//!
//! Two scoring variants are supported. With `tf` the term frequency in the
//! document, `dl` its token length and `avgdl` the corpus mean length:
//!
//! ```text
//! norm(t, d) = tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
//!
//! okapi: sum_t ln(1 + (N - df + 0.5) / (df + 0.5)) * norm(t, d)
//! plus:  sum_t ln((N + 1) / df) * (delta + norm(t, d))      for tf > 0
//! ```
//!
//! Query tokens are summed as given, so a repeated query token counts twice.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{io_err, Error, Result};
use crate::ranking::{RankedList, ScoredDoc};
use crate::segment::Segmenter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bm25Variant {
    Okapi,
    Plus,
}

impl FromStr for Bm25Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "okapi" | "bm25okapi" => Ok(Bm25Variant::Okapi),
            "plus" | "bm25plus" => Ok(Bm25Variant::Plus),
            other => Err(Error::Parameter(format!("unknown BM25 variant `{other}`"))),
        }
    }
}

impl fmt::Display for Bm25Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bm25Variant::Okapi => "okapi",
            Bm25Variant::Plus => "plus",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub variant: Bm25Variant,
    pub k1: f64,
    pub b: f64,
    /// Lower bound added per matching term; ignored by Okapi.
    pub delta: f64,
}

impl Bm25Params {
    pub fn new(variant: Bm25Variant, k1: f64, b: f64, delta: f64) -> Result<Self> {
        let p = Self { variant, k1, b, delta };
        p.validate()?;
        Ok(p)
    }

    /// Okapi with k1 = 1.5, b = 0.75.
    pub fn okapi_default() -> Self {
        Self { variant: Bm25Variant::Okapi, k1: 1.5, b: 0.75, delta: 0.0 }
    }

    /// Plus with k1 = 1.5, b = 0.75, delta = 1.
    pub fn plus_default() -> Self {
        Self { variant: Bm25Variant::Plus, k1: 1.5, b: 0.75, delta: 1.0 }
    }

    pub fn plus(k1: f64, b: f64) -> Self {
        Self { variant: Bm25Variant::Plus, k1, b, delta: 1.0 }
    }

    /// The comparison grid: Okapi defaults, then Plus over
    /// k1 in {0.8, 1.2, 2} and b in {0, 0.75, 1}.
    pub fn comparison_grid() -> Vec<Self> {
        let mut grid = vec![Self::okapi_default()];
        for k1 in [0.8, 1.2, 2.0] {
            for b in [0.0, 0.75, 1.0] {
                grid.push(Self::plus(k1, b));
            }
        }
        grid
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::Parameter(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Parameter(format!("b must be in [0, 1], got {}", self.b)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Parameter(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self::okapi_default()
    }
}

impl fmt::Display for Bm25Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            Bm25Variant::Okapi => write!(f, "okapi(k1={}, b={})", self.k1, self.b),
            Bm25Variant::Plus => write!(f, "plus(k1={}, b={}, delta={})", self.k1, self.b, self.delta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Term statistics for BM25. Independent of the scoring parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvertedIndex {
    cids: Vec<String>,
    doc_lengths: Vec<u32>,
    total_length: u64,
    postings: HashMap<String, Vec<Posting>>,
    by_cid: HashMap<String, u32>,
}

impl InvertedIndex {
    /// Builds the index from pre-tokenized documents.
    pub fn from_tokens<I, S>(docs: I) -> Self
    where
        I: IntoIterator<Item = (String, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut index = InvertedIndex::default();
        for (cid, tokens) in docs {
            let doc = index.cids.len() as u32;
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.as_ref()).or_insert(0) += 1;
            }
            let mut terms: Vec<_> = tf.into_iter().collect();
            terms.sort_unstable();
            for (term, count) in terms {
                index.postings.entry(term.to_owned()).or_default().push(Posting { doc, tf: count });
            }
            index.doc_lengths.push(tokens.len() as u32);
            index.total_length += tokens.len() as u64;
            index.by_cid.insert(cid.clone(), doc);
            index.cids.push(cid);
        }
        index
    }

    pub fn doc_count(&self) -> usize {
        self.cids.len()
    }

    pub fn avgdl(&self) -> f64 {
        if self.cids.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.cids.len() as f64
        }
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc_length(&self, cid: &str) -> Option<u32> {
        self.by_cid.get(cid).map(|&d| self.doc_lengths[d as usize])
    }

    pub fn cids(&self) -> &[String] {
        &self.cids
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    /// Term frequency of `term` in document `doc`.
    fn tf(&self, term: &str, doc: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&doc, |p| p.doc).map_or(0, |i| list[i].tf)
    }

    fn idf(&self, params: &Bm25Params, df: usize) -> f64 {
        let n = self.cids.len() as f64;
        let df = df as f64;
        match params.variant {
            Bm25Variant::Okapi => (1.0 + (n - df + 0.5) / (df + 0.5)).ln(),
            Bm25Variant::Plus => ((n + 1.0) / df).ln(),
        }
    }

    fn term_weight(&self, params: &Bm25Params, idf: f64, tf: u32, doc_len: u32) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        let tf = f64::from(tf);
        let avgdl = self.avgdl();
        let rel_len = if avgdl > 0.0 { f64::from(doc_len) / avgdl } else { 1.0 };
        let norm = tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * rel_len));
        match params.variant {
            Bm25Variant::Okapi => idf * norm,
            Bm25Variant::Plus => idf * (params.delta + norm),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "docs {}", self.cids.len())?;
        for (cid, len) in self.cids.iter().zip(&self.doc_lengths) {
            writeln!(w, "{cid}\t{len}")?;
        }
        let mut terms: Vec<_> = self.postings.iter().collect();
        terms.sort_unstable_by(|a, b| a.0.cmp(b.0));
        writeln!(w, "terms {}", terms.len())?;
        for (term, list) in terms {
            write!(w, "{term}\t")?;
            for (i, p) in list.iter().enumerate() {
                if i > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{}:{}", p.doc, p.tf)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(lines: &mut std::io::Lines<R>) -> Result<Self> {
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("truncated lexical index".into()))?
                .map_err(|e| Error::Format(format!("reading lexical index: {e}")))
        };
        let n_docs: usize = header_value(&next()?, "docs")?;
        let mut index = InvertedIndex::default();
        for doc in 0..n_docs {
            let line = next()?;
            let (cid, len) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Format(format!("bad document line `{line}`")))?;
            let len: u32 = len.parse().map_err(|_| Error::Format(format!("bad length in `{line}`")))?;
            index.by_cid.insert(cid.to_owned(), doc as u32);
            index.cids.push(cid.to_owned());
            index.doc_lengths.push(len);
            index.total_length += u64::from(len);
        }
        let n_terms: usize = header_value(&next()?, "terms")?;
        for _ in 0..n_terms {
            let line = next()?;
            let (term, list) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("bad term line `{line}`")))?;
            let postings = list
                .split(',')
                .map(|entry| {
                    let (d, tf) = entry.split_once(':')?;
                    let doc: u32 = d.parse().ok()?;
                    ((doc as usize) < n_docs).then_some(())?;
                    Some(Posting { doc, tf: tf.parse().ok()? })
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Format(format!("bad postings for term `{term}`")))?;
            index.postings.insert(term.to_owned(), postings);
        }
        Ok(index)
    }
}

fn header_value<T: FromStr>(line: &str, key: &str) -> Result<T> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("expected `{key} <value>`, found `{line}`")))
}

/// Tokenizes and indexes every document of `corpus`.
pub fn build_lexical_index(corpus: &Corpus, segmenter: &Segmenter) -> Result<InvertedIndex> {
    let docs = corpus.documents();
    let tokens: Vec<Vec<String>> = match segmenter {
        Segmenter::Default => docs
            .par_iter()
            .map(|d| segmenter.tokenize(&d.text))
            .collect::<Result<_>>()?,
        Segmenter::External { .. } => {
            let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
            segmenter.tokenize_batch(&texts)?
        }
    };
    Ok(InvertedIndex::from_tokens(docs.iter().map(|d| d.cid.clone()).zip(tokens)))
}

/// BM25 score of one document for a tokenized query.
pub fn bm25_score<S: AsRef<str>>(
    index: &InvertedIndex,
    params: &Bm25Params,
    query_tokens: &[S],
    cid: &str,
) -> Result<f64> {
    let doc = *index.by_cid.get(cid).ok_or_else(|| Error::Lookup(cid.to_owned()))?;
    let doc_len = index.doc_lengths[doc as usize];
    let mut score = 0.0;
    for t in query_tokens {
        let t = t.as_ref();
        let df = index.df(t);
        if df == 0 {
            continue;
        }
        let idf = index.idf(params, df);
        score += index.term_weight(params, idf, index.tf(t, doc), doc_len);
    }
    Ok(score)
}

/// Scores every document for pre-tokenized query terms. Scores are
/// accumulated in query-token order, matching [`bm25_score`] bit for bit.
pub fn score_all<S: AsRef<str>>(index: &InvertedIndex, params: &Bm25Params, query_tokens: &[S]) -> Vec<f64> {
    let mut scores = vec![0.0; index.doc_count()];
    for t in query_tokens {
        let list = index.postings(t.as_ref());
        if list.is_empty() {
            continue;
        }
        let idf = index.idf(params, list.len());
        for p in list {
            scores[p.doc as usize] += index.term_weight(params, idf, p.tf, index.doc_lengths[p.doc as usize]);
        }
    }
    scores
}

/// Top-`k` documents for a tokenized query. Every document participates, so
/// the result has `min(k, N)` entries even when most scores are zero.
pub fn lexical_topk_tokens<S: AsRef<str>>(
    index: &InvertedIndex,
    params: &Bm25Params,
    query_tokens: &[S],
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    params.validate()?;
    let scores = score_all(index, params, query_tokens);
    let docs = index
        .cids
        .iter()
        .zip(scores)
        .map(|(cid, score)| ScoredDoc::new(cid.clone(), score))
        .collect();
    Ok(RankedList::top_k(docs, k))
}

pub fn lexical_topk(
    index: &InvertedIndex,
    params: &Bm25Params,
    query: &str,
    k: usize,
    segmenter: &Segmenter,
) -> Result<RankedList> {
    let tokens = segmenter.tokenize(query)?;
    lexical_topk_tokens(index, params, &tokens, k)
}

const FORMAT_TAG: &str = "legalrank-bm25 1";

/// An index bundled with the parameters and segmenter it is queried with.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalModel {
    pub index: InvertedIndex,
    pub params: Bm25Params,
    pub segmenter: Segmenter,
}

impl LexicalModel {
    pub fn build(corpus: &Corpus, params: Bm25Params, segmenter: Segmenter) -> Result<Self> {
        params.validate()?;
        let index = build_lexical_index(corpus, &segmenter)?;
        Ok(Self { index, params, segmenter })
    }

    pub fn topk(&self, query: &str, k: usize) -> Result<RankedList> {
        lexical_topk(&self.index, &self.params, query, k, &self.segmenter)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(bad) = self.index.cids.iter().find(|c| c.contains(['\t', '\n', '\r'])) {
            return Err(Error::Format(format!("cid {bad:?} contains a tab or line break")));
        }
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
            writeln!(w, "{FORMAT_TAG}")?;
            writeln!(w, "variant {}", self.params.variant)?;
            // `{:?}` prints the shortest string that parses back to the same f64
            writeln!(w, "k1 {:?}", self.params.k1)?;
            writeln!(w, "b {:?}", self.params.b)?;
            writeln!(w, "delta {:?}", self.params.delta)?;
            writeln!(w, "segmenter {}", self.segmenter.spec())?;
            self.index.write_to(&mut *w)?;
            w.flush()
        };
        write(&mut w).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut lines = BufReader::new(file).lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("{}: truncated index", path.display())))?
                .map_err(io_err(path))
        };
        let tag = next()?;
        if tag != FORMAT_TAG {
            return Err(Error::Format(format!("{}: not a lexical index (found `{tag}`)", path.display())));
        }
        let variant: String = header_value(&next()?, "variant")?;
        let params = Bm25Params::new(
            variant.parse()?,
            header_value(&next()?, "k1")?,
            header_value(&next()?, "b")?,
            header_value(&next()?, "delta")?,
        )?;
        let seg_line = next()?;
        let seg_spec = seg_line
            .strip_prefix("segmenter ")
            .ok_or_else(|| Error::Format(format!("expected segmenter line, found `{seg_line}`")))?;
        let segmenter = Segmenter::parse(seg_spec)?;
        let index = InvertedIndex::read_from(&mut lines)?;
        Ok(Self { index, params, segmenter })
    }
}
