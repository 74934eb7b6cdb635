//! Corpus and QA ingestion, the preprocessing pipeline, and dataset statistics.
//!
//! Preprocessing follows three steps:
//!
//! 1. each answer span is replaced by the full document its `cid` points to
//!    (only the `cid` is kept; text is resolved through [`Corpus::get`]),
//! 2. questions with several answers are split into one [`QaPair`] per answer,
//! 3. pairs are divided into train and eval sets by question id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::segment::Segmenter;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub cid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaRecord {
    pub qid: String,
    pub question: String,
    pub contexts: Vec<String>,
    pub cids: Vec<String>,
}

/// One (question, gold document) supervision pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QaPair {
    pub qid: String,
    pub question: String,
    pub cid: String,
}

/// Documents in file order with O(1) lookup by cid.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    by_cid: HashMap<String, usize>,
    sorted: Vec<usize>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate cids.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut by_cid = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if by_cid.insert(doc.cid.clone(), i).is_some() {
                return Err(Error::DuplicateCid(doc.cid.clone()));
            }
        }
        let mut sorted: Vec<usize> = (0..documents.len()).collect();
        sorted.sort_by(|&a, &b| documents[a].cid.cmp(&documents[b].cid));
        Ok(Self { documents, by_cid, sorted })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, cid: &str) -> Option<&Document> {
        self.by_cid.get(cid).map(|&i| &self.documents[i])
    }

    pub fn position(&self, cid: &str) -> Option<usize> {
        self.by_cid.get(cid).copied()
    }

    pub fn contains(&self, cid: &str) -> bool {
        self.by_cid.contains_key(cid)
    }

    /// Documents ordered by cid ascending.
    pub fn iter_sorted(&self) -> impl ExactSizeIterator<Item = &Document> + '_ {
        self.sorted.iter().map(|&i| &self.documents[i])
    }

    /// The document at position `rank` of the cid-sorted order.
    pub fn sorted_at(&self, rank: usize) -> &Document {
        &self.documents[self.sorted[rank]]
    }

    /// Position of `cid` in the cid-sorted order.
    pub fn sorted_rank(&self, cid: &str) -> Option<usize> {
        self.sorted
            .binary_search_by(|&i| self.documents[i].cid.as_str().cmp(cid))
            .ok()
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
        .ok_or_else(|| Error::MissingColumn { path: path.to_owned(), column: name.to_owned() })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// Reads a corpus CSV with `text` and `cid` columns, in any order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let text_col = column(&headers, "text", path)?;
    let cid_col = column(&headers, "cid", path)?;

    let mut documents = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        documents.push(Document {
            cid: row.get(cid_col).unwrap_or_default().trim().to_owned(),
            text: row.get(text_col).unwrap_or_default().to_owned(),
        });
    }
    Corpus::new(documents)
}

/// Parses a list-valued cell: a JSON array of strings (numbers are accepted
/// and stringified) or a bare value taken as a singleton.
pub fn parse_list_cell(cell: &str) -> std::result::Result<Vec<String>, String> {
    let trimmed = cell.trim();
    if !trimmed.starts_with('[') {
        return Ok(vec![trimmed.to_owned()]);
    }
    let values: Vec<serde_json::Value> =
        serde_json::from_str(trimmed).map_err(|e| format!("malformed list `{trimmed}`: {e}"))?;
    values
        .into_iter()
        .map(|v| match v {
            serde_json::Value::String(s) => Ok(s),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            other => Err(format!("unsupported list element {other}")),
        })
        .collect()
}

/// Inverse of [`parse_list_cell`].
pub fn format_list_cell(items: &[String]) -> String {
    serde_json::to_string(items).expect("strings serialize")
}

/// Reads a QA CSV with `question`, `context`, `cid` and `qid` columns.
pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QaRecord>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let q_col = column(&headers, "question", path)?;
    let ctx_col = column(&headers, "context", path)?;
    let cid_col = column(&headers, "cid", path)?;
    let qid_col = column(&headers, "qid", path)?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let qid = field(qid_col).trim().to_owned();
        let record_err = |message: String| Error::Record { qid: qid.clone(), message };

        let contexts = parse_list_cell(field(ctx_col)).map_err(&record_err)?;
        let cids = parse_list_cell(field(cid_col)).map_err(&record_err)?;
        if contexts.len() != cids.len() {
            return Err(record_err(format!(
                "{} context(s) but {} cid(s)",
                contexts.len(),
                cids.len()
            )));
        }
        if cids.is_empty() {
            return Err(record_err("no answers".into()));
        }
        if !seen.insert(qid.clone()) {
            return Err(record_err("duplicate qid".into()));
        }
        records.push(QaRecord {
            qid,
            question: field(q_col).to_owned(),
            contexts,
            cids: cids.into_iter().map(|c| c.trim().to_owned()).collect(),
        });
    }
    Ok(records)
}

/// Splits multi-answer records into one pair per gold document and checks
/// every cid against the corpus. A cid repeated inside one record yields a
/// single pair.
pub fn normalize_qa(records: &[QaRecord], corpus: &Corpus) -> Result<Vec<QaPair>> {
    let mut pairs = Vec::with_capacity(records.iter().map(|r| r.cids.len()).sum());
    for record in records {
        let mut emitted = HashSet::new();
        for cid in &record.cids {
            if !corpus.contains(cid) {
                return Err(Error::UnknownCid { qid: record.qid.clone(), cid: cid.clone() });
            }
            if emitted.insert(cid.as_str()) {
                pairs.push(QaPair {
                    qid: record.qid.clone(),
                    question: record.question.clone(),
                    cid: cid.clone(),
                });
            }
        }
    }
    Ok(pairs)
}

/// Partitions pairs by distinct qid so no question lands on both sides.
///
/// Distinct qids are sorted, shuffled with a ChaCha8 stream seeded by `seed`,
/// and the first `floor(ratio * n)` go to train. Pair order within each side
/// follows the input.
pub fn split_train_eval(
    pairs: &[QaPair],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<QaPair>, Vec<QaPair>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Parameter(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut qids: Vec<&str> = pairs.iter().map(|p| p.qid.as_str()).collect();
    qids.sort_unstable();
    qids.dedup();
    qids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // the epsilon keeps products like 0.29 * 100 from flooring to 28
    let n_train = ((ratio * qids.len() as f64) + 1e-9).floor() as usize;
    let train_qids: HashSet<&str> = qids[..n_train].iter().copied().collect();

    let (train, eval) = pairs.iter().cloned().partition(|p| train_qids.contains(p.qid.as_str()));
    Ok((train, eval))
}

/// Token-count histogram with half-open buckets `[edge_i, edge_{i+1})` and a
/// final open bucket `[edge_last, inf)`. Counts below the first edge fall
/// into the first bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub edges: Vec<usize>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(edges: Vec<usize>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Parameter("histogram needs at least one edge".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(format!("bucket edges must be strictly ascending: {edges:?}")));
        }
        let counts = vec![0; edges.len()];
        Ok(Self { edges, counts })
    }

    pub fn bucket_of(&self, value: usize) -> usize {
        self.edges.partition_point(|&e| e <= value).saturating_sub(1)
    }

    pub fn add(&mut self, value: usize) {
        let b = self.bucket_of(value);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

impl fmt::Display for Histogram {
    /// `bucket_low<TAB>bucket_high<TAB>count` per line; the open bucket's
    /// upper bound prints as `inf`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, count) in self.counts.iter().enumerate() {
            let low = self.edges[i];
            match self.edges.get(i + 1) {
                Some(high) => writeln!(f, "{low}\t{high}\t{count}")?,
                None => writeln!(f, "{low}\tinf\t{count}")?,
            }
        }
        Ok(())
    }
}

pub fn length_histogram<S: AsRef<str>>(
    texts: &[S],
    bucket_edges: &[usize],
    segmenter: &Segmenter,
) -> Result<Histogram> {
    let mut hist = Histogram::new(bucket_edges.to_vec())?;
    for tokens in segmenter.tokenize_batch(texts)? {
        hist.add(tokens.len());
    }
    Ok(hist)
}

/// Number of questions per answer count.
pub fn answers_per_question(records: &[QaRecord]) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.cids.len()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn pair(qid: &str, cid: &str) -> QaPair {
        QaPair { qid: qid.into(), question: format!("q{qid}"), cid: cid.into() }
    }

    #[test]
    fn corpus_rows_in_order() {
        let f = write_tmp("text,cid\n\"Điều 1, khoản 2\",a\nsecond,b\n");
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.get("a").unwrap().text, "Điều 1, khoản 2");
        assert_eq!(corpus.documents()[1].cid, "b");
    }

    #[test]
    fn corpus_column_order_free() {
        let f = write_tmp("cid,text\nx,hello\n");
        assert_eq!(load_corpus(f.path()).unwrap().get("x").unwrap().text, "hello");
    }

    #[test]
    fn corpus_duplicate_cid() {
        let f = write_tmp("text,cid\none,a\ntwo,a\n");
        match load_corpus(f.path()) {
            Err(Error::DuplicateCid(cid)) => assert_eq!(cid, "a"),
            other => panic!("expected duplicate cid, got {other:?}"),
        }
    }

    #[test]
    fn corpus_keeps_empty_text() {
        let f = write_tmp("text,cid\n,a\nsome text,b\n");
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.get("a").unwrap().text, "");
    }

    #[test]
    fn corpus_missing_column_named() {
        let f = write_tmp("body,cid\nx,a\n");
        let err = load_corpus(f.path()).unwrap_err();
        assert!(matches!(&err, Error::MissingColumn { column, .. } if column == "text"), "{err}");
    }

    #[test]
    fn qa_singleton_and_lists() {
        let f = write_tmp(
            "question,context,cid,qid\n\
             what?,the answer,10,q1\n\
             two?,\"[\"\"first\"\", \"\"second\"\"]\",\"[11, \"\"12\"\"]\",q2\n",
        );
        let records = load_qa(f.path()).unwrap();
        assert_eq!(records[0].cids, ["10"]);
        assert_eq!(records[0].contexts, ["the answer"]);
        assert_eq!(records[1].cids, ["11", "12"]);
        assert_eq!(records[1].contexts, ["first", "second"]);
    }

    #[test]
    fn qa_length_mismatch_names_qid() {
        let f = write_tmp("question,context,cid,qid\nq,only one,\"[1, 2]\",q77\n");
        match load_qa(f.path()) {
            Err(Error::Record { qid, .. }) => assert_eq!(qid, "q77"),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn list_cell_roundtrip() {
        let items = vec!["a,b".to_owned(), "c\"d".to_owned()];
        assert_eq!(parse_list_cell(&format_list_cell(&items)).unwrap(), items);
    }

    fn small_corpus() -> Corpus {
        Corpus::new(
            ["x", "y", "z"]
                .iter()
                .map(|c| Document { cid: (*c).into(), text: format!("doc {c}") })
                .collect(),
        )
        .unwrap()
    }

    fn record(qid: &str, cids: &[&str]) -> QaRecord {
        QaRecord {
            qid: qid.into(),
            question: "q".into(),
            contexts: cids.iter().map(|_| "span".to_owned()).collect(),
            cids: cids.iter().map(|c| (*c).to_owned()).collect(),
        }
    }

    #[test]
    fn normalize_splits_multi_answer() {
        let corpus = small_corpus();
        let pairs = normalize_qa(&[record("1", &["x", "y"]), record("2", &["z"])], &corpus).unwrap();
        let got: Vec<_> = pairs.iter().map(|p| (p.qid.as_str(), p.cid.as_str())).collect();
        assert_eq!(got, [("1", "x"), ("1", "y"), ("2", "z")]);
    }

    #[test]
    fn normalize_unknown_cid() {
        let err = normalize_qa(&[record("9", &["nope"])], &small_corpus()).unwrap_err();
        assert!(matches!(err, Error::UnknownCid { ref qid, ref cid } if qid == "9" && cid == "nope"));
    }

    #[test]
    fn split_ratio_and_determinism() {
        let pairs: Vec<_> = (0..10).map(|i| pair(&i.to_string(), "c")).collect();
        let (train, eval) = split_train_eval(&pairs, 0.9, 7).unwrap();
        assert_eq!((train.len(), eval.len()), (9, 1));
        assert_eq!(split_train_eval(&pairs, 0.9, 7).unwrap(), (train, eval));
    }

    #[test]
    fn split_keeps_qid_together() {
        let mut pairs = Vec::new();
        for q in 0..20 {
            for c in 0..3 {
                pairs.push(pair(&format!("q{q}"), &format!("c{c}")));
            }
        }
        for seed in 0..20 {
            let (train, eval) = split_train_eval(&pairs, 0.5, seed).unwrap();
            let train_q: HashSet<_> = train.iter().map(|p| &p.qid).collect();
            assert!(eval.iter().all(|p| !train_q.contains(&p.qid)));
            assert_eq!(train.len() + eval.len(), pairs.len());
            assert_eq!(train.len() % 3, 0);
        }
    }

    #[test]
    fn split_rejects_bad_ratio() {
        for ratio in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(split_train_eval(&[], ratio, 1), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn histogram_placement() {
        let seg = Segmenter::Default;
        let texts = ["w".to_owned(), "w ".repeat(200), "w ".repeat(600)];
        let hist = length_histogram(&texts, &[0, 128, 256, 512, 1024], &seg).unwrap();
        assert_eq!(hist.counts, [1, 1, 0, 1, 0]);

        let empty: [&str; 0] = [];
        assert_eq!(length_histogram(&empty, &[0, 128], &seg).unwrap().counts, [0, 0]);

        let boundary = ["w ".repeat(128)];
        assert_eq!(length_histogram(&boundary, &[0, 128, 256], &seg).unwrap().counts, [0, 1, 0]);
    }

    #[test]
    fn histogram_rejects_unsorted_edges() {
        assert!(matches!(Histogram::new(vec![0, 10, 10]), Err(Error::Parameter(_))));
        assert!(matches!(Histogram::new(vec![5, 1]), Err(Error::Parameter(_))));
    }

    #[test]
    fn histogram_tsv() {
        let mut h = Histogram::new(vec![0, 10]).unwrap();
        h.add(3);
        h.add(30);
        assert_eq!(h.to_string(), "0\t10\t1\n10\tinf\t1\n");
    }

    #[test]
    fn sorted_rank_lookup() {
        let corpus = Corpus::new(
            ["m", "a", "z"].iter().map(|c| Document { cid: (*c).into(), text: String::new() }).collect(),
        )
        .unwrap();
        assert_eq!(corpus.sorted_rank("a"), Some(0));
        assert_eq!(corpus.sorted_rank("z"), Some(2));
        assert_eq!(corpus.sorted_at(1).cid, "m");
        assert_eq!(corpus.sorted_rank("b"), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_output_size(answer_counts in prop::collection::vec(1usize..4, 0..20)) {
                let docs: Vec<_> = (0..4).map(|i| Document { cid: format!("c{i}"), text: String::new() }).collect();
                let corpus = Corpus::new(docs).unwrap();
                let records: Vec<_> = answer_counts.iter().enumerate().map(|(q, &n)| {
                    let cids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
                    QaRecord { qid: q.to_string(), question: String::new(), contexts: cids.clone(), cids }
                }).collect();
                let pairs = normalize_qa(&records, &corpus).unwrap();
                prop_assert_eq!(pairs.len(), answer_counts.iter().sum::<usize>());
            }

            #[test]
            fn histogram_counts_sum(lengths in prop::collection::vec(0usize..300, 0..50)) {
                let texts: Vec<String> = lengths.iter().map(|&n| "t ".repeat(n)).collect();
                let hist = length_histogram(&texts, &[0, 16, 64, 256], &Segmenter::Default).unwrap();
                prop_assert_eq!(hist.total(), texts.len() as u64);
            }

            #[test]
            fn split_covers_exactly_once(n_q in 1usize..40, ratio in 0.05f64..0.95, seed: u64) {
                let pairs: Vec<_> = (0..n_q).flat_map(|q| (0..(q % 3 + 1)).map(move |c| pair(&q.to_string(), &c.to_string()))).collect();
                let (train, eval) = split_train_eval(&pairs, ratio, seed).unwrap();
                let mut all: Vec<_> = train.iter().chain(&eval).cloned().collect();
                let mut expected = pairs.clone();
                all.sort_by(|a, b| (&a.qid, &a.cid).cmp(&(&b.qid, &b.cid)));
                expected.sort_by(|a, b| (&a.qid, &a.cid).cmp(&(&b.qid, &b.cid)));
                prop_assert_eq!(all, expected);
                let train_q: HashSet<_> = train.iter().map(|p| p.qid.clone()).collect();
                prop_assert!(eval.iter().all(|p| !train_q.contains(&p.qid)));
                prop_assert_eq!(train_q.len(), ((ratio * n_q as f64) + 1e-9).floor() as usize);
            }
        }
    }
}
