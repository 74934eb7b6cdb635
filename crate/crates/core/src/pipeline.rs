//! Two-stage inference: retrieve `k_retrieve` candidates with a first-stage
//! index, re-score them with a [`Scorer`], keep the best `k_final`.
//!
//! The second stage only ever reorders first-stage candidates, so a gold
//! document missed by the retriever cannot be recovered. Evaluation reports
//! Exist@`k_retrieve` on the candidates and MRR@`k_final` on the final list.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use crate::corpus::{Corpus, Document, QaPair};
use crate::dense::{cosine, dense_topk, l2_normalize, EmbedInput, Embedder, EmbeddingIndex};
use crate::error::{Error, Result, Stage};
use crate::lexical::{bm25_score, LexicalModel};
use crate::metrics::{MetricReport, Qrels, Run};
use crate::ranking::{RankedList, ScoredDoc};
use crate::remote::{RemoteClient, RemoteConfig};

/// A question as seen by the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub qid: &'a str,
    pub text: &'a str,
}

/// Second-stage relevance model.
pub trait Scorer: Send + Sync {
    /// One score per document, in order. Higher is more relevant.
    fn score(&self, query: &Query<'_>, docs: &[&Document]) -> Result<Vec<f64>>;
}

/// Cosine similarity between embedder outputs.
#[derive(Clone)]
pub struct CosineScorer {
    embedder: Arc<dyn Embedder>,
}

impl CosineScorer {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self { embedder }
    }
}

impl Scorer for CosineScorer {
    fn score(&self, query: &Query<'_>, docs: &[&Document]) -> Result<Vec<f64>> {
        let mut inputs = Vec::with_capacity(docs.len() + 1);
        inputs.push(EmbedInput { id: query.qid, text: query.text });
        inputs.extend(docs.iter().map(|d| EmbedInput { id: &d.cid, text: &d.text }));
        let mut vectors = self.embedder.embed(&inputs)?.into_iter();
        let q = l2_normalize(vectors.next().unwrap_or_default());
        vectors.map(|v| cosine(&q, &v)).collect()
    }
}

/// BM25 against a prebuilt index's corpus statistics.
#[derive(Clone)]
pub struct Bm25Scorer {
    model: Arc<LexicalModel>,
}

impl Bm25Scorer {
    pub fn new(model: Arc<LexicalModel>) -> Self {
        Self { model }
    }
}

impl Scorer for Bm25Scorer {
    fn score(&self, query: &Query<'_>, docs: &[&Document]) -> Result<Vec<f64>> {
        let tokens = self.model.segmenter.tokenize(query.text)?;
        docs.iter().map(|d| bm25_score(&self.model.index, &self.model.params, &tokens, &d.cid)).collect()
    }
}

/// `w_bm25 * minmax(bm25) + w_cosine * cosine`, with BM25 min-max
/// normalized over the documents being scored (all zero when constant).
#[derive(Clone)]
pub struct BlendScorer {
    bm25: Bm25Scorer,
    cosine: CosineScorer,
    w_bm25: f64,
    w_cosine: f64,
}

impl BlendScorer {
    pub fn new(bm25: Bm25Scorer, cosine: CosineScorer) -> Self {
        Self { bm25, cosine, w_bm25: 0.5, w_cosine: 0.5 }
    }

    pub fn with_weights(mut self, w_bm25: f64, w_cosine: f64) -> Self {
        self.w_bm25 = w_bm25;
        self.w_cosine = w_cosine;
        self
    }
}

pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - min) / (max - min)).collect()
}

impl Scorer for BlendScorer {
    fn score(&self, query: &Query<'_>, docs: &[&Document]) -> Result<Vec<f64>> {
        let lexical = min_max_normalize(&self.bm25.score(query, docs)?);
        let semantic = self.cosine.score(query, docs)?;
        Ok(lexical.iter().zip(&semantic).map(|(l, s)| self.w_bm25 * l + self.w_cosine * s).collect())
    }
}

/// Cross-encoder behind an HTTP endpoint.
///
/// Request `{"query": "...", "documents": ["...", ...]}`, response
/// `{"scores": [...]}` in document order.
#[derive(Clone)]
pub struct RemoteScorer {
    client: RemoteClient,
}

impl RemoteScorer {
    pub fn new(client: RemoteClient) -> Self {
        Self { client }
    }

    pub fn http(config: RemoteConfig) -> Result<Self> {
        Ok(Self::new(RemoteClient::http(config)?))
    }
}

/// Scores `documents` against `question`, batching transparently.
pub fn remote_score(client: &RemoteClient, question: &str, documents: &[&str]) -> Result<Vec<f64>> {
    let results = client.batched(documents.len(), |range| {
        let batch = &documents[range];
        let response = client.post(&json!({ "query": question, "documents": batch }))?;
        let scores: Vec<f64> = response
            .get("scores")
            .cloned()
            .ok_or_else(|| Error::Protocol("response has no `scores` field".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Protocol(format!("bad `scores`: {e}"))))?;
        if scores.len() != batch.len() {
            return Err(Error::Protocol(format!("{} scores for {} documents", scores.len(), batch.len())));
        }
        Ok(scores)
    });
    let mut out = Vec::with_capacity(documents.len());
    for (_, r) in results {
        out.extend(r?);
    }
    Ok(out)
}

impl Scorer for RemoteScorer {
    fn score(&self, query: &Query<'_>, docs: &[&Document]) -> Result<Vec<f64>> {
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        remote_score(&self.client, query.text, &texts)
    }
}

/// 1 for gold documents, 0 otherwise. For testing the pipeline's upper bound.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    qrels: Qrels,
}

impl OracleScorer {
    pub fn new(qrels: Qrels) -> Self {
        Self { qrels }
    }
}

impl Scorer for OracleScorer {
    fn score(&self, query: &Query<'_>, docs: &[&Document]) -> Result<Vec<f64>> {
        let gold = self.qrels.gold(query.qid);
        Ok(docs.iter().map(|d| if gold.is_some_and(|g| g.contains(&d.cid)) { 1.0 } else { 0.0 }).collect())
    }
}

/// Same score for everything; the output order is then cid ascending.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, _: &Query<'_>, docs: &[&Document]) -> Result<Vec<f64>> {
        Ok(vec![self.0; docs.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieverKind {
    Lexical,
    Dense,
}

impl FromStr for RetrieverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lexical" | "bm25" => Ok(RetrieverKind::Lexical),
            "dense" => Ok(RetrieverKind::Dense),
            other => Err(Error::Parameter(format!("unknown retriever `{other}`"))),
        }
    }
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrieverKind::Lexical => "lexical",
            RetrieverKind::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub retriever: RetrieverKind,
    pub k_retrieve: usize,
    pub k_final: usize,
}

impl PipelineConfig {
    pub fn new(retriever: RetrieverKind) -> Self {
        Self { retriever, k_retrieve: 90, k_final: 10 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_final == 0 || self.k_retrieve == 0 {
            return Err(Error::Parameter("k_retrieve and k_final must be >= 1".into()));
        }
        if self.k_final > self.k_retrieve {
            return Err(Error::Parameter(format!(
                "k_final ({}) must not exceed k_retrieve ({})",
                self.k_final, self.k_retrieve
            )));
        }
        Ok(())
    }
}

/// First-stage indexes available to the pipeline.
#[derive(Clone, Copy, Default)]
pub struct Indexes<'a> {
    pub lexical: Option<&'a LexicalModel>,
    pub dense: Option<(&'a EmbeddingIndex, &'a dyn Embedder)>,
}

impl<'a> Indexes<'a> {
    pub fn lexical(model: &'a LexicalModel) -> Self {
        Self { lexical: Some(model), dense: None }
    }

    pub fn dense(index: &'a EmbeddingIndex, embedder: &'a dyn Embedder) -> Self {
        Self { lexical: None, dense: Some((index, embedder)) }
    }

    /// First-stage top-`k` for one query.
    pub fn retrieve(&self, kind: RetrieverKind, query: &Query<'_>, k: usize) -> Result<RankedList> {
        match kind {
            RetrieverKind::Lexical => {
                let model = self.lexical.ok_or_else(|| Error::Parameter("lexical index not built".into()))?;
                model.topk(query.text, k)
            }
            RetrieverKind::Dense => {
                let (index, embedder) =
                    self.dense.ok_or_else(|| Error::Parameter("dense index not built".into()))?;
                let v = embedder.embed(&[EmbedInput { id: query.qid, text: query.text }])?;
                dense_topk(index, v.first().map_or(&[][..], Vec::as_slice), k)
            }
        }
    }
}

/// Both stages' output for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Staged {
    pub candidates: RankedList,
    pub reranked: RankedList,
}

/// Re-scores `candidates` and keeps the best `k_final`, ties by cid.
pub fn rerank(
    query: &Query<'_>,
    candidates: &RankedList,
    k_final: usize,
    scorer: &dyn Scorer,
    corpus: &Corpus,
) -> Result<RankedList> {
    let docs = candidates
        .cids()
        .map(|c| corpus.get(c).ok_or_else(|| Error::Lookup(c.to_owned())))
        .collect::<Result<Vec<_>>>()?;
    let scores = scorer.score(query, &docs)?;
    if scores.len() != docs.len() {
        return Err(Error::Protocol(format!("scorer returned {} scores for {} documents", scores.len(), docs.len())));
    }
    let scored = docs.iter().zip(scores).map(|(d, s)| ScoredDoc::new(d.cid.clone(), s)).collect();
    Ok(RankedList::top_k(scored, k_final))
}

pub fn retrieve_rerank(
    query: &Query<'_>,
    cfg: &PipelineConfig,
    indexes: &Indexes<'_>,
    scorer: &dyn Scorer,
    corpus: &Corpus,
) -> Result<Staged> {
    cfg.validate()?;
    let wrap = |stage| {
        move |e| Error::Pipeline { stage, qid: query.qid.to_owned(), source: Box::new(e) }
    };
    let candidates = indexes.retrieve(cfg.retriever, query, cfg.k_retrieve).map_err(wrap(Stage::Retrieve))?;
    let reranked = rerank(query, &candidates, cfg.k_final, scorer, corpus).map_err(wrap(Stage::Rerank))?;
    Ok(Staged { candidates, reranked })
}

/// Evaluation questions with their gold documents.
#[derive(Debug, Clone, Default)]
pub struct EvalSet {
    pub questions: BTreeMap<String, String>,
    pub qrels: Qrels,
}

impl EvalSet {
    pub fn from_pairs(pairs: &[QaPair]) -> Self {
        let mut set = EvalSet::default();
        for p in pairs {
            set.questions.entry(p.qid.clone()).or_insert_with(|| p.question.clone());
            set.qrels.insert(p.qid.clone(), p.cid.clone());
        }
        set
    }

    pub fn len(&self) -> usize {
        self.qrels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qrels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub candidates: Run,
    pub reranked: Run,
}

/// Runs every evaluation question through both stages, in parallel.
pub fn evaluate_pipeline(
    evalset: &EvalSet,
    cfg: &PipelineConfig,
    indexes: &Indexes<'_>,
    scorer: &dyn Scorer,
    corpus: &Corpus,
) -> Result<Evaluation> {
    cfg.validate()?;
    if evalset.is_empty() {
        return Err(Error::Parameter("evaluation set is empty".into()));
    }
    let qids: Vec<&String> = evalset.qrels.qids().collect();
    let staged: Vec<Staged> = qids
        .par_iter()
        .map(|qid| {
            let text = evalset
                .questions
                .get(*qid)
                .ok_or_else(|| Error::Parameter(format!("no question text for {qid}")))?;
            retrieve_rerank(&Query { qid, text }, cfg, indexes, scorer, corpus)
        })
        .collect::<Result<_>>()?;

    let mut candidates = Run::new();
    let mut reranked = Run::new();
    for (qid, s) in qids.into_iter().zip(staged) {
        candidates.insert(qid.clone(), s.candidates)?;
        reranked.insert(qid.clone(), s.reranked)?;
    }
    let report = MetricReport::compute(&candidates, &reranked, &evalset.qrels, cfg.k_retrieve, cfg.k_final)?;
    Ok(Evaluation { report, candidates, reranked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{build_dense_index, HashedBow};
    use crate::lexical::Bm25Params;
    use crate::remote::{Transport, TransportError};
    use crate::segment::Segmenter;
    use serde_json::Value;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn corpus() -> Corpus {
        let texts = [
            ("c1", "thủ tục đăng ký kết hôn"),
            ("c2", "mức phạt vượt đèn đỏ xe máy"),
            ("c3", "điều kiện ly hôn đơn phương"),
            ("c4", "thuế thu nhập cá nhân"),
            ("c5", "quyền sử dụng đất nông nghiệp"),
        ];
        Corpus::new(texts.iter().map(|(c, t)| Document { cid: (*c).into(), text: (*t).into() }).collect()).unwrap()
    }

    #[test]
    fn oracle_puts_gold_first() {
        let corpus = corpus();
        let model = LexicalModel::build(&corpus, Bm25Params::default(), Segmenter::Default).unwrap();
        let qrels: Qrels = [("q", "c4")].into_iter().collect();
        let cfg = PipelineConfig { k_retrieve: 5, k_final: 3, ..PipelineConfig::new(RetrieverKind::Lexical) };
        let out = retrieve_rerank(
            &Query { qid: "q", text: "đăng ký kết hôn" },
            &cfg,
            &Indexes::lexical(&model),
            &OracleScorer::new(qrels),
            &corpus,
        )
        .unwrap();
        assert_eq!(out.reranked.len(), 3);
        assert_eq!(out.reranked.0[0].cid, "c4");
    }

    #[test]
    fn constant_scorer_orders_by_cid() {
        let corpus = corpus();
        let model = LexicalModel::build(&corpus, Bm25Params::default(), Segmenter::Default).unwrap();
        let cfg = PipelineConfig { k_retrieve: 3, k_final: 3, ..PipelineConfig::new(RetrieverKind::Lexical) };
        let out = retrieve_rerank(
            &Query { qid: "q", text: "ly hôn đất" },
            &cfg,
            &Indexes::lexical(&model),
            &ConstantScorer(0.0),
            &corpus,
        )
        .unwrap();
        let mut expected: Vec<&str> = out.candidates.cids().collect();
        expected.sort_unstable();
        assert_eq!(out.reranked.cids().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn config_validation() {
        let cfg = PipelineConfig { k_retrieve: 5, k_final: 10, ..PipelineConfig::new(RetrieverKind::Dense) };
        assert!(cfg.validate().is_err());
        assert_eq!((PipelineConfig::new(RetrieverKind::Dense).k_retrieve, PipelineConfig::new(RetrieverKind::Dense).k_final), (90, 10));
    }

    #[test]
    fn missing_index_is_retrieve_error() {
        let corpus = corpus();
        let err = retrieve_rerank(
            &Query { qid: "q7", text: "x" },
            &PipelineConfig::new(RetrieverKind::Dense),
            &Indexes::default(),
            &ConstantScorer(0.0),
            &corpus,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Pipeline { stage: Stage::Retrieve, ref qid, .. } if qid == "q7"), "{err}");
    }

    #[test]
    fn empty_evalset_is_error() {
        let corpus = corpus();
        let bow = HashedBow::default();
        let index = build_dense_index(&corpus, &bow).unwrap();
        let err = evaluate_pipeline(
            &EvalSet::default(),
            &PipelineConfig::new(RetrieverKind::Dense),
            &Indexes::dense(&index, &bow),
            &ConstantScorer(0.0),
            &corpus,
        );
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn saturated_retrieval_finds_every_gold() {
        let corpus = corpus();
        let bow = HashedBow::default();
        let index = build_dense_index(&corpus, &bow).unwrap();
        let pairs: Vec<QaPair> = (1..=5)
            .map(|i| QaPair { qid: format!("q{i}"), question: format!("câu hỏi {i}"), cid: format!("c{i}") })
            .collect();
        let cfg = PipelineConfig { k_retrieve: 5, k_final: 2, ..PipelineConfig::new(RetrieverKind::Dense) };
        let eval = evaluate_pipeline(
            &EvalSet::from_pairs(&pairs),
            &cfg,
            &Indexes::dense(&index, &bow),
            &ConstantScorer(1.0),
            &corpus,
        )
        .unwrap();
        assert_eq!(eval.report.exist_at_m, 1.0);
        assert_eq!(eval.report.n, 5);
    }

    #[test]
    fn blend_normalizes_bm25() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 3.0]), [0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[7.0, 7.0]), [0.0, 0.0]);
        assert!(min_max_normalize(&[]).is_empty());

        let corpus = corpus();
        let model = Arc::new(LexicalModel::build(&corpus, Bm25Params::default(), Segmenter::Default).unwrap());
        let blend = BlendScorer::new(Bm25Scorer::new(model.clone()), CosineScorer::new(Arc::new(HashedBow::default())))
            .with_weights(1.0, 0.0);
        let docs: Vec<&Document> = corpus.documents().iter().collect();
        let s = blend.score(&Query { qid: "q", text: "ly hôn" }, &docs).unwrap();
        assert_eq!(s.iter().cloned().fold(f64::MIN, f64::max), 1.0);
        assert_eq!(s[2], 1.0);
    }

    struct LenStub {
        calls: AtomicUsize,
        short_by: usize,
    }

    impl Transport for LenStub {
        fn post_json(&self, _: &str, body: &Value) -> std::result::Result<Value, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let docs = body["documents"].as_array().unwrap();
            assert!(body["query"].is_string());
            let mut scores: Vec<f64> = docs.iter().map(|d| d.as_str().unwrap().chars().count() as f64).collect();
            scores.truncate(scores.len() - self.short_by.min(scores.len()));
            Ok(serde_json::json!({ "scores": scores }))
        }
    }

    fn stub_client(short_by: usize, batch: usize) -> (Arc<LenStub>, RemoteClient) {
        let stub = Arc::new(LenStub { calls: AtomicUsize::new(0), short_by });
        let cfg = RemoteConfig { batch_size: batch, max_in_flight: 3, ..RemoteConfig::new("http://stub") };
        (stub.clone(), RemoteClient::new(cfg, stub).unwrap())
    }

    #[test]
    fn remote_scores_rank_by_length() {
        let (_, client) = stub_client(0, 64);
        let scorer = RemoteScorer::new(client);
        let corpus = corpus();
        let candidates = RankedList(corpus.documents().iter().map(|d| ScoredDoc::new(d.cid.clone(), 0.0)).collect());
        let out = rerank(&Query { qid: "q", text: "?" }, &candidates, 5, &scorer, &corpus).unwrap();
        let lens: Vec<usize> = out.cids().map(|c| corpus.get(c).unwrap().text.chars().count()).collect();
        assert!(lens.windows(2).all(|w| w[0] >= w[1]), "{lens:?}");
    }

    #[test]
    fn remote_short_response_is_protocol_error() {
        let (_, client) = stub_client(1, 64);
        let err = remote_score(&client, "q", &["a", "bb", "ccc"]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn remote_batches_concatenate_in_order() {
        let (stub, client) = stub_client(0, 64);
        let docs: Vec<String> = (0..200).map(|i| "x".repeat(i + 1)).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let scores = remote_score(&client, "q", &refs).unwrap();
        assert_eq!(stub.calls.load(Ordering::SeqCst), 4);
        assert_eq!(scores, (1..=200).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn blend_over_dense_candidates_keeps_ten() {
        let corpus = Corpus::new(
            (0..50)
                .map(|i| Document { cid: format!("d{i:02}"), text: format!("w{} w{} w{} w{i}", i % 3, i % 5, i % 7) })
                .collect(),
        )
        .unwrap();
        let bow = Arc::new(HashedBow::default());
        let index = build_dense_index(&corpus, bow.as_ref()).unwrap();
        let model = Arc::new(LexicalModel::build(&corpus, Bm25Params::default(), Segmenter::Default).unwrap());
        let blend = BlendScorer::new(Bm25Scorer::new(model), CosineScorer::new(bow.clone()));
        let cfg = PipelineConfig { k_retrieve: 20, ..PipelineConfig::new(RetrieverKind::Dense) };
        let out = retrieve_rerank(
            &Query { qid: "q", text: "w1 w2 w13" },
            &cfg,
            &Indexes::dense(&index, bow.as_ref()),
            &blend,
            &corpus,
        )
        .unwrap();
        assert_eq!(out.reranked.len(), 10);
        let stage1: Vec<&str> = out.candidates.cids().collect();
        assert!(out.reranked.cids().all(|c| stage1.contains(&c)));
    }
}
