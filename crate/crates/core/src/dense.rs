//! Dense first-stage retrieval: embedders and exact cosine search.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use crate::corpus::Corpus;
use crate::error::{io_err, Error, Result};
use crate::ranking::{RankedList, ScoredDoc};
use crate::remote::{RemoteClient, RemoteConfig, Transport};
use crate::segment::Segmenter;

/// Tolerance for the unit-norm check on stored rows.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// An item to embed. `id` is a cid or qid; precomputed sources look it up,
/// content-based embedders ignore it.
#[derive(Debug, Clone, Copy)]
pub struct EmbedInput<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector of length [`Embedder::dim`] per input, in input order.
    fn embed(&self, inputs: &[EmbedInput<'_>]) -> Result<Vec<Vec<f64>>>;
}

/// Returns `v / |v|`, or `v` unchanged if its norm is zero.
pub fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Parameter(format!("dimension mismatch: {} vs {}", u.len(), v.len())));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    s.bytes().fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Deterministic signed feature-hashing bag of tokens.
///
/// Each token's FNV-1a hash picks coordinate `h % dim`; the top bit of the
/// hash picks the sign. The vector is the L2-normalized signed count vector.
#[derive(Debug, Clone)]
pub struct HashedBow {
    dim: usize,
    segmenter: Segmenter,
}

impl HashedBow {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("embedding dimension must be >= 1".into()));
        }
        Ok(Self { dim, segmenter: Segmenter::Default })
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        // the default segmenter cannot fail
        for token in self.segmenter.tokenize(text).unwrap_or_default() {
            let h = fnv1a64(&token);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        l2_normalize(v)
    }
}

impl Default for HashedBow {
    fn default() -> Self {
        Self { dim: Self::DEFAULT_DIM, segmenter: Segmenter::Default }
    }
}

impl Embedder for HashedBow {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, inputs: &[EmbedInput<'_>]) -> Result<Vec<Vec<f64>>> {
        Ok(inputs.iter().map(|i| self.embed_text(i.text)).collect())
    }
}

/// Precomputed vectors keyed by id.
///
/// File format: a `dim<TAB>d` header, then `id<TAB>f1 f2 ... fd` per line.
#[derive(Debug, Clone, Default)]
pub struct FileEmbeddings {
    dim: usize,
    ids: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Parameter(format!(
                "vector for `{id}` has dimension {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if self.vectors.insert(id.clone(), vector).is_some() {
            return Err(Error::Format(format!("duplicate embedding id `{id}`")));
        }
        self.ids.push(id);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in file (insertion) order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut lines = BufReader::new(file).lines();
        let bad = |line_no: usize, msg: &str| Error::Format(format!("{}:{line_no}: {msg}", path.display()));

        let header = lines.next().ok_or_else(|| bad(1, "empty embedding file"))?.map_err(io_err(path))?;
        let dim: usize = header
            .strip_prefix("dim\t")
            .and_then(|d| d.trim().parse().ok())
            .filter(|&d| d >= 1)
            .ok_or_else(|| bad(1, "expected `dim<TAB>d` header"))?;

        let mut out = Self::new(dim);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line.split_once('\t').ok_or_else(|| bad(line_no, "expected `id<TAB>values`"))?;
            let vector = values
                .split_ascii_whitespace()
                .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| bad(line_no, "non-numeric or non-finite value"))?;
            if vector.len() != dim {
                return Err(bad(line_no, &format!("expected {dim} values, found {}", vector.len())));
            }
            out.insert(id, vector).map_err(|e| bad(line_no, &e.to_string()))?;
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.ids.iter().map(|id| (id.as_str(), self.vectors[id].as_slice()));
        write_embeddings(path.as_ref(), self.dim, rows)
    }
}

fn write_embeddings<'a>(
    path: &Path,
    dim: usize,
    rows: impl Iterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let write = || -> std::io::Result<()> {
        writeln!(w, "dim\t{dim}")?;
        for (id, v) in rows {
            w.write_all(id.as_bytes())?;
            for (i, x) in v.iter().enumerate() {
                w.write_all(if i == 0 { b"\t" } else { b" " })?;
                // shortest round-trip representation
                write!(w, "{x:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

impl Embedder for FileEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, inputs: &[EmbedInput<'_>]) -> Result<Vec<Vec<f64>>> {
        let missing: Vec<String> =
            inputs.iter().filter(|i| !self.vectors.contains_key(i.id)).map(|i| i.id.to_owned()).collect();
        if !missing.is_empty() {
            return Err(Error::Embedding { failed: missing, reason: "no precomputed vector".into() });
        }
        Ok(inputs.iter().map(|i| self.vectors[i.id].clone()).collect())
    }
}

/// Embeddings from an HTTP endpoint: request `{"texts": [...]}`, response
/// `{"vectors": [[...], ...]}` in request order.
#[derive(Clone)]
pub struct RemoteEmbedder {
    client: RemoteClient,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(client: RemoteClient, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("embedding dimension must be >= 1".into()));
        }
        Ok(Self { client, dim })
    }

    /// Learns the dimension by embedding one probe text.
    pub fn probe(client: RemoteClient) -> Result<Self> {
        let v = request_vectors(&client, &["dimension probe"])?;
        let dim = v.first().map_or(0, Vec::len);
        Self::new(client, dim)
    }

    pub fn http(config: RemoteConfig) -> Result<Self> {
        Self::probe(RemoteClient::http(config)?)
    }

    pub fn with_transport(config: RemoteConfig, transport: Arc<dyn Transport>, dim: usize) -> Result<Self> {
        Self::new(RemoteClient::new(config, transport)?, dim)
    }
}

fn request_vectors(client: &RemoteClient, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
    let response = client.post(&json!({ "texts": texts }))?;
    let vectors: Vec<Vec<f64>> = response
        .get("vectors")
        .cloned()
        .ok_or_else(|| Error::Protocol("response has no `vectors` field".into()))
        .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Protocol(format!("bad `vectors`: {e}"))))?;
    if vectors.len() != texts.len() {
        return Err(Error::Protocol(format!("{} vectors for {} texts", vectors.len(), texts.len())));
    }
    Ok(vectors)
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, inputs: &[EmbedInput<'_>]) -> Result<Vec<Vec<f64>>> {
        let results = self.client.batched(inputs.len(), |range| {
            let texts: Vec<&str> = inputs[range].iter().map(|i| i.text).collect();
            let vectors = request_vectors(&self.client, &texts)?;
            if let Some(v) = vectors.iter().find(|v| v.len() != self.dim) {
                return Err(Error::Protocol(format!("vector of dimension {}, expected {}", v.len(), self.dim)));
            }
            Ok(vectors)
        });
        let mut out = Vec::with_capacity(inputs.len());
        let mut failed = Vec::new();
        let mut reason = String::new();
        for (range, result) in results {
            match result {
                Ok(vectors) => out.extend(vectors),
                Err(e) => {
                    failed.extend(inputs[range].iter().map(|i| i.id.to_owned()));
                    if reason.is_empty() {
                        reason = e.to_string();
                    }
                }
            }
        }
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(Error::Embedding { failed, reason })
        }
    }
}

/// L2-normalized document vectors in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    cids: Vec<String>,
    rows: Vec<f64>,
    zero_rows: Vec<usize>,
}

impl EmbeddingIndex {
    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("embedding dimension must be >= 1".into()));
        }
        let mut index = Self { dim, cids: Vec::new(), rows: Vec::new(), zero_rows: Vec::new() };
        for (cid, v) in rows {
            if v.len() != dim {
                return Err(Error::Parameter(format!(
                    "vector for `{cid}` has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            let v = l2_normalize(v);
            if v.iter().all(|&x| x == 0.0) {
                index.zero_rows.push(index.cids.len());
            }
            index.rows.extend(v);
            index.cids.push(cid);
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.cids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cids.is_empty()
    }

    pub fn cids(&self) -> &[String] {
        &self.cids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Row positions whose embedding had zero norm.
    pub fn zero_rows(&self) -> &[usize] {
        &self.zero_rows
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = (0..self.len()).map(|i| (self.cids[i].as_str(), self.row(i)));
        write_embeddings(path.as_ref(), self.dim, rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = FileEmbeddings::load(path)?;
        let rows = file.ids.iter().map(|id| (id.clone(), file.vectors[id].clone()));
        Self::from_rows(file.dim, rows)
    }
}

const EMBED_CHUNK: usize = 1024;

/// Embeds every document of `corpus`. Zero-norm embeddings are kept as zero
/// rows and reported through [`EmbeddingIndex::zero_rows`].
pub fn build_dense_index(corpus: &Corpus, embedder: &dyn Embedder) -> Result<EmbeddingIndex> {
    let docs = corpus.documents();
    let mut vectors = Vec::with_capacity(docs.len());
    let mut failed = Vec::new();
    let mut reason = String::new();
    for chunk in docs.chunks(EMBED_CHUNK) {
        let inputs: Vec<EmbedInput> = chunk.iter().map(|d| EmbedInput { id: &d.cid, text: &d.text }).collect();
        match embedder.embed(&inputs) {
            Ok(v) => vectors.extend(v),
            Err(Error::Embedding { failed: f, reason: r }) => {
                failed.extend(f);
                if reason.is_empty() {
                    reason = r;
                }
            }
            Err(e) => return Err(e),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Embedding { failed, reason });
    }
    let index = EmbeddingIndex::from_rows(embedder.dim(), docs.iter().map(|d| d.cid.clone()).zip(vectors))?;
    if !index.zero_rows.is_empty() {
        log::warn!("{} document(s) have zero-norm embeddings and will score 0", index.zero_rows.len());
    }
    Ok(index)
}

/// Exact cosine top-`k` over every row.
pub fn dense_topk(index: &EmbeddingIndex, query_vector: &[f64], k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    if query_vector.len() != index.dim {
        return Err(Error::Parameter(format!(
            "query dimension {} does not match index dimension {}",
            query_vector.len(),
            index.dim
        )));
    }
    let query = l2_normalize(query_vector.to_vec());
    let docs: Vec<ScoredDoc> = index
        .rows
        .par_chunks(index.dim)
        .zip(index.cids.par_iter())
        .map(|(row, cid)| ScoredDoc::new(cid.clone(), dot(row, &query).clamp(-1.0, 1.0)))
        .collect();
    Ok(RankedList::top_k(docs, k))
}

/// Embeds questions keyed by qid. Inputs are `(qid, question text)`.
pub fn embed_queries(questions: &[(String, String)], embedder: &dyn Embedder) -> Result<BTreeMap<String, Vec<f64>>> {
    let inputs: Vec<EmbedInput> = questions.iter().map(|(id, text)| EmbedInput { id, text }).collect();
    let vectors = embedder.embed(&inputs)?;
    Ok(questions.iter().map(|(id, _)| id.clone()).zip(vectors.into_iter().map(l2_normalize)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::remote::TransportError;
    use serde_json::Value;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn corpus(texts: &[(&str, &str)]) -> Corpus {
        Corpus::new(texts.iter().map(|(c, t)| Document { cid: (*c).into(), text: (*t).into() }).collect()).unwrap()
    }

    #[test]
    fn cosine_values() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hashed_bow_index_shape() {
        let c = corpus(&[("1", "luật đất đai"), ("2", "bộ luật hình sự"), ("3", "")]);
        let index = build_dense_index(&c, &HashedBow::new(64).unwrap()).unwrap();
        assert_eq!((index.len(), index.dim()), (3, 64));
        for i in 0..2 {
            let norm = dot(index.row(i), index.row(i)).sqrt();
            assert!((norm - 1.0).abs() < NORM_TOLERANCE);
        }
        assert_eq!(index.zero_rows(), [2]);
    }

    #[test]
    fn file_embeddings_missing_cid() {
        let mut file = FileEmbeddings::new(2);
        file.insert("1", vec![1.0, 0.0]).unwrap();
        let c = corpus(&[("1", "a"), ("2", "b"), ("3", "c")]);
        match build_dense_index(&c, &file) {
            Err(Error::Embedding { failed, .. }) => assert_eq!(failed, ["2", "3"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_embeddings_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tsv");
        std::fs::write(&path, "dim\t3\na\t1 0 -2.5e-1\nb\t1E2 0.5 3\n").unwrap();
        let file = FileEmbeddings::load(&path).unwrap();
        assert_eq!(file.get("a").unwrap(), [1.0, 0.0, -0.25]);
        assert_eq!(file.get("b").unwrap(), [100.0, 0.5, 3.0]);

        std::fs::write(&path, "dim\t2\na\t1 0 3\n").unwrap();
        assert!(matches!(FileEmbeddings::load(&path), Err(Error::Format(_))));
        std::fs::write(&path, "dim\t1\na\tnan\n").unwrap();
        assert!(FileEmbeddings::load(&path).is_err());
    }

    #[test]
    fn index_save_load_exact() {
        let c = corpus(&[("x", "một hai ba"), ("y", "bốn năm"), ("z", "")]);
        let index = build_dense_index(&c, &HashedBow::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dense.tsv");
        index.save(&path).unwrap();
        assert_eq!(EmbeddingIndex::load(&path).unwrap(), index);
    }

    #[test]
    fn self_retrieval_and_saturation() {
        let c = corpus(&[("a", "x y"), ("b", "y z"), ("c", "z w"), ("d", "w q")]);
        let bow = HashedBow::default();
        let index = build_dense_index(&c, &bow).unwrap();
        let ranked = dense_topk(&index, index.row(2), 1).unwrap();
        assert_eq!(ranked.0[0].cid, "c");
        assert!((ranked.0[0].score - 1.0).abs() < 1e-12);
        assert_eq!(dense_topk(&index, index.row(0), 4).unwrap().len(), 4);
        assert!(dense_topk(&index, &[1.0], 1).is_err());
        assert!(dense_topk(&index, index.row(0), 0).is_err());
    }

    #[test]
    fn zero_rows_score_zero() {
        let index = EmbeddingIndex::from_rows(2, [("a".into(), vec![0.0, 0.0]), ("b".into(), vec![0.0, 3.0])]).unwrap();
        let ranked = dense_topk(&index, &[1.0, 1.0], 2).unwrap();
        assert_eq!(ranked.0[1].cid, "a");
        assert_eq!(ranked.0[1].score, 0.0);
    }

    #[test]
    fn queries_keyed_and_pure() {
        let bow = HashedBow::default();
        let qs = vec![
            ("q1".to_owned(), "thủ tục ly hôn".to_owned()),
            ("q2".to_owned(), "mức phạt vượt đèn đỏ".to_owned()),
            ("q3".to_owned(), "thủ tục ly hôn".to_owned()),
        ];
        let a = embed_queries(&qs, &bow).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a["q1"], a["q3"]);
        assert_eq!(a, embed_queries(&qs, &bow).unwrap());
        assert!(embed_queries(&[], &bow).unwrap().is_empty());
    }

    #[test]
    fn bag_of_tokens_order_invariant() {
        let bow = HashedBow::default();
        assert_eq!(bow.embed_text("a b c d"), bow.embed_text("d c b a"));
        assert_ne!(bow.embed_text("a b c d"), bow.embed_text("a b c d e"));
    }

    struct EchoLen {
        calls: AtomicUsize,
        fail_batch: Option<usize>,
    }

    impl Transport for EchoLen {
        fn post_json(&self, _: &str, body: &Value) -> std::result::Result<Value, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if Some(n) == self.fail_batch {
                return Err(TransportError::Fatal("boom".into()));
            }
            let texts = body["texts"].as_array().unwrap();
            let vectors: Vec<Vec<f64>> =
                texts.iter().map(|t| vec![t.as_str().unwrap().len() as f64, 1.0]).collect();
            Ok(json!({ "vectors": vectors }))
        }
    }

    fn fast(batch: usize) -> RemoteConfig {
        RemoteConfig {
            batch_size: batch,
            max_in_flight: 1,
            backoff: std::time::Duration::ZERO,
            ..RemoteConfig::new("http://stub")
        }
    }

    #[test]
    fn remote_embedder_batches_and_probes() {
        let t = Arc::new(EchoLen { calls: AtomicUsize::new(0), fail_batch: None });
        let emb = RemoteEmbedder::probe(RemoteClient::new(fast(2), t.clone()).unwrap()).unwrap();
        assert_eq!(emb.dim(), 2);
        let inputs: Vec<_> = ["a", "bb", "ccc", "dddd", "eeeee"].iter().map(|s| EmbedInput { id: s, text: s }).collect();
        let v = emb.embed(&inputs).unwrap();
        assert_eq!(v.iter().map(|x| x[0]).collect::<Vec<_>>(), [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.calls.load(Ordering::SeqCst), 1 + 3);
    }

    #[test]
    fn remote_embedder_lists_failed_ids() {
        let t = Arc::new(EchoLen { calls: AtomicUsize::new(0), fail_batch: Some(1) });
        let emb = RemoteEmbedder::with_transport(fast(2), t, 2).unwrap();
        let inputs: Vec<_> = ["a", "b", "c", "d"].iter().map(|s| EmbedInput { id: s, text: s }).collect();
        match emb.embed(&inputs) {
            Err(Error::Embedding { failed, .. }) => assert_eq!(failed, ["c", "d"]),
            other => panic!("{other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn truncation_commutes(seed in 0u64..1000, k in 1usize..12) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let rows: Vec<(String, Vec<f64>)> = (0..12)
                    .map(|i| (format!("d{i:02}"), (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()))
                    .collect();
                let index = EmbeddingIndex::from_rows(5, rows).unwrap();
                let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let full = dense_topk(&index, &q, index.len()).unwrap();
                prop_assert_eq!(dense_topk(&index, &q, k).unwrap(), full.truncated(k));
            }

            #[test]
            fn permuted_tokens_same_vector(tokens in prop::collection::vec("[a-z]{1,6}", 1..12), rot in 0usize..12) {
                let bow = HashedBow::default();
                let mut shuffled = tokens.clone();
                let len = shuffled.len();
                shuffled.rotate_left(rot % len);
                prop_assert_eq!(bow.embed_text(&tokens.join(" ")), bow.embed_text(&shuffled.join(" ")));
            }
        }
    }
}
