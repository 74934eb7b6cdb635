use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use legalrank::corpus::{answers_per_question, length_histogram, load_corpus, load_qa, normalize_qa, split_train_eval, Histogram};
use legalrank::dense::{build_dense_index, Embedder, EmbeddingIndex, FileEmbeddings, HashedBow, RemoteEmbedder};
use legalrank::lexical::{Bm25Params, Bm25Variant, LexicalModel};
use legalrank::losslab::{demo_pairs, toy_train, LossKind, ToyConfig};
use legalrank::metrics::{MetricReport, Qrels, Run};
use legalrank::mining::{band_stats, export_pairs, mine_all, MiningConfig, MiningQuery, Strategy};
use legalrank::pipeline::{
    evaluate_pipeline, BlendScorer, Bm25Scorer, ConstantScorer, CosineScorer, EvalSet, Indexes, OracleScorer,
    PipelineConfig, Query, RemoteScorer, RetrieverKind, Scorer,
};
use legalrank::remote::{RemoteClient, RemoteConfig};
use legalrank::segment::Segmenter;
use legalrank::store::{pairs_to_qrels, Split, Store};
use rayon::prelude::*;
use serde_json::json;

use crate::{Cli, Command, EmbedderArgs};

const LEXICAL_FILE: &str = "bm25.idx";
const DENSE_FILE: &str = "dense.emb";
const EMBEDDER_FILE: &str = "dense.embedder";

pub fn run(cli: Cli) -> Result<()> {
    let dir = cli.store;
    match cli.command {
        Command::Ingest(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let records = load_qa(&a.qa)?;
            let pairs = normalize_qa(&records, &corpus)?;
            Store::write(&dir, &corpus, &pairs)?;
            eprintln!("{} documents, {} questions, {} pairs", corpus.len(), records.len(), pairs.len());
        }
        Command::Split(a) => {
            let store = Store::open(&dir)?;
            let pairs = store.pairs(Split::All)?;
            let (train, eval) = split_train_eval(&pairs, a.ratio, a.seed)?;
            store.write_split(&train, &eval)?;
            println!(
                "{}",
                json!({
                    "train_questions": pairs_to_qrels(&train).len(),
                    "eval_questions": pairs_to_qrels(&eval).len(),
                    "train_pairs": train.len(),
                    "eval_pairs": eval.len(),
                })
            );
        }
        Command::IndexLexical(a) => {
            let store = Store::open(&dir)?;
            let variant: Bm25Variant = a.variant.parse()?;
            let k1 = a.k1.unwrap_or(match variant {
                Bm25Variant::Okapi => Bm25Params::okapi_default().k1,
                Bm25Variant::Plus => Bm25Params::plus_default().k1,
            });
            let params = Bm25Params::new(variant, k1, a.b, a.delta)?;
            let model = LexicalModel::build(&store.corpus, params, Segmenter::parse(&a.segmenter)?)?;
            model.save(store.path(LEXICAL_FILE))?;
            eprintln!("indexed {} documents, {} terms ({params})", model.index.doc_count(), model.index.term_count());
        }
        Command::IndexDense(a) => {
            let store = Store::open(&dir)?;
            let spec = a.embed.embedder.clone().unwrap_or_else(|| "hashedbow".into());
            let embedder = make_embedder(&spec, &a.embed)?;
            let index = build_dense_index(&store.corpus, embedder.as_ref())?;
            index.save(store.path(DENSE_FILE))?;
            let saved = if spec == "hashedbow" { format!("hashedbow:{}", embedder.dim()) } else { spec };
            let meta = store.path(EMBEDDER_FILE);
            std::fs::write(&meta, format!("{saved}\n")).with_context(|| format!("writing {}", meta.display()))?;
            eprintln!("embedded {} documents (dim {}, {} zero rows)", index.len(), index.dim(), index.zero_rows().len());
        }
        Command::Retrieve(a) => {
            let store = Store::open(&dir)?;
            let kind: RetrieverKind = a.retriever.parse()?;
            let split: Split = a.split.parse()?;
            let qrels = store.qrels(split)?;
            let loaded = Loaded::for_retriever(&store, kind, &a.embed)?;
            let indexes = loaded.indexes();
            let qids: Vec<&String> = qrels.qids().collect();
            let lists = qids
                .par_iter()
                .map(|qid| {
                    let text = question(&store, qid)?;
                    Ok(indexes.retrieve(kind, &Query { qid, text }, a.k)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut run = Run::new();
            for (qid, list) in qids.into_iter().zip(lists) {
                run.insert(qid.clone(), list)?;
            }
            write_output(a.out.as_deref(), &run.to_tsv())?;
        }
        Command::Rerank(a) => {
            let store = Store::open(&dir)?;
            let kind: RetrieverKind = a.retriever.parse()?;
            let split: Split = a.split.parse()?;
            let qrels = store.qrels(split)?;
            let loaded = Loaded::for_retriever(&store, kind, &a.embed)?;
            let scorer = make_scorer(&a.scorer, &store, &qrels, &loaded, &a.embed)?;
            let cfg = PipelineConfig { retriever: kind, k_retrieve: a.k_retrieve, k_final: a.k_final };
            let evalset = EvalSet {
                questions: qrels.qids().filter_map(|q| Some((q.clone(), store.questions.get(q)?.clone()))).collect(),
                qrels,
            };
            let eval = evaluate_pipeline(&evalset, &cfg, &loaded.indexes(), scorer.as_ref(), &store.corpus)?;
            if let Some(path) = &a.stage1_out {
                eval.candidates.save(path)?;
            }
            if let Some(path) = &a.report {
                write_output(Some(path), &eval.report.to_json())?;
            }
            write_output(a.out.as_deref(), &eval.reranked.to_tsv())?;
            if a.out.is_some() {
                println!("{}", eval.report.to_json());
            }
        }
        Command::Mine(a) => {
            let store = Store::open(&dir)?;
            let strategy: Strategy = a.strategy.parse()?;
            let cfg = MiningConfig { pool_size: a.pool_size, ..MiningConfig::new(strategy, a.n, a.seed) };
            cfg.validate()?;
            let split: Split = a.split.parse()?;
            let pairs = store.pairs(split)?;
            let qrels = pairs_to_qrels(&pairs);
            let candidates = match &a.run {
                Some(path) => Run::load(path)?,
                None => {
                    let model = load_lexical(&store)?;
                    let mut run = Run::new();
                    let lists = qrels
                        .qids()
                        .collect::<Vec<_>>()
                        .par_iter()
                        .map(|qid| Ok(((*qid).clone(), model.topk(question(&store, qid)?, a.pool_size)?)))
                        .collect::<Result<Vec<_>>>()?;
                    for (qid, list) in lists {
                        run.insert(qid, list)?;
                    }
                    run
                }
            };
            let queries = qrels
                .iter()
                .map(|(qid, gold)| {
                    Ok(MiningQuery {
                        qid: qid.clone(),
                        question: question(&store, qid)?.to_owned(),
                        gold: gold.clone(),
                        candidates: candidates.get(qid).cloned().unwrap_or_default(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let negatives = mine_all(&queries, &store.corpus, &cfg)?;
            export_pairs(&pairs, &negatives, &a.out)?;
            eprintln!("{} positives, {} negatives ({strategy}) -> {}", pairs.len(), negatives.len(), a.out.display());

            if let Some(path) = &a.bands {
                let loaded = Loaded { lexical: load_lexical(&store).ok(), dense: None };
                let scorer = make_scorer(&a.band_scorer, &store, &qrels, &loaded, &a.embed)?;
                let mut by_qid: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
                for n in &negatives {
                    by_qid.entry(&n.qid).or_default().push(&n.cid);
                }
                let scores = by_qid
                    .par_iter()
                    .map(|(qid, cids)| {
                        let docs: Vec<_> = cids.iter().filter_map(|c| store.corpus.get(c)).collect();
                        Ok(scorer.score(&Query { qid, text: question(&store, qid)? }, &docs)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let report = band_stats(&scores.concat());
                write_output(Some(path), &report.to_json())?;
            }
        }
        Command::Eval(a) => {
            let split: Split = a.split.parse()?;
            let qrels = Qrels::load(dir.join(split.file()))?;
            let fin = Run::load(&a.run)?;
            let first = match &a.stage1_run {
                Some(p) => Run::load(p)?,
                None => fin.clone(),
            };
            println!("{}", MetricReport::compute(&first, &fin, &qrels, a.m, a.k)?.to_json());
        }
        Command::Stats(a) => {
            let store = Store::open(&dir)?;
            let edges = a
                .edges
                .split(',')
                .map(|e| e.trim().parse::<usize>().with_context(|| format!("bad edge `{e}`")))
                .collect::<Result<Vec<_>>>()?;
            let seg = Segmenter::parse(&a.segmenter)?;
            let docs: Vec<&str> = store.corpus.documents().iter().map(|d| d.text.as_str()).collect();
            let questions: Vec<&str> = store.questions.values().map(String::as_str).collect();
            let answers = match &a.qa {
                Some(path) => answers_per_question(&load_qa(path)?),
                None => {
                    let mut out = BTreeMap::new();
                    for (_, gold) in store.qrels(Split::All)?.iter() {
                        *out.entry(gold.len()).or_insert(0) += 1;
                    }
                    out
                }
            };
            let report = json!({
                "documents": histogram_json(&length_histogram(&docs, &edges, &seg)?),
                "questions": histogram_json(&length_histogram(&questions, &edges, &seg)?),
                "answers_per_question": answers.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Losslab(a) => {
            let kind: LossKind = a.loss.parse()?;
            let cfg = ToyConfig {
                dim: a.dim,
                learning_rate: a.lr,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: a.seed,
                scale: a.scale,
            };
            let outcome = toy_train(&demo_pairs(), kind, &cfg)?;
            for t in &outcome.trace {
                println!("{}", serde_json::to_string(t)?);
            }
        }
    }
    Ok(())
}

fn question<'a>(store: &'a Store, qid: &str) -> Result<&'a str> {
    match store.questions.get(qid) {
        Some(q) => Ok(q),
        None => bail!("no question text for {qid}"),
    }
}

fn histogram_json(h: &Histogram) -> serde_json::Value {
    let buckets: Vec<_> = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| json!({ "low": h.edges[i], "high": h.edges.get(i + 1), "count": c }))
        .collect();
    json!({ "total": h.total(), "buckets": buckets })
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            let text = if text.is_empty() || text.ends_with('\n') { text.to_owned() } else { format!("{text}\n") };
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn remote_config(url: &str, a: &EmbedderArgs) -> RemoteConfig {
    RemoteConfig {
        batch_size: a.batch_size,
        max_in_flight: a.max_in_flight,
        max_attempts: a.max_attempts,
        timeout: Duration::from_secs(a.timeout),
        ..RemoteConfig::new(url)
    }
}

fn make_embedder(spec: &str, a: &EmbedderArgs) -> Result<Arc<dyn Embedder>> {
    if spec == "hashedbow" {
        return Ok(Arc::new(HashedBow::new(a.dim)?));
    }
    if let Some(dim) = spec.strip_prefix("hashedbow:") {
        return Ok(Arc::new(HashedBow::new(dim.parse().context("bad hashedbow dimension")?)?));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        return Ok(Arc::new(FileEmbeddings::load(path)?));
    }
    if let Some(url) = spec.strip_prefix("remote:") {
        return Ok(Arc::new(RemoteEmbedder::http(remote_config(url, a))?));
    }
    bail!("unknown embedder `{spec}` (hashedbow, file:PATH, remote:URL)")
}

/// Embedder given on the command line, else the one the dense index was
/// built with, else the default hashed bag of words.
fn query_embedder(store: &Store, a: &EmbedderArgs) -> Result<Arc<dyn Embedder>> {
    let spec = match &a.embedder {
        Some(s) => s.clone(),
        None => std::fs::read_to_string(store.path(EMBEDDER_FILE))
            .map(|s| s.trim().to_owned())
            .unwrap_or_else(|_| "hashedbow".into()),
    };
    make_embedder(&spec, a)
}

fn load_lexical(store: &Store) -> Result<LexicalModel> {
    let path: PathBuf = store.path(LEXICAL_FILE);
    LexicalModel::load(&path).with_context(|| format!("loading {} (run `index-lexical` first)", path.display()))
}

struct Loaded {
    lexical: Option<LexicalModel>,
    dense: Option<(EmbeddingIndex, Arc<dyn Embedder>)>,
}

impl Loaded {
    fn for_retriever(store: &Store, kind: RetrieverKind, a: &EmbedderArgs) -> Result<Self> {
        Ok(match kind {
            RetrieverKind::Lexical => Self { lexical: Some(load_lexical(store)?), dense: None },
            RetrieverKind::Dense => {
                let path = store.path(DENSE_FILE);
                let index = EmbeddingIndex::load(&path)
                    .with_context(|| format!("loading {} (run `index-dense` first)", path.display()))?;
                Self { lexical: load_lexical(store).ok(), dense: Some((index, query_embedder(store, a)?)) }
            }
        })
    }

    fn indexes(&self) -> Indexes<'_> {
        Indexes {
            lexical: self.lexical.as_ref(),
            dense: self.dense.as_ref().map(|(i, e)| (i, e.as_ref() as &dyn Embedder)),
        }
    }
}

fn make_scorer(
    spec: &str,
    store: &Store,
    qrels: &Qrels,
    loaded: &Loaded,
    a: &EmbedderArgs,
) -> Result<Box<dyn Scorer>> {
    let bm25 = || -> Result<Bm25Scorer> {
        let model = match &loaded.lexical {
            Some(m) => m.clone(),
            None => load_lexical(store)?,
        };
        Ok(Bm25Scorer::new(Arc::new(model)))
    };
    let cosine = || -> Result<CosineScorer> {
        let embedder = match &loaded.dense {
            Some((_, e)) => e.clone(),
            None => query_embedder(store, a)?,
        };
        Ok(CosineScorer::new(embedder))
    };
    Ok(match spec {
        "bm25" => Box::new(bm25()?),
        "cosine" => Box::new(cosine()?),
        "blend" => Box::new(BlendScorer::new(bm25()?, cosine()?)),
        "oracle" => Box::new(OracleScorer::new(qrels.clone())),
        "constant" => Box::new(ConstantScorer(0.0)),
        other => match other.strip_prefix("remote:") {
            Some(url) => Box::new(RemoteScorer::new(RemoteClient::http(remote_config(url, a))?)),
            None => bail!("unknown scorer `{other}` (bm25, cosine, blend, remote:URL, oracle, constant)"),
        },
    })
}
