//! On-disk layout of a normalized dataset.
//!
//! ```text
//! <dir>/corpus.jsonl     {"cid": ..., "text": ...} per line, corpus order
//! <dir>/questions.jsonl  {"qid": ..., "question": ...} per line, qid order
//! <dir>/pairs.tsv        qid<TAB>cid, all supervision pairs
//! <dir>/train.tsv        qid<TAB>cid, written by split
//! <dir>/eval.tsv         qid<TAB>cid, written by split
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, QaPair};
use crate::error::{io_err, Error, Result};
use crate::metrics::Qrels;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const PAIRS_FILE: &str = "pairs.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const EVAL_FILE: &str = "eval.tsv";

#[derive(Serialize, Deserialize)]
struct QuestionLine {
    qid: String,
    question: String,
}

/// Which pairs to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    Train,
    Eval,
}

impl Split {
    pub fn file(self) -> &'static str {
        match self {
            Split::All => PAIRS_FILE,
            Split::Train => TRAIN_FILE,
            Split::Eval => EVAL_FILE,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Parameter(format!("unknown split `{other}` (all, train, eval)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    pub dir: PathBuf,
    pub corpus: Corpus,
    pub questions: BTreeMap<String, String>,
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

impl Store {
    /// Writes corpus, questions and pairs into `dir`, creating it if needed.
    pub fn write(dir: impl AsRef<Path>, corpus: &Corpus, pairs: &[QaPair]) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_jsonl(&dir.join(CORPUS_FILE), corpus.documents())?;
        let questions: BTreeMap<&str, &str> = pairs.iter().map(|p| (p.qid.as_str(), p.question.as_str())).collect();
        write_jsonl(
            &dir.join(QUESTIONS_FILE),
            questions.into_iter().map(|(q, t)| QuestionLine { qid: q.into(), question: t.into() }),
        )?;
        pairs_to_qrels(pairs).save(dir.join(PAIRS_FILE))
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_owned();
        let corpus = Corpus::new(read_jsonl::<Document>(&dir.join(CORPUS_FILE))?)?;
        let questions = read_jsonl::<QuestionLine>(&dir.join(QUESTIONS_FILE))?
            .into_iter()
            .map(|q| (q.qid, q.question))
            .collect();
        Ok(Self { dir, corpus, questions })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn qrels(&self, split: Split) -> Result<Qrels> {
        Qrels::load(self.path(split.file()))
    }

    /// Pairs of `split`, with question text attached, in qid then cid order.
    pub fn pairs(&self, split: Split) -> Result<Vec<QaPair>> {
        let qrels = self.qrels(split)?;
        let mut out = Vec::new();
        for (qid, golds) in qrels.iter() {
            let question = self
                .questions
                .get(qid)
                .ok_or_else(|| Error::Format(format!("{} has no question text for {qid}", split.file())))?;
            for cid in golds {
                if !self.corpus.contains(cid) {
                    return Err(Error::UnknownCid { qid: qid.clone(), cid: cid.clone() });
                }
                out.push(QaPair { qid: qid.clone(), question: question.clone(), cid: cid.clone() });
            }
        }
        Ok(out)
    }

    pub fn write_split(&self, train: &[QaPair], eval: &[QaPair]) -> Result<()> {
        pairs_to_qrels(train).save(self.path(TRAIN_FILE))?;
        pairs_to_qrels(eval).save(self.path(EVAL_FILE))
    }
}

pub fn pairs_to_qrels(pairs: &[QaPair]) -> Qrels {
    pairs.iter().map(|p| (p.qid.clone(), p.cid.clone())).collect()
}
