use std::path::PathBuf;

/// Errors produced anywhere in the retrieval stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: I/O error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("record {qid}: {message}")]
    Record { qid: String, message: String },

    #[error("duplicate cid `{0}` in corpus")]
    DuplicateCid(String),

    #[error("question {qid} references unknown cid `{cid}`")]
    UnknownCid { qid: String, cid: String },

    #[error("unknown document `{0}`")]
    Lookup(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("segmenter failed: {0}")]
    Segmentation(String),

    #[error("embedding failed for {} item(s): {}", .failed.len(), .failed.join(", "))]
    Embedding { failed: Vec<String>, reason: String },

    #[error("remote call failed after {attempts} attempt(s): {message}")]
    Remote { attempts: usize, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{stage} stage failed for question {qid}: {source}")]
    Pipeline {
        stage: Stage,
        qid: String,
        #[source]
        source: Box<Error>,
    },
}

/// Pipeline stage, used to attribute failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Retrieve,
    Rerank,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Retrieve => f.write_str("retrieve"),
            Stage::Rerank => f.write_str("rerank"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
