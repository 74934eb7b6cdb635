//! Two-stage legal document retrieval.
//!
//! A first-stage retriever ([`lexical`] BM25 or a [`dense`] embedding index)
//! proposes candidates; a [`pipeline::Scorer`] re-ranks them. Around that
//! core sit dataset ingestion ([`corpus`], [`store`]), evaluation
//! ([`metrics`]), training-data generation ([`mining`]) and a small
//! laboratory for ranking losses ([`losslab`]).

pub mod corpus;
pub mod dense;
pub mod error;
pub mod lexical;
pub mod losslab;
pub mod metrics;
pub mod mining;
pub mod pipeline;
pub mod ranking;
pub mod remote;
pub mod segment;
pub mod store;

pub use error::{Error, Result};

// Compiles and runs the guide's code samples as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/bm25.md")]
    mod bm25 {}
    #[doc = include_str!("../../../book/src/dense.md")]
    mod dense {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/mining.md")]
    mod mining {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
