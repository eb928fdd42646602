//! Evaluation toolkit for generative visual-dialogue models.
//!
//! Fits CCA between question and answer sentence embeddings, densifies sparse
//! relevance annotations into per-question reference answer sets, and scores
//! generated answers against those sets with overlap and embedding metrics,
//! next to the rank-based metric suite.

pub mod cca;
pub mod consensus;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod generator;
pub mod pipeline;
pub mod rankmetrics;
pub mod refsets;
pub mod report;

pub use cca::{CcaModel, CcaParams, Projected, View, ANSWER_VIEW, QUESTION_VIEW};
pub use consensus::{ConsensusReport, GeneratedAnswerSet, IdfCorpus, Metric, Scorer, Space};
pub use corpus::{Corpus, DenseAnnotation, DialogueRound, RoundKey, Split};
pub use embed::{EmbeddingTable, PrecomputedVectors, SentenceEmbedder};
pub use error::{Error, ErrorClass, Result};
pub use generator::{AnswerBank, NnBank};
pub use rankmetrics::{NdcgCutoff, RankSummary, Ranking};
pub use refsets::{Anchor, ClusterMethod, Construction, RefSource, ReferenceSet};
pub use report::Conventions;
