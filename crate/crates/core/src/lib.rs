//! Training-free video moment retrieval.
//!
//! The engine consumes per-snippet visual features together with either query
//! embeddings or precomputed snippet/query correlation scores, and localizes
//! the span of a video that matches a sentence query:
//!
//! 1. split the sentence into single-verb simple queries ([`split`]),
//! 2. obtain per-snippet correlation scores for each simple query ([`correlation`]),
//! 3. refine the snippet features conditioned on those scores ([`refine`]),
//! 4. cluster the refined features into scored proposals ([`proposal`]),
//! 5. merge the per-simple-query proposal lists bottom-up and rank them ([`merge`]).
//!
//! [`eval`] holds the recall/mIoU metrics, the novel-location shift transform
//! and the correlation probes; [`synth`] builds bundles with planted moments.

pub mod bundle;
pub mod correlation;
pub mod error;
pub mod eval;
pub mod merge;
pub mod model;
pub mod proposal;
pub mod refine;
pub mod split;
pub mod synth;

mod seed;

pub use error::{Error, Result};
pub use model::{
    interval_iou, joint_iou, seconds_iou, snippets_to_seconds, union_span, Interval, MergeGate,
    ProposalMethod, QueryEmbedding, QueryRecord, RefinementConfig, RetrievalConfig, ScoreVector,
    ScoredProposal, SnippetFeatureMatrix,
};
