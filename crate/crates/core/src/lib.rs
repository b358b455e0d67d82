//! Entropy-guided compression of discrete token sequences.
//!
//! A predictive model assigns each position of a token sequence the entropy
//! of its next-token distribution. Positions where that entropy is high (or
//! jumps) open new groups, so predictable stretches collapse into long
//! groups. A cross-attentive local encoder then turns every group into one
//! vector.
//!
//! Modules follow the pipeline: [`corpus`] (data and file formats), [`lm`]
//! (predictive models and entropy), [`segmenter`] (boundaries, baselines and
//! rate calibration), [`cale`] (the group encoder), [`metrics`] (compression,
//! alignment and throughput) and [`synth`] (generators with known ground
//! truth).

pub mod cale;
pub mod corpus;
pub mod error;
pub mod fsutil;
pub mod lm;
pub mod metrics;
pub mod scalar;
pub mod segmenter;
pub mod synth;

pub use corpus::{AlignmentRef, EntropyScale, EntropyTrace, Tier, TokenSequence, Vocabulary};
pub use error::{Error, ErrorKind, Result};
pub use lm::{BackoffConfig, BackoffCounts, PredictiveModel};
pub use scalar::Scalar;
pub use segmenter::{BoundaryCriterion, Segmentation};

pub type CaleParams32 = cale::CaleParams<f32>;
pub type CaleParams64 = cale::CaleParams<f64>;
pub type CaleGrads64 = cale::CaleGrads<f64>;
pub type GroupEmbeddings32 = cale::GroupEmbeddings<f32>;
pub type GroupEmbeddings64 = cale::GroupEmbeddings<f64>;
pub type Matrix32 = cale::Matrix<f32>;
pub type Matrix64 = cale::Matrix<f64>;
