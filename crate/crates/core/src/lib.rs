//! Shapley-value explanations for convolutional text classifiers.
//!
//! A trained [`CnnModel`](cnn::CnnModel) turns a document into one max-pooled
//! activation per filter. Each activation is traceable to the n-gram window
//! that produced it, so attributions computed on the classification head over
//! those activations can be reported as n-gram scores, de-duplicated, and
//! aggregated across a corpus into rank-based global importance.

pub mod cnn;
pub mod corpus;
pub mod error;
pub mod explain;
pub mod ranking;
pub mod shapley;
pub mod sim;
pub mod similarity;
pub mod text;

pub use error::{Error, Result};
