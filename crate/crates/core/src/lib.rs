//! Explanation-quality scoring for prototype-based models.
//!
//! The engine reaches a trained model through [`adapter::ModelChannel`]
//! (a line-delimited JSON subprocess protocol, or a recorded replay),
//! clusters its latent space per class, and computes nine prototype
//! quality scores plus their equal-weight total.
//!
//! Module map:
//!
//! * [`data`]: matrices, datasets, manifests, score reports
//! * [`adapter`]: the model wire protocol and its transports
//! * [`clustering`]: silhouette, k-means, per-class selection of k
//! * [`metrics`]: the nine scores and the total
//! * [`experiments`]: the full pipeline, outlier injection, consistency runs
//! * [`synthetic`]: SAWSINE-style series and planted latent data
//!
//! Heavy loops run on rayon when the `parallel` feature is enabled (the
//! default). Every parallel reduction is ordered, so results are identical
//! under [`Execution::Sequential`] and [`Execution::Parallel`].

pub mod adapter;
pub mod clustering;
pub mod data;
pub mod distance;
pub mod experiments;
pub mod metrics;
mod par;
pub mod seed;
pub mod synthetic;

pub use data::{InputDataset, LatentDataset, Matrix, PrototypeSet, ScoreReport};
pub use par::Execution;

/// Engine version embedded in every report.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
