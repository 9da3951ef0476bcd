//! Content-aware hashing-based collaborative filtering.
//!
//! Users and items are embedded as m-bit binary codes learned end-to-end
//! with a variational objective; item codes are a pure function of item
//! content, so new items receive codes the same way seen items do. Top-K
//! recommendation reduces to a bitpacked Hamming scan.
//!
//! Pipeline: [`corpus`] ingests ratings and builds TF-IDF content rows and
//! splits, [`trainer`] fits [`model`] parameters with Adam, [`hashindex`]
//! stores and ranks the resulting codes, [`eval`] computes NDCG/MRR and the
//! per-user analysis series.
//!
//! The `parallel` feature (on by default) backs batch gradients, inference
//! and evaluation with rayon. Work is split into chunks by the requested
//! thread count and reduced in chunk order, so results for a fixed
//! `threads` setting are bit-identical with or without the feature; a
//! thread count of 1 is fully sequential.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod hashindex;
pub mod linalg;
pub mod model;
pub mod par;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
