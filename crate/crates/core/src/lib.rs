//! Trace-driven simulation of a learned semantic prefetcher against
//! traditional readahead baselines.
//!
//! The pipeline: synthesize a multi-table database and a query trace
//! ([`datastore`]), compress each block's values to a fixed-length vector
//! ([`encoding`]), group co-accessed blocks into bounded partitions over an
//! affinity graph ([`partitioning`]), train an encoder-decoder sequence
//! model that maps recent query encodings to per-partition access
//! probabilities ([`learner`]), and replay traces through an LRU cache with
//! prefetching ([`cache`], [`baselines`], [`harness`]).

pub mod baselines;
pub mod cache;
pub mod datastore;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod learner;
pub mod nn;
pub mod partitioning;

pub use error::{Error, Result};
