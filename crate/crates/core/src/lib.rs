//! Multi-representation retrieval from masked-position encodings.
//!
//! A text is wrapped in a retrieval prompt that ends in `K` mask positions; one
//! bidirectional forward pass yields a hidden state and a logit vector per
//! mask. Hidden states are scored with MaxSim, logits are turned into a sparse
//! lexical vector, and the two are fused by min-max interpolation.

pub mod bench;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod index;
pub mod model;
pub mod prompt;
pub mod repr;
pub mod retrieval;
pub mod scoring;
pub mod synthetic;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
