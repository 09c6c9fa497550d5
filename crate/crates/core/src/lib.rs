//! Supervised clustering of small entity sets.
//!
//! A toy Transformer encodes every entity of a set with attention that can
//! reach the other entities of the same set, cosine similarities feed an
//! average-link agglomerative clusterer, and the encoder is trained with
//! (augmented) triplet losses on labelled or self-supervised clusterings.

pub mod agglomerative;
pub mod data;
pub mod encoder;
pub mod entity;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod numeric;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
