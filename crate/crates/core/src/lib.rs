//! Audience comment simulation for unpublished videos: multimodal video
//! understanding, persona retrieval, persona-conditioned comment generation
//! and NLG evaluation metrics.

pub mod clock;
pub mod comments;
pub mod config;
pub mod error;
pub mod fixture;
pub mod fsutil;
pub mod gateway;
pub mod hashing;
pub mod metrics;
pub mod persona;
pub mod pipeline;
pub mod prompt;
pub mod summary;
pub mod video;

pub use error::{Error, Result};
