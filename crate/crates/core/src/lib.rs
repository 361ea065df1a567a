//! Late-interaction retrieval with a numerically gated query encoder.
//!
//! Documents are encoded by a plain projection encoder and scored with
//! unmodified MaxSim; queries additionally pass through a numeric token
//! detector and a learned scalar gate that rescales numeric token rows.

pub mod config;
pub mod datagen;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod gate;
pub mod index;
pub mod losses;
pub mod mlp;
pub mod model;
pub mod quantity;
pub mod registry;
pub mod scoring;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
