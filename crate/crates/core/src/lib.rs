//! Embedding-collapse diagnostics for multi-field categorical models.
//!
//! The crate trains small recommendation models in single-embedding and
//! multi-embedding configurations and measures how collapsed their embedding
//! tables are (information abundance, sub-embedding grids, diversity between
//! embedding sets).

pub mod analysis;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Matrix, SvdResult};
