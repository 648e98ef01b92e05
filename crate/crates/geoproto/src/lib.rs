//! Files, caches and the command-line pipeline around `geoproto-core`.

pub mod archive;
pub mod cache;
pub mod config;
pub mod dataset;
pub mod error;
pub mod hashing;
pub mod pipeline;
pub mod report;

pub use error::{AppError, AppResult};
