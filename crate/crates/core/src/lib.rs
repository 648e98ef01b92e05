//! Interpretable prototype classification of gridded spatiotemporal events.
//!
//! The pipeline turns raw feature rasters into binary *Geo-concepts* by running
//! statistical significance tests over sliding windows ([`encoder`]), fuses the
//! per-window-size concept maps with learned simplex weights and pools them
//! over named geographic sub-regions ([`aggregate`]), then classifies the
//! pooled vector by inverse squared distance to class-assigned prototypes
//! ([`model`], [`train`]). Prototypes are explained by projection onto real
//! training cases ([`explain`]).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, caches and the
//! command line live in the companion `geoproto` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod aggregate;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod grid;
pub mod model;
pub mod optim;
pub mod stats;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
