//! Convolutional networks with channel-selective blocks.
//!
//! A MoD block scores the channels of its input with a small
//! squeeze-style selector, runs a reduced copy of the standard block on
//! the top `k` channels only, scales the result by the selected scores and
//! adds it back into the full-width input. Networks are described by an
//! [`arch::ArchSpec`], planned into per-block records, and either costed
//! analytically ([`cost`]) or instantiated and trained ([`train`]).

pub mod arch;
pub mod bench;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod mechanism;
pub mod nn;
pub mod registry;
pub mod train;

pub use error::{Error, Result};
