//! Channel selector, top-k routing, score scaling and fusion.

mod block;
mod fusion;
mod routing;
mod selector;

pub use block::{mod_block_forward, ModBlock, ModBlockConfig};
pub use fusion::{fuse, fusions, FirstK, Fusion, LastK, OriginalPosition};
pub use routing::{k_for, routers, select_topk, LearnedRouter, RandomRouter, Router, SelectionResult};
pub use selector::{compute_scores, hidden_width, ChannelSelector, DEFAULT_RATIO};
