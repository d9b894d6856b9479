use std::sync::{Arc, LazyLock};

use modcnn_tensor::{ops, Element, Tensor};

use super::SelectionResult;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Where the `k` processed channels are added back into the `C`-channel map.
pub trait Fusion: Send + Sync {
    fn name(&self) -> &'static str;
    /// Target channel for each processed channel, `[N, k]` sample-major.
    fn positions(&self, sel: &SelectionResult) -> Vec<usize>;
}

pub struct FirstK;
pub struct LastK;
pub struct OriginalPosition;

impl Fusion for FirstK {
    fn name(&self) -> &'static str {
        "first-k"
    }

    fn positions(&self, sel: &SelectionResult) -> Vec<usize> {
        (0..sel.n).flat_map(|_| 0..sel.k).collect()
    }
}

impl Fusion for LastK {
    fn name(&self) -> &'static str {
        "last-k"
    }

    fn positions(&self, sel: &SelectionResult) -> Vec<usize> {
        (0..sel.n).flat_map(|_| sel.c - sel.k..sel.c).collect()
    }
}

impl Fusion for OriginalPosition {
    fn name(&self) -> &'static str {
        "original-position"
    }

    fn positions(&self, sel: &SelectionResult) -> Vec<usize> {
        sel.indices.clone()
    }
}

static FUSIONS: LazyLock<Registry<dyn Fusion>> = LazyLock::new(|| {
    Registry::<dyn Fusion>::new("fusion variant")
        .with_aliases("first-k", &["firstk", "s", "standard"], || Arc::new(FirstK))
        .with_aliases("last-k", &["lastk", "lk"], || Arc::new(LastK))
        .with_aliases("original-position", &["op", "original"], || Arc::new(OriginalPosition))
});

pub fn fusions() -> &'static Registry<dyn Fusion> {
    &FUSIONS
}

/// Adds `xhat [N,k,H,W]` into `x [N,C,H,W]` at the variant's positions.
pub fn fuse<E: Element>(
    x: &Tensor<E>,
    xhat: &Tensor<E>,
    sel: &SelectionResult,
    variant: &dyn Fusion,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.dims4("fuse")?;
    let expect = [sel.n, sel.k, h, w];
    if n != sel.n || c != sel.c || xhat.shape() != expect || sel.indices.len() != sel.n * sel.k {
        return Err(Error::Mechanism(format!(
            "{} fusion: x {:?} and processed {:?} inconsistent with selection (N={}, C={}, k={})",
            variant.name(),
            x.shape(),
            xhat.shape(),
            sel.n,
            sel.c,
            sel.k
        )));
    }
    Ok(ops::scatter_add_channels(x, xhat, &variant.positions(sel))?)
}
