use std::cmp::Ordering;
use std::sync::{Arc, LazyLock};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Number of processed channels for a block with `channels` inputs.
pub fn k_for(channels: usize, c: usize) -> usize {
    (channels / c.max(1)).max(1)
}

/// Per-sample scores and the ascending set of chosen channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub n: usize,
    pub c: usize,
    pub k: usize,
    /// `[N, C]` sample-major.
    pub scores: Vec<f64>,
    /// `[N, k]` sample-major, strictly increasing within a sample.
    pub indices: Vec<usize>,
}

impl SelectionResult {
    pub fn sample_indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn sample_scores(&self, i: usize) -> &[f64] {
        &self.scores[i * self.c..(i + 1) * self.c]
    }

    /// Selection mask `[N, C]`.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n * self.c];
        for i in 0..self.n {
            for &j in self.sample_indices(i) {
                m[i * self.c + j] = true;
            }
        }
        m
    }
}

fn check_k(n: usize, c: usize, k: usize, scores: &[f64]) -> Result<()> {
    if k == 0 || k > c {
        return Err(Error::Mechanism(format!("k = {k} out of range 1..={c}")));
    }
    if scores.len() != n * c {
        return Err(Error::Mechanism(format!(
            "score buffer has {} entries, expected {n} x {c}",
            scores.len()
        )));
    }
    Ok(())
}

/// Highest `k` scores per sample, lower index winning ties, returned in
/// ascending index order.
pub fn select_topk(scores: &[f64], n: usize, c: usize, k: usize) -> Result<SelectionResult> {
    check_k(n, c, k, scores)?;
    let mut indices = Vec::with_capacity(n * k);
    let mut order: Vec<usize> = Vec::with_capacity(c);
    for row in scores.chunks(c) {
        order.clear();
        order.extend(0..c);
        let rank = |&a: &usize, &b: &usize| -> Ordering { row[b].total_cmp(&row[a]).then(a.cmp(&b)) };
        if k < c {
            order.select_nth_unstable_by(k - 1, rank);
        }
        let top = &mut order[..k];
        top.sort_unstable();
        indices.extend_from_slice(top);
    }
    Ok(SelectionResult {
        n,
        c,
        k,
        scores: scores.to_vec(),
        indices,
    })
}

/// Chooses which channels a MoD block processes.
pub trait Router: Send + Sync {
    fn name(&self) -> &'static str;
    fn route(&self, scores: &[f64], n: usize, c: usize, k: usize, rng: &mut dyn RngCore)
        -> Result<SelectionResult>;
}

pub struct LearnedRouter;

impl Router for LearnedRouter {
    fn name(&self) -> &'static str {
        "learned"
    }

    fn route(&self, scores: &[f64], n: usize, c: usize, k: usize, _: &mut dyn RngCore) -> Result<SelectionResult> {
        select_topk(scores, n, c, k)
    }
}

/// Uniform random k-subset per sample, redrawn on every forward pass. The
/// learned scores are still reported so the block can scale by them.
pub struct RandomRouter;

impl Router for RandomRouter {
    fn name(&self) -> &'static str {
        "randomized"
    }

    fn route(&self, scores: &[f64], n: usize, c: usize, k: usize, rng: &mut dyn RngCore) -> Result<SelectionResult> {
        check_k(n, c, k, scores)?;
        let mut indices = Vec::with_capacity(n * k);
        for _ in 0..n {
            let mut pick = rand::seq::index::sample(rng, c, k).into_vec();
            pick.sort_unstable();
            indices.extend(pick);
        }
        Ok(SelectionResult {
            n,
            c,
            k,
            scores: scores.to_vec(),
            indices,
        })
    }
}

static ROUTERS: LazyLock<Registry<dyn Router>> = LazyLock::new(|| {
    Registry::<dyn Router>::new("selector mode")
        .with_aliases("learned", &["topk", "top-k"], || Arc::new(LearnedRouter))
        .with_aliases("randomized", &["random", "rand"], || Arc::new(RandomRouter))
});

pub fn routers() -> &'static Registry<dyn Router> {
    &ROUTERS
}
