use std::sync::Arc;

use modcnn_tensor::{ops, Element, Tensor};

use super::fusion::{fuse, fusions, Fusion};
use super::routing::{k_for, routers, Router};
use super::selector::ChannelSelector;
use crate::arch::BlockKind;
use crate::error::{Error, LayerContext, Result};
use crate::nn::{ForwardCtx, Module, Visitor};

#[derive(Clone)]
pub struct ModBlockConfig {
    pub channels: usize,
    pub c: usize,
    pub k: usize,
    pub kind: BlockKind,
    pub fusion: Arc<dyn Fusion>,
    pub router: Arc<dyn Router>,
}

impl ModBlockConfig {
    pub fn new(channels: usize, c: usize, kind: BlockKind, fusion: &str, router: &str) -> Result<Self> {
        if c == 0 {
            return Err(Error::config("channel parameter c must be >= 1"));
        }
        if channels == 0 {
            return Err(Error::config("MoD block needs at least one channel"));
        }
        Ok(ModBlockConfig {
            channels,
            c,
            k: k_for(channels, c),
            kind,
            fusion: fusions().get(fusion)?,
            router: routers().get(router)?,
        })
    }
}

impl std::fmt::Debug for ModBlockConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModBlockConfig")
            .field("channels", &self.channels)
            .field("c", &self.c)
            .field("k", &self.k)
            .field("kind", &self.kind)
            .field("fusion", &self.fusion.name())
            .field("router", &self.router.name())
            .finish()
    }
}

/// Score, select, gather, process `k` channels, scale by score, fuse.
pub fn mod_block_forward<E: Element>(
    name: &str,
    x: &Tensor<E>,
    cfg: &ModBlockConfig,
    selector: &ChannelSelector<E>,
    inner: &mut dyn Module<E>,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = x.dims4("mod_block").in_layer(name)?;
    if c != cfg.channels {
        return Err(Error::Layer {
            layer: name.to_string(),
            source: modcnn_tensor::TensorError::ShapeMismatch {
                op: "mod_block",
                dim: "channels",
                expected: cfg.channels,
                got: c,
            },
        });
    }
    ctx.observe_shape(name, "input", x.shape());
    let scores = selector.scores(x)?;
    ctx.observe_shape(name, "scores", scores.shape());
    let raw: Vec<f64> = scores.data().iter().map(|v| v.as_f64()).collect();
    let sel = cfg.router.route(&raw, n, c, cfg.k, &mut ctx.rng)?;
    ctx.observe_selection(name, &sel);

    let picked = ops::gather_channels(x, &sel.indices, cfg.k).in_layer(name)?;
    ctx.observe_shape(name, "gathered", picked.shape());
    let processed = inner.forward(&picked, ctx)?;
    if processed.shape() != [n, cfg.k, h, w] {
        return Err(Error::config(format!(
            "{name}: inner block must keep {} channels at stride 1, produced {:?} from {:?}",
            cfg.k,
            processed.shape(),
            picked.shape()
        )));
    }
    ctx.observe_shape(name, "processed", processed.shape());
    let chosen = ops::gather_channels(&scores, &sel.indices, cfg.k).in_layer(name)?;
    let scaled = ops::scale_channels(&processed, &chosen).in_layer(name)?;
    let out = fuse(x, &scaled, &sel, cfg.fusion.as_ref())?;
    ctx.observe_shape(name, "output", out.shape());
    Ok(out)
}

pub struct ModBlock<E: Element> {
    pub name: String,
    pub cfg: ModBlockConfig,
    pub selector: ChannelSelector<E>,
    pub inner: Box<dyn Module<E>>,
}

impl<E: Element> Module<E> for ModBlock<E> {
    fn forward(&mut self, x: &Tensor<E>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<E>> {
        mod_block_forward(&self.name, x, &self.cfg, &self.selector, self.inner.as_mut(), ctx)
    }

    fn visit(&mut self, v: &mut dyn Visitor<E>) {
        self.selector.visit(v);
        self.inner.visit(v);
    }
}
