use std::sync::{Arc, LazyLock};

use serde::Serialize;

use super::spec::{ArchSpec, BlockKind, Placement, StemKind};
use crate::error::{Error, Result};
use crate::mechanism::{hidden_width, k_for};
use crate::nn::{Activation, ConvSpec};
use crate::registry::Registry;

/// One block of a planned network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockRecord {
    /// `layer{module+1}.{index}`.
    pub name: String,
    pub module: usize,
    pub index: usize,
    pub kind: BlockKind,
    pub is_mod: bool,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: usize,
    /// Channel chain of the convolution stack: `[in, mid, out]`, or
    /// `[in, out]` for a plain conv. For MoD blocks this is the reduced
    /// `k`-channel inner block.
    pub widths: Vec<usize>,
    pub k: Option<usize>,
    /// VGG stages end in a 2x2 max pool.
    pub pool_after: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StemPlan {
    pub convs: Vec<ConvSpec>,
    pub max_pool: bool,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum HeadPlan {
    /// Global pool then one classifier layer.
    Linear { in_channels: usize },
    /// 1x1 conv to `hidden`, global pool, classifier.
    ConvLinear { in_channels: usize, hidden: usize },
    /// Global pool then a three-layer MLP.
    Mlp { in_channels: usize, hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockPlan {
    pub spec: ArchSpec,
    pub stem: StemPlan,
    pub blocks: Vec<BlockRecord>,
    pub head: HeadPlan,
}

impl BlockPlan {
    pub fn mod_blocks(&self) -> impl Iterator<Item = &BlockRecord> {
        self.blocks.iter().filter(|b| b.is_mod)
    }

    /// Weighted layers along the main path: stem convs, block stack convs
    /// (projection shortcuts and selectors excluded) and head layers.
    pub fn depth(&self) -> usize {
        let head = match self.head {
            HeadPlan::Linear { .. } => 1,
            HeadPlan::ConvLinear { .. } => 2,
            HeadPlan::Mlp { .. } => 3,
        };
        self.stem.convs.len() + self.blocks.iter().map(|b| stack_convs(b, "").len()).sum::<usize>() + head
    }

    pub fn selector_hidden(&self, rec: &BlockRecord) -> usize {
        hidden_width(rec.in_channels, self.spec.ratio)
    }
}

/// Family-specific wiring; the shared planner handles placement.
pub trait Family: Send + Sync {
    fn name(&self) -> &'static str;
    fn block_kinds(&self) -> &'static [BlockKind];
    fn module_out(&self, spec: &ArchSpec, module: usize) -> usize;
    fn pool_after_module(&self) -> bool {
        false
    }
    fn head(&self, spec: &ArchSpec, in_channels: usize) -> HeadPlan;
}

struct ResNet;
struct MobileNetV2;
struct Vgg;

impl Family for ResNet {
    fn name(&self) -> &'static str {
        "resnet"
    }
    fn block_kinds(&self) -> &'static [BlockKind] {
        &[BlockKind::Basic, BlockKind::Bottleneck]
    }
    fn module_out(&self, spec: &ArchSpec, m: usize) -> usize {
        spec.widths[m] * if spec.block == BlockKind::Bottleneck { 4 } else { 1 }
    }
    fn head(&self, _: &ArchSpec, in_channels: usize) -> HeadPlan {
        HeadPlan::Linear { in_channels }
    }
}

impl Family for MobileNetV2 {
    fn name(&self) -> &'static str {
        "mobilenetv2"
    }
    fn block_kinds(&self) -> &'static [BlockKind] {
        &[BlockKind::InvertedResidual]
    }
    fn module_out(&self, spec: &ArchSpec, m: usize) -> usize {
        spec.widths[m]
    }
    fn head(&self, spec: &ArchSpec, in_channels: usize) -> HeadPlan {
        HeadPlan::ConvLinear {
            in_channels,
            hidden: spec.head_width,
        }
    }
}

impl Family for Vgg {
    fn name(&self) -> &'static str {
        "vgg"
    }
    fn block_kinds(&self) -> &'static [BlockKind] {
        &[BlockKind::PlainConv]
    }
    fn module_out(&self, spec: &ArchSpec, m: usize) -> usize {
        spec.widths[m]
    }
    fn pool_after_module(&self) -> bool {
        true
    }
    fn head(&self, spec: &ArchSpec, in_channels: usize) -> HeadPlan {
        HeadPlan::Mlp {
            in_channels,
            hidden: spec.head_width,
        }
    }
}

static FAMILIES: LazyLock<Registry<dyn Family>> = LazyLock::new(|| {
    Registry::<dyn Family>::new("architecture family")
        .with("resnet", || Arc::new(ResNet))
        .with_aliases("mobilenetv2", &["mobilenet", "mbv2"], || Arc::new(MobileNetV2))
        .with("vgg", || Arc::new(Vgg))
});

pub fn families() -> &'static Registry<dyn Family> {
    &FAMILIES
}

fn stem_plan(spec: &ArchSpec) -> StemPlan {
    let w = spec.stem_width;
    let (convs, max_pool) = match spec.stem {
        StemKind::Imagenet => (vec![ConvSpec::new("stem", 3, w, 7, 2).act(Activation::Relu)], true),
        StemKind::Cifar => (vec![ConvSpec::new("stem", 3, w, 3, 1).act(Activation::Relu)], false),
        StemKind::Mobilenet => (vec![ConvSpec::new("stem", 3, w, 3, 2).act(Activation::Relu6)], false),
        StemKind::None => (vec![], false),
    };
    let out_channels = if convs.is_empty() { 3 } else { w };
    StemPlan {
        convs,
        max_pool,
        out_channels,
    }
}

fn placement_wants_mod(p: &Placement, module: usize, index: usize) -> bool {
    match p {
        Placement::Alternating => index % 2 == 1,
        Placement::All => true,
        Placement::None => false,
        Placement::Mask(bits) => bits[module] && index % 2 == 1,
    }
}

/// Deterministic block list for a spec.
pub fn plan_architecture(spec: &ArchSpec) -> Result<BlockPlan> {
    spec.validate()?;
    let family = families().get(&spec.family)?;
    if !family.block_kinds().contains(&spec.block) {
        return Err(Error::config(format!(
            "{}: family {} does not support {} blocks",
            spec.name,
            family.name(),
            spec.block
        )));
    }
    let stem = stem_plan(spec);
    let mut cur = stem.out_channels;
    let mut blocks = Vec::new();
    for (m, &count) in spec.counts.iter().enumerate() {
        let out = family.module_out(spec, m);
        let t = spec.expansions.get(m).copied().unwrap_or(1);
        for j in 0..count {
            let stride = if j == 0 { spec.strides[m] } else { 1 };
            let preserving = stride == 1 && cur == out;
            let wanted = placement_wants_mod(&spec.placement, m, j);
            let is_mod = match spec.placement {
                Placement::All => wanted && preserving,
                _ => wanted,
            };
            if is_mod && !preserving {
                return Err(Error::config(format!(
                    "{}: block layer{}.{j} changes shape ({cur}->{out}, stride {stride}) and cannot be MoD",
                    spec.name,
                    m + 1
                )));
            }
            let k = is_mod.then(|| k_for(cur, spec.c));
            let widths = block_widths(spec.block, cur, spec.widths[m], out, t, k);
            blocks.push(BlockRecord {
                name: format!("layer{}.{j}", m + 1),
                module: m,
                index: j,
                kind: spec.block,
                is_mod,
                in_channels: cur,
                out_channels: out,
                stride,
                expansion: t,
                widths,
                k,
                pool_after: family.pool_after_module() && j + 1 == count,
            });
            cur = out;
        }
    }
    let head = family.head(spec, cur);
    Ok(BlockPlan {
        spec: spec.clone(),
        stem,
        blocks,
        head,
    })
}

/// Channel chain of a block; `k` selects the reduced MoD inner block.
fn block_widths(kind: BlockKind, cur: usize, mid: usize, out: usize, t: usize, k: Option<usize>) -> Vec<usize> {
    match (kind, k) {
        (BlockKind::Basic, None) => vec![cur, out, out],
        (BlockKind::Basic, Some(k)) => vec![k, k, k],
        (BlockKind::Bottleneck, None) => vec![cur, mid, out],
        (BlockKind::Bottleneck, Some(k)) => vec![k, (k / 4).max(1), k],
        (BlockKind::InvertedResidual, None) => vec![cur, cur * t, out],
        (BlockKind::InvertedResidual, Some(k)) => vec![k, k * t, k],
        (BlockKind::PlainConv, None) => vec![cur, out],
        (BlockKind::PlainConv, Some(k)) => vec![k, k],
    }
}

impl BlockRecord {
    /// A shape-preserving block of `channels` outside any network, MoD
    /// with `k = max(1, channels / c)` when `c` is given. Bottlenecks use
    /// the usual `channels / 4` mid width.
    pub fn standalone(name: &str, kind: BlockKind, channels: usize, c: Option<usize>, expansion: usize) -> Self {
        let k = c.map(|c| k_for(channels, c));
        BlockRecord {
            name: name.to_string(),
            module: 0,
            index: 0,
            kind,
            is_mod: k.is_some(),
            in_channels: channels,
            out_channels: channels,
            stride: 1,
            expansion,
            widths: block_widths(kind, channels, (channels / 4).max(1), channels, expansion, k),
            k,
            pool_after: false,
        }
    }
}

/// Convolutions of a block's processing stack, named under `prefix`
/// (the block name for standard blocks, `<block>.inner` for MoD).
pub fn stack_convs(rec: &BlockRecord, prefix: &str) -> Vec<ConvSpec> {
    let w = &rec.widths;
    let stride = if rec.is_mod { 1 } else { rec.stride };
    let n = |s: &str| format!("{prefix}.{s}");
    match rec.kind {
        BlockKind::Basic => vec![
            ConvSpec::new(n("conv1"), w[0], w[1], 3, stride).act(Activation::Relu),
            ConvSpec::new(n("conv2"), w[1], w[2], 3, 1),
        ],
        BlockKind::Bottleneck => vec![
            ConvSpec::new(n("conv1"), w[0], w[1], 1, 1).act(Activation::Relu),
            ConvSpec::new(n("conv2"), w[1], w[1], 3, stride).act(Activation::Relu),
            ConvSpec::new(n("conv3"), w[1], w[2], 1, 1),
        ],
        BlockKind::InvertedResidual => {
            let mut v = Vec::with_capacity(3);
            if rec.expansion != 1 {
                v.push(ConvSpec::new(n("expand"), w[0], w[1], 1, 1).act(Activation::Relu6));
            }
            v.push(
                ConvSpec::new(n("dw"), w[1], w[1], 3, stride)
                    .groups(w[1])
                    .act(Activation::Relu6),
            );
            v.push(ConvSpec::new(n("project"), w[1], w[2], 1, 1));
            v
        }
        BlockKind::PlainConv => vec![ConvSpec::new(n("conv"), w[0], w[1], 3, 1)
            .bias(true)
            .act(Activation::Relu)],
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shortcut {
    None,
    Identity,
    Projection(ConvSpec),
}

/// Residual path and post-sum activation of a standard block.
pub fn shortcut(rec: &BlockRecord) -> (Shortcut, Activation) {
    let preserving = rec.stride == 1 && rec.in_channels == rec.out_channels;
    match rec.kind {
        BlockKind::Basic | BlockKind::Bottleneck => {
            let sc = if preserving {
                Shortcut::Identity
            } else {
                Shortcut::Projection(ConvSpec::new(
                    format!("{}.downsample", rec.name),
                    rec.in_channels,
                    rec.out_channels,
                    1,
                    rec.stride,
                ))
            };
            (sc, Activation::Relu)
        }
        BlockKind::InvertedResidual if preserving => (Shortcut::Identity, Activation::None),
        _ => (Shortcut::None, Activation::None),
    }
}
