use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{self, Value};
use crate::error::{Error, Result};
use crate::mechanism::{fusions, routers, DEFAULT_RATIO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    Basic,
    Bottleneck,
    InvertedResidual,
    PlainConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StemKind {
    /// 7x7 stride-2 conv then 3x3 stride-2 max pool.
    Imagenet,
    /// 3x3 stride-1 conv, no pooling.
    Cifar,
    /// 3x3 stride-2 conv with ReLU6.
    Mobilenet,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Odd in-module positions are MoD; module-initial blocks stay standard.
    Alternating,
    /// Every shape-preserving block is MoD.
    All,
    None,
    /// Alternating placement restricted to modules whose flag is set.
    Mask(Vec<bool>),
}

macro_rules! str_enum {
    ($t:ty, $kind:literal, [$($s:literal => $v:expr),+ $(,)?]) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(Error::config(format!(
                        "unknown {} '{}' (valid: {})", $kind, other, [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

str_enum!(BlockKind, "block type", [
    "basic" => BlockKind::Basic,
    "bottleneck" => BlockKind::Bottleneck,
    "inverted-residual" => BlockKind::InvertedResidual,
    "plain-conv" => BlockKind::PlainConv,
]);

str_enum!(StemKind, "stem", [
    "imagenet" => StemKind::Imagenet,
    "cifar" => StemKind::Cifar,
    "mobilenet" => StemKind::Mobilenet,
    "none" => StemKind::None,
]);

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Basic => "basic",
            BlockKind::Bottleneck => "bottleneck",
            BlockKind::InvertedResidual => "inverted-residual",
            BlockKind::PlainConv => "plain-conv",
        })
    }
}

impl fmt::Display for StemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StemKind::Imagenet => "imagenet",
            StemKind::Cifar => "cifar",
            StemKind::Mobilenet => "mobilenet",
            StemKind::None => "none",
        })
    }
}

impl FromStr for Placement {
    type Err = Error;

    /// `alternating`, `all`, `none`, or `mask:0110` (one digit per module).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(bits) = s.strip_prefix("mask:") {
            return bits
                .chars()
                .map(|ch| match ch {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(Error::config(format!("placement mask '{bits}' must be 0/1 digits"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Placement::Mask);
        }
        match s.as_str() {
            "alternating" => Ok(Placement::Alternating),
            "all" => Ok(Placement::All),
            "none" => Ok(Placement::None),
            other => Err(Error::config(format!(
                "unknown placement '{other}' (valid: alternating, all, none, mask:<bits>)"
            ))),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::Alternating => f.write_str("alternating"),
            Placement::All => f.write_str("all"),
            Placement::None => f.write_str("none"),
            Placement::Mask(bits) => {
                f.write_str("mask:")?;
                bits.iter().try_for_each(|&b| f.write_str(if b { "1" } else { "0" }))
            }
        }
    }
}

/// Declarative description of a network.
///
/// `widths` are per-module base widths: bottleneck planes for ResNet (the
/// module outputs `4x` that), output channels for MobileNetV2 and VGG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub family: String,
    pub block: BlockKind,
    pub counts: Vec<usize>,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    /// Inverted-residual expansion factor per module.
    pub expansions: Vec<usize>,
    pub stem: StemKind,
    pub stem_width: usize,
    /// MobileNetV2 final 1x1 width or VGG classifier hidden width.
    pub head_width: usize,
    pub classes: usize,
    pub input_size: usize,
    pub c: usize,
    pub ratio: usize,
    pub placement: Placement,
    pub fusion: String,
    pub selector: String,
}

/// Documented config keys accepted by [`ArchSpec::set`].
pub const ARCH_KEYS: &[(&str, &str)] = &[
    ("arch.base", "catalog model to start from"),
    ("arch.name", "display name"),
    ("arch.family", "resnet | mobilenetv2 | vgg"),
    ("arch.block", "basic | bottleneck | inverted-residual | plain-conv"),
    ("arch.counts", "blocks per module, e.g. [3, 4, 6, 3]"),
    ("arch.widths", "per-module base widths"),
    ("arch.strides", "per-module first-block strides"),
    ("arch.expansions", "per-module expansion factors (inverted residual)"),
    ("arch.stem", "imagenet | cifar | mobilenet | none"),
    ("arch.stem_width", "stem output channels"),
    ("arch.head_width", "final 1x1 width (MobileNetV2) or classifier hidden width (VGG)"),
    ("arch.classes", "number of output classes"),
    ("arch.input", "native input resolution"),
    ("mod.c", "channel parameter c (k = max(1, C / c))"),
    ("mod.r", "selector reduction ratio"),
    ("mod.placement", "alternating | all | none | mask:<bits>"),
    ("mod.fusion", "first-k | last-k | original-position"),
    ("mod.selector", "learned | randomized"),
];

impl ArchSpec {
    /// A ResNet-style spec with MoD disabled; callers adjust fields.
    pub fn resnet(name: &str, block: BlockKind, counts: &[usize]) -> Self {
        ArchSpec {
            name: name.to_string(),
            family: "resnet".into(),
            block,
            counts: counts.to_vec(),
            widths: vec![64, 128, 256, 512],
            strides: vec![1, 2, 2, 2],
            expansions: vec![],
            stem: StemKind::Imagenet,
            stem_width: 64,
            head_width: 0,
            classes: 1000,
            input_size: 224,
            c: 64,
            ratio: DEFAULT_RATIO,
            placement: Placement::None,
            fusion: "first-k".into(),
            selector: "learned".into(),
        }
    }

    pub fn with_mod(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn is_mod(&self) -> bool {
        match &self.placement {
            Placement::None => false,
            Placement::Mask(bits) => bits.iter().any(|&b| b),
            _ => true,
        }
    }

    /// Applies one dotted config key. `arch.base` is handled by the loader.
    pub fn set(&mut self, key: &str, value: &Value) -> Result<()> {
        match key {
            "arch.name" => self.name = config::as_string(key, value)?,
            "arch.family" => self.family = config::as_string(key, value)?,
            "arch.block" => self.block = config::as_string(key, value)?.parse()?,
            "arch.counts" => self.counts = config::as_usize_list(key, value)?,
            "arch.widths" => self.widths = config::as_usize_list(key, value)?,
            "arch.strides" => self.strides = config::as_usize_list(key, value)?,
            "arch.expansions" => self.expansions = config::as_usize_list(key, value)?,
            "arch.stem" => self.stem = config::as_string(key, value)?.parse()?,
            "arch.stem_width" => self.stem_width = config::as_usize(key, value)?,
            "arch.head_width" => self.head_width = config::as_usize(key, value)?,
            "arch.classes" => self.classes = config::as_usize(key, value)?,
            "arch.input" => self.input_size = config::as_usize(key, value)?,
            "mod.c" => self.c = config::as_usize(key, value)?,
            "mod.r" => self.ratio = config::as_usize(key, value)?,
            "mod.placement" => self.placement = config::as_string(key, value)?.parse()?,
            "mod.fusion" => self.fusion = fusions().get(&config::as_string(key, value)?)?.name().into(),
            "mod.selector" => self.selector = routers().get(&config::as_string(key, value)?)?.name().into(),
            _ => return Err(config::unknown_key(key, ARCH_KEYS.iter().map(|k| k.0))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("{}: {msg}", self.name)));
        if self.counts.is_empty() || self.counts.contains(&0) {
            return bad(format!("block counts must be non-empty and positive, got {:?}", self.counts));
        }
        for (what, len) in [("widths", self.widths.len()), ("strides", self.strides.len())] {
            if len != self.counts.len() {
                return bad(format!("{what} has {len} entries for {} modules", self.counts.len()));
            }
        }
        if self.block == BlockKind::InvertedResidual && self.expansions.len() != self.counts.len() {
            return bad(format!(
                "expansions has {} entries for {} modules",
                self.expansions.len(),
                self.counts.len()
            ));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) || self.expansions.contains(&0) {
            return bad("widths, strides and expansions must be >= 1".into());
        }
        if self.c == 0 {
            return bad("channel parameter c must be >= 1".into());
        }
        if self.ratio == 0 {
            return bad("selector ratio r must be >= 1".into());
        }
        if self.classes == 0 || self.input_size == 0 {
            return bad("classes and input size must be >= 1".into());
        }
        if let Placement::Mask(bits) = &self.placement {
            if bits.len() != self.counts.len() {
                return bad(format!("placement mask has {} bits for {} modules", bits.len(), self.counts.len()));
            }
        }
        fusions().get(&self.fusion)?;
        routers().get(&self.selector)?;
        Ok(())
    }
}
