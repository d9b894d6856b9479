//! Built-in architectures and their published cost figures.

use std::sync::{Arc, LazyLock};

use super::spec::{ArchSpec, BlockKind, Placement, StemKind};
use crate::error::Result;
use crate::registry::Registry;

fn resnet(name: &str, block: BlockKind, counts: &[usize], placement: Placement) -> ArchSpec {
    ArchSpec::resnet(name, block, counts).with_mod(placement)
}

fn cifar(mut s: ArchSpec) -> ArchSpec {
    s.stem = StemKind::Cifar;
    s.classes = 10;
    s.input_size = 32;
    s
}

fn with_fusion(mut s: ArchSpec, fusion: &str) -> ArchSpec {
    s.fusion = fusion.into();
    s
}

const MBV2_STD: [[usize; 4]; 7] = [
    [1, 16, 1, 1],
    [6, 24, 2, 2],
    [6, 32, 3, 2],
    [6, 64, 4, 2],
    [6, 96, 3, 1],
    [6, 160, 3, 2],
    [6, 320, 1, 1],
];

const MBV2_L: [[usize; 4]; 7] = [
    [1, 16, 1, 1],
    [6, 32, 2, 2],
    [6, 64, 3, 2],
    [6, 96, 4, 2],
    [6, 128, 3, 1],
    [6, 160, 3, 2],
    [6, 320, 1, 1],
];

/// `rows` are `[t, channels, n, stride]`.
fn mobilenet(name: &str, rows: &[[usize; 4]], placement: Placement) -> ArchSpec {
    ArchSpec {
        name: name.into(),
        family: "mobilenetv2".into(),
        block: BlockKind::InvertedResidual,
        counts: rows.iter().map(|r| r[2]).collect(),
        widths: rows.iter().map(|r| r[1]).collect(),
        strides: rows.iter().map(|r| r[3]).collect(),
        expansions: rows.iter().map(|r| r[0]).collect(),
        stem: StemKind::Mobilenet,
        stem_width: 32,
        head_width: 1280,
        c: 16,
        ..ArchSpec::resnet(name, BlockKind::Basic, &[1])
    }
    .with_mod(placement)
}

fn vgg(name: &str, counts: &[usize], placement: Placement) -> ArchSpec {
    ArchSpec {
        name: name.into(),
        family: "vgg".into(),
        block: BlockKind::PlainConv,
        counts: counts.to_vec(),
        widths: vec![64, 128, 256, 512, 512],
        strides: vec![1; 5],
        stem: StemKind::None,
        head_width: 512,
        classes: 10,
        input_size: 32,
        ..ArchSpec::resnet(name, BlockKind::Basic, &[1])
    }
    .with_mod(placement)
}

fn build_catalog() -> Vec<ArchSpec> {
    use BlockKind::{Basic, Bottleneck};
    use Placement::{Alternating as Alt, None as Std};
    let mut v = vec![
        resnet("resnet18", Basic, &[2, 2, 2, 2], Std),
        resnet("resnet34", Basic, &[3, 4, 6, 3], Std),
        resnet("resnet50", Bottleneck, &[3, 4, 6, 3], Std),
        resnet("resnet101", Bottleneck, &[3, 4, 23, 3], Std),
        resnet("resnet152", Bottleneck, &[3, 8, 36, 3], Std),
        resnet("resnet18-mod", Basic, &[2, 2, 2, 2], Alt),
        resnet("resnet26-mod", Basic, &[2, 2, 3, 4], Alt),
        resnet("resnet34-mod", Basic, &[3, 4, 6, 3], Alt),
        resnet("resnet42-mod", Basic, &[3, 3, 6, 6], Alt),
        resnet("resnet50-mod", Bottleneck, &[3, 4, 6, 3], Alt),
        resnet("resnet75-mod", Bottleneck, &[3, 4, 14, 3], Alt),
        resnet("resnet86-mod", Bottleneck, &[3, 4, 18, 3], Alt),
        resnet("resnet101-mod", Bottleneck, &[3, 4, 23, 3], Alt),
        resnet("resnet152-mod", Bottleneck, &[3, 8, 36, 3], Alt),
        mobilenet("mobilenetv2", &MBV2_STD, Std),
        mobilenet("mobilenetv2-mod", &MBV2_STD, Alt),
        mobilenet("mobilenetv2-mod-l", &MBV2_L, Alt),
        vgg("vgg16-bn", &[2, 2, 3, 3, 3], Std),
        vgg("vgg16-bn-mod", &[2, 2, 3, 3, 3], Alt),
        vgg("vgg19-bn", &[2, 2, 4, 4, 4], Std),
        vgg("vgg19-bn-mod", &[2, 2, 4, 4, 4], Alt),
    ];
    let mut rand = resnet("resnet50-mod-rand", Bottleneck, &[3, 4, 6, 3], Alt);
    rand.selector = "randomized".into();
    v.push(rand);
    for (base, counts) in [("resnet50", [3, 4, 6, 3]), ("resnet75", [3, 4, 14, 3]), ("resnet86", [3, 4, 18, 3])] {
        v.push(with_fusion(
            resnet(&format!("{base}-mod-lk"), Bottleneck, &counts, Alt),
            "last-k",
        ));
    }
    for (base, block, counts) in [
        ("resnet18", Basic, [2, 2, 2, 2]),
        ("resnet34", Basic, [3, 4, 6, 3]),
        ("resnet50", Bottleneck, [3, 4, 6, 3]),
    ] {
        v.push(cifar(resnet(&format!("{base}-cifar"), block, &counts, Std)));
        v.push(cifar(resnet(&format!("{base}-mod-cifar"), block, &counts, Alt)));
    }
    v
}

static CATALOG: LazyLock<Vec<ArchSpec>> = LazyLock::new(build_catalog);

static REGISTRY: LazyLock<Registry<ArchSpec>> = LazyLock::new(|| {
    let mut reg = Registry::new("model");
    for spec in CATALOG.iter() {
        let shared = Arc::new(spec.clone());
        reg.register(&spec.name, &[], move || shared.clone());
    }
    reg
});

/// Every catalog entry, in declaration order.
pub fn builtin_specs() -> &'static [ArchSpec] {
    &CATALOG
}

pub fn registry() -> &'static Registry<ArchSpec> {
    &REGISTRY
}

pub fn get(name: &str) -> Result<ArchSpec> {
    Ok(registry().get(name)?.as_ref().clone())
}

/// A published cost figure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub model: &'static str,
    pub input: usize,
    /// Millions of multiply-accumulates.
    pub mmac: f64,
    /// Millions of parameters.
    pub params_m: f64,
}

const fn r(model: &'static str, input: usize, mmac: f64, params_m: f64) -> Reference {
    Reference {
        model,
        input,
        mmac,
        params_m,
    }
}

pub const REFERENCES: &[Reference] = &[
    r("resnet152-mod", 224, 6340.0, 37.46),
    r("resnet101", 224, 7800.0, 44.55),
    r("resnet101-mod", 224, 4580.0, 29.21),
    r("resnet86-mod", 224, 3920.0, 25.60),
    r("resnet75-mod", 224, 3480.0, 23.10),
    r("resnet50", 224, 4130.0, 25.56),
    r("resnet50-mod", 224, 2600.0, 18.11),
    r("resnet50-mod-rand", 224, 2590.0, 17.11),
    r("mobilenetv2", 224, 320.36, 3.5),
    r("mobilenetv2-mod-l", 224, 344.76, 3.34),
    r("mobilenetv2-mod", 224, 220.56, 2.94),
    r("resnet34", 224, 3680.0, 21.29),
    r("resnet42-mod", 224, 2290.0, 17.72),
    r("resnet34-mod", 224, 2060.0, 12.93),
    r("resnet18", 224, 1820.0, 11.18),
    r("resnet26-mod", 224, 1360.0, 11.4),
    r("resnet18-mod", 224, 890.0, 5.46),
    r("resnet86-mod-lk", 224, 3920.0, 25.60),
    r("resnet75-mod-lk", 224, 3480.0, 23.10),
    r("resnet50-mod-lk", 224, 2600.0, 18.11),
    r("resnet18-cifar", 32, 557.0, 11.17),
    r("resnet18-mod-cifar", 32, 255.0, 4.95),
    r("resnet34-cifar", 32, 1160.0, 21.28),
    r("resnet34-mod-cifar", 32, 633.0, 12.42),
    r("resnet50-cifar", 32, 1310.0, 23.52),
    r("resnet50-mod-cifar", 32, 808.0, 16.07),
    r("vgg16-bn", 32, 315.0, 15.25),
    r("vgg16-bn-mod", 32, 155.0, 9.83),
    r("vgg19-bn", 32, 400.0, 20.57),
    r("vgg19-bn-mod", 32, 155.0, 9.91),
];

pub fn reference(model: &str, input: usize) -> Option<&'static Reference> {
    REFERENCES
        .iter()
        .find(|r| r.model.eq_ignore_ascii_case(model) && r.input == input)
}
