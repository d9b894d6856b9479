//! Dataset selection for training and analysis commands.

use std::path::Path;

use anyhow::{bail, Result};
use modcnn::arch::ArchSpec;
use modcnn::data::{self, cifar, Dataset, Split};

use crate::{DataArgs, Global};

pub const SOURCES: &[&str] = &["cifar", "cifar-like", "synth", "two-class"];

const DEFAULT_SYNTH_TRAIN: usize = 2000;
const DEFAULT_SYNTH_TEST: usize = 1000;

fn subset(d: Dataset, n: Option<usize>) -> Dataset {
    match n {
        Some(n) if n < d.len() && n % d.classes == 0 => d.balanced(n / d.classes),
        Some(n) => d.take(n),
        None => d,
    }
}

/// Train and evaluation sets for `spec`. Generated sources are written
/// under `scratch` when they go through the binary loader.
pub fn load(args: &DataArgs, g: &Global, spec: &ArchSpec, scratch: &Path) -> Result<(Dataset, Dataset)> {
    let (tr, te) = match args.data.as_str() {
        "cifar" => {
            let Some(root) = cifar::resolve_root(g.data_dir.as_deref()) else {
                bail!(modcnn::Error::Dataset(format!(
                    "no CIFAR-10 directory: pass --data-dir or set {}",
                    cifar::DATA_ENV
                )));
            };
            (data::load_cifar10(&root, Split::Train)?, data::load_cifar10(&root, Split::Test)?)
        }
        "cifar-like" => {
            let n = args.train_size.unwrap_or(DEFAULT_SYNTH_TRAIN);
            let m = args.test_size.unwrap_or(DEFAULT_SYNTH_TEST);
            std::fs::create_dir_all(scratch)?;
            data::cifar_like(scratch, n, m, g.seed)?
        }
        "synth" => {
            let n = args.train_size.unwrap_or(DEFAULT_SYNTH_TRAIN);
            let m = args.test_size.unwrap_or(DEFAULT_SYNTH_TEST);
            let hw = spec.input_size;
            (
                data::synth_classification_sized(n, spec.classes, hw, g.seed)?,
                data::synth_classification_sized(m, spec.classes, hw, g.seed.wrapping_add(1))?,
            )
        }
        "two-class" => {
            let n = args.train_size.unwrap_or(512);
            let m = args.test_size.unwrap_or(256);
            let hw = spec.input_size;
            (
                data::channel_signal_task(n, hw, g.seed)?,
                data::channel_signal_task(m, hw, g.seed.wrapping_add(1))?,
            )
        }
        other => bail!(modcnn::Error::Config(format!(
            "unknown data source '{other}' (valid: {})",
            SOURCES.join(", ")
        ))),
    };
    if tr.classes != spec.classes {
        bail!(modcnn::Error::Config(format!(
            "{} has {} classes but the model has {}",
            tr.name, tr.classes, spec.classes
        )));
    }
    if tr.sample_shape[1] != spec.input_size {
        bail!(modcnn::Error::Config(format!(
            "{} images are {}px but the model expects {}px",
            tr.name, tr.sample_shape[1], spec.input_size
        )));
    }
    Ok((subset(tr, args.train_size), subset(te, args.test_size)))
}
