//! Turning a model argument plus config into an architecture and weights.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use modcnn::arch::{build_model, catalog, plan_architecture, weights, ArchSpec, BlockPlan, Network, StemKind};
use modcnn::config::{arch_keys, ConfigEntries};
use modcnn::train::TRAIN_KEYS;
use serde::{Deserialize, Serialize};

use crate::{Global, ModelArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// A trained architecture and the weight file beside it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ArchSpec,
    /// Relative to the checkpoint's directory.
    pub weights: PathBuf,
    pub epochs: usize,
    pub eval_acc: Option<f64>,
}

/// `--config` then `--set` entries, with unknown keys rejected.
pub fn entries(g: &Global) -> Result<ConfigEntries> {
    let mut e = match &g.config {
        Some(p) => ConfigEntries::from_file(p)?,
        None => ConfigEntries::default(),
    };
    for kv in &g.overrides {
        e.push_override(kv)?;
    }
    let valid: Vec<&str> = arch_keys().chain(TRAIN_KEYS.iter().map(|k| k.0)).collect();
    e.check_keys(&valid)?;
    Ok(e)
}

pub struct Resolved {
    pub spec: ArchSpec,
    /// Weights to load after building, from a checkpoint.
    pub weights: Option<PathBuf>,
}

fn cifar_variant(name: &str) -> Option<String> {
    if name.ends_with("-cifar") {
        return None;
    }
    let candidate = format!("{name}-cifar");
    catalog::registry().contains(&candidate).then_some(candidate)
}

/// Resolves a catalog name, architecture file or checkpoint, then applies
/// config entries and the `--res` / `--stem` flags.
pub fn resolve(arg: &ModelArgs, entries: &ConfigEntries) -> Result<Resolved> {
    let path = Path::new(&arg.model);
    let mut entries = entries.clone();
    let mut weights = None;
    let mut spec = if path.is_file() && arg.model.ends_with(".json") {
        let ck = read_checkpoint(path)?;
        weights = Some(path.parent().unwrap_or(Path::new(".")).join(&ck.weights));
        let mut spec = ck.spec;
        for (k, v) in entries.section("arch").chain(entries.section("mod")) {
            spec.set(k, v)?;
        }
        spec
    } else {
        if path.is_file() {
            let file = ConfigEntries::from_file(path)?;
            let mut merged = file;
            merged.entries.extend(entries.entries.drain(..));
            entries = merged;
        } else {
            let mut name = arg.model.clone();
            if arg.stem.as_deref() == Some("cifar") {
                if let Some(v) = cifar_variant(&name) {
                    name = v;
                }
            }
            entries.set("arch.base", name.into());
        }
        entries.arch_spec(None)?
    };
    if let Some(stem) = &arg.stem {
        let stem: StemKind = stem.parse()?;
        if spec.stem != stem {
            spec.stem = stem;
            if stem == StemKind::Cifar {
                spec.classes = 10;
                spec.input_size = 32;
            }
        }
    }
    if let Some(res) = arg.res {
        spec.input_size = res;
    }
    spec.validate()?;
    Ok(Resolved { spec, weights })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
}

pub fn build(resolved: &Resolved, seed: u64) -> Result<(BlockPlan, Network<f32>)> {
    let plan = plan_architecture(&resolved.spec)?;
    let mut net = build_model::<f32>(&plan, seed)?;
    if let Some(w) = &resolved.weights {
        let file = std::fs::File::open(w).with_context(|| format!("opening weights {}", w.display()))?;
        let stored = weights::read(std::io::BufReader::new(file))?;
        weights::load_into(&mut net, &stored)?;
    }
    Ok((plan, net))
}
