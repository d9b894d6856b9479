use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use modcnn::arch::{catalog, families, standalone_block, weights, ArchSpec, BlockKind, BlockRecord};
use modcnn::bench::{
    bench, run_ablation, selection_frequencies, selection_frequencies_by_class, uniform_band_summary,
    write_ablation_csv, write_bench_csv, write_histograms_csv, AblationBudget, AblationGrid, SelectionHistogram,
};
use modcnn::config::ConfigEntries;
use modcnn::cost::{conventions, count_costs};
use modcnn::mechanism::{fusions, routers};
use modcnn::train::{gradcheck, jitter_params, train_with, GradcheckOptions, TrainConfig};
use serde_json::json;

use crate::manifest::Manifest;
use crate::model::{self, Checkpoint, Resolved, CHECKPOINT_FILE};
use crate::{data, Cli, Command, DataArgs, Global, ModelArgs};

const DEFAULT_OUT: &str = "modcnn-out";

/// A check that ran to completion and did not pass.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let pool = modcnn::bench::thread_pool(g.threads)?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let entries = model::entries(g)?;
    match &cli.command {
        Command::List => list(),
        Command::Inspect { model, save } => inspect(g, &entries, model, *save),
        Command::Count { model, convention, csv } => count(g, &entries, model, convention, *csv),
        Command::Bench {
            a,
            b,
            res,
            stem,
            batch,
            warmup,
            iters,
        } => {
            let args = |m: &String| ModelArgs {
                model: m.clone(),
                res: *res,
                stem: stem.clone(),
            };
            let b = b.as_ref().map(args);
            bench_cmd(g, &entries, &args(a), b.as_ref(), *batch, *warmup, *iters)
        }
        Command::Train { model, data } => train_cmd(g, &entries, model, data),
        Command::Analyze {
            model,
            data,
            layer,
            by_class,
            batch,
        } => analyze(g, &entries, model, data, layer.as_deref(), *by_class, *batch),
        Command::Ablate {
            model,
            data,
            grid,
            bench_iters,
        } => ablate(g, &entries, model, data, grid, *bench_iters),
        Command::Gradcheck {
            block,
            channels,
            c,
            hw,
            batch,
            tolerance,
            jitter,
        } => gradcheck_cmd(g, block, *channels, *c, *hw, *batch, *tolerance, *jitter),
    }
}

fn out_dir(g: &Global, required: bool) -> Result<Option<PathBuf>> {
    let dir = match (&g.out, required) {
        (Some(d), _) => d.clone(),
        (None, true) => PathBuf::from(DEFAULT_OUT),
        (None, false) => return Ok(None),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(Some(dir))
}

fn create(dir: &Path, name: &str, manifest: &mut Manifest) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    manifest.outputs.push(name.to_string());
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect()
}

fn list() -> Result<()> {
    println!("models:");
    for s in catalog::builtin_specs() {
        let reference = catalog::reference(&s.name, s.input_size)
            .map(|r| format!("  reference {:.2} MMAC / {:.2} M", r.mmac, r.params_m))
            .unwrap_or_default();
        println!("  {:<20} {:>4}px {:>4} classes{reference}", s.name, s.input_size, s.classes);
    }
    println!("families: {}", families().names().join(", "));
    println!("fusions: {}", fusions().names().join(", "));
    println!("selectors: {}", routers().names().join(", "));
    println!("MAC conventions: {}", conventions().names().join(", "));
    println!("data sources: {}", data::SOURCES.join(", "));
    Ok(())
}

fn inspect(g: &Global, entries: &ConfigEntries, arg: &ModelArgs, save: bool) -> Result<()> {
    let r = model::resolve(arg, entries)?;
    let (plan, mut net) = model::build(&r, g.seed)?;
    let s = &plan.spec;
    println!(
        "{}: family {}, block {}, stem {}, {} classes, {}px, depth {}",
        s.name,
        s.family,
        s.block,
        s.stem,
        s.classes,
        s.input_size,
        plan.depth()
    );
    if s.is_mod() {
        println!(
            "MoD: c {}, r {}, fusion {}, selector {}, {} of {} blocks",
            s.c,
            s.ratio,
            s.fusion,
            s.selector,
            plan.mod_blocks().count(),
            plan.blocks.len()
        );
    }
    for b in &plan.blocks {
        let k = b.k.map(|k| format!("  MoD k={k}")).unwrap_or_default();
        println!(
            "  {:<10} {:<18} {:>4} -> {:<4} stride {}{k}",
            b.name,
            b.kind.to_string(),
            b.in_channels,
            b.out_channels,
            b.stride
        );
    }
    println!("parameters: {}", modcnn::nn::param_count(&mut net));
    if save {
        let dir = out_dir(g, true)?.expect("required");
        let mut m = Manifest::new("inspect", g, entries);
        let mut w = create(&dir, "weights.bin", &mut m)?;
        weights::save(&mut net, &mut w)?;
        w.flush()?;
        m.details = json!({ "spec": s });
        m.write(&dir)?;
    }
    Ok(())
}

fn count(g: &Global, entries: &ConfigEntries, arg: &ModelArgs, convention: &str, csv: bool) -> Result<()> {
    let r = model::resolve(arg, entries)?;
    let plan = modcnn::arch::plan_architecture(&r.spec)?;
    let conv = conventions().get(convention)?;
    let rep = count_costs(&plan, r.spec.input_size, conv.as_ref())?;
    if csv {
        rep.write_csv(std::io::stdout().lock())?;
    }
    println!(
        "{} @ {}px ({}): {:.2} GMAC ({:.2} MMAC) / {:.2} M params",
        rep.model,
        rep.input_size,
        rep.convention,
        rep.gmac(),
        rep.mmac(),
        rep.params_m()
    );
    if rep.selector_params() > 0 {
        println!(
            "  selectors: {:.2} MMAC / {:.3} M params",
            rep.selector_macs() as f64 / 1e6,
            rep.selector_params() as f64 / 1e6
        );
    }
    if let Some(want) = catalog::reference(&rep.model, rep.input_size) {
        println!(
            "  reference: {:.2} GMAC / {:.2} M params; delta {:+.2}% MACs, {:+.2}% params",
            want.mmac / 1e3,
            want.params_m,
            100.0 * (rep.mmac() / want.mmac - 1.0),
            100.0 * (rep.params_m() / want.params_m - 1.0)
        );
    }
    if let Some(dir) = out_dir(g, false)? {
        let mut m = Manifest::new("count", g, entries);
        let mut w = create(&dir, &format!("count_{}.csv", file_safe(&rep.model)), &mut m)?;
        rep.write_csv(&mut w)?;
        w.flush()?;
        m.details = json!({ "spec": r.spec, "convention": rep.convention, "total_macs": rep.total_macs, "total_params": rep.total_params });
        m.write(&dir)?;
    }
    Ok(())
}

fn bench_cmd(
    g: &Global,
    entries: &ConfigEntries,
    a: &ModelArgs,
    b: Option<&ModelArgs>,
    batch: usize,
    warmup: usize,
    iters: usize,
) -> Result<()> {
    println!(
        "# bench batch={batch} warmup={warmup} iters={iters} threads={} seed={} res={} stem={}",
        g.threads,
        g.seed,
        a.res.map_or("native".to_string(), |r| r.to_string()),
        a.stem.as_deref().unwrap_or("native")
    );
    let mut reports = Vec::new();
    let mut specs = Vec::new();
    for arg in std::iter::once(a).chain(b) {
        let r: Resolved = model::resolve(arg, entries)?;
        let (_, mut net) = model::build(&r, g.seed)?;
        let shape = net.input_shape(batch);
        let rep = bench(&mut net, &shape, warmup, iters, g.threads)?;
        let rep = match reports.first() {
            Some(base) => rep.against(base),
            None => rep,
        };
        println!(
            "{:<24} median {:>9.3} ms  mean {:>9.3} ms  p95 {:>9.3} ms{}",
            rep.model,
            rep.median_ms,
            rep.mean_ms,
            rep.p95_ms,
            rep.speedup.map(|s| format!("  speedup {s:.3}x")).unwrap_or_default()
        );
        specs.push(r.spec);
        reports.push(rep);
    }
    if let Some(dir) = out_dir(g, false)? {
        let mut m = Manifest::new("bench", g, entries);
        let mut w = create(&dir, "bench.csv", &mut m)?;
        write_bench_csv(&reports, &mut w)?;
        w.flush()?;
        m.details = json!({ "specs": specs, "batch": batch, "warmup": warmup, "iters": iters, "reports": reports });
        m.write(&dir)?;
    }
    Ok(())
}

fn train_config(g: &Global, entries: &ConfigEntries) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::from_entries(entries)?;
    if entries.get("train.seed").is_none() {
        cfg.seed = g.seed;
    }
    Ok(cfg)
}

fn train_cmd(g: &Global, entries: &ConfigEntries, arg: &ModelArgs, data_args: &DataArgs) -> Result<()> {
    let dir = out_dir(g, true)?.expect("required");
    let r = model::resolve(arg, entries)?;
    let cfg = train_config(g, entries)?;
    let (tr, te) = data::load(data_args, g, &r.spec, &dir.join("data"))?;
    let (_, mut net) = model::build(&r, g.seed)?;
    println!(
        "training {} on {} ({} train / {} eval), {} epochs, batch {}, lr {}",
        r.spec.name,
        tr.name,
        tr.len(),
        te.len(),
        cfg.epochs,
        cfg.batch_size,
        cfg.lr
    );
    let mut m = Manifest::new("train", g, entries);
    let out = train_with(&mut net, r.spec.classes, &tr, Some(&te), &cfg, &mut |row| {
        println!(
            "epoch {:>3}  loss {:.4}  train acc {:.4}  eval acc {:.4}  lr {:.5}  {:.1}s",
            row.epoch,
            row.train_loss,
            row.train_acc,
            row.eval_acc.unwrap_or(f64::NAN),
            row.lr,
            row.wall_s
        );
    })?;
    let mut w = create(&dir, "train_log.csv", &mut m)?;
    out.log.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir, "weights.bin", &mut m)?;
    weights::save(&mut net, &mut w)?;
    w.flush()?;
    let ck = Checkpoint {
        spec: r.spec.clone(),
        weights: PathBuf::from("weights.bin"),
        epochs: cfg.epochs,
        eval_acc: out.log.final_eval(),
    };
    let mut w = create(&dir, CHECKPOINT_FILE, &mut m)?;
    serde_json::to_writer_pretty(&mut w, &ck)?;
    w.flush()?;
    m.details = json!({ "spec": r.spec, "train": cfg, "data": data_args.data, "best": out.best });
    m.write(&dir)?;
    if let Some(acc) = out.log.final_eval() {
        println!("final eval accuracy {acc:.4}");
    }
    Ok(())
}

fn summarize(hists: &[SelectionHistogram]) {
    for h in hists {
        let top: Vec<String> = h
            .ranking()
            .iter()
            .take(5)
            .map(|&c| format!("{c} ({:.2}%)", h.percentages()[c]))
            .collect();
        println!(
            "  {:<10} C={:<4} k={:<4} samples {}  top: {}",
            h.layer,
            h.channels,
            h.k,
            h.samples,
            top.join(", ")
        );
    }
    let s = uniform_band_summary(hists, 3.0);
    println!(
        "  uniform 3-sigma band: {} of {} channels outside (chance allows {:.1}), max |z| {:.2}",
        s.outside, s.channels, s.allowed_outside, s.max_z
    );
}

fn write_hists(dir: &Path, prefix: &str, hists: &[SelectionHistogram], m: &mut Manifest) -> Result<()> {
    for h in hists {
        h.check_invariants()?;
        let mut w = create(dir, &format!("{prefix}{}.csv", file_safe(&h.layer)), m)?;
        write_histograms_csv(std::slice::from_ref(h), &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn analyze(
    g: &Global,
    entries: &ConfigEntries,
    arg: &ModelArgs,
    data_args: &DataArgs,
    layer: Option<&str>,
    by_class: bool,
    batch: usize,
) -> Result<()> {
    let dir = out_dir(g, true)?.expect("required");
    let r = model::resolve(arg, entries)?;
    let (_, te) = data::load(data_args, g, &r.spec, &dir.join("data"))?;
    let (_, mut net) = model::build(&r, g.seed)?;
    let mut m = Manifest::new("analyze", g, entries);
    println!("selection frequencies of {} on {} ({} samples)", r.spec.name, te.name, te.len());
    if by_class {
        for (c, hists) in selection_frequencies_by_class(&mut net, &te, layer, batch, g.seed)? {
            println!("class {c}:");
            summarize(&hists);
            write_hists(&dir, &format!("hist_class{c}_"), &hists, &mut m)?;
        }
    } else {
        let hists = selection_frequencies(&mut net, &te, layer, batch, g.seed)?;
        summarize(&hists);
        write_hists(&dir, "hist_", &hists, &mut m)?;
    }
    m.details = json!({ "spec": r.spec, "data": data_args.data, "samples": te.len(), "layer": layer, "by_class": by_class });
    m.write(&dir)?;
    Ok(())
}

fn ablate(
    g: &Global,
    entries: &ConfigEntries,
    arg: &ModelArgs,
    data_args: &DataArgs,
    grid: &[String],
    bench_iters: usize,
) -> Result<()> {
    let dir = out_dir(g, true)?.expect("required");
    let r = model::resolve(arg, entries)?;
    let grid = AblationGrid::parse(grid)?;
    let (tr, te) = data::load(data_args, g, &r.spec, &dir.join("data"))?;
    let budget = AblationBudget {
        train: train_config(g, entries)?,
        bench_iters,
        threads: g.threads,
    };
    let mut grid = grid;
    if grid.seeds.is_empty() {
        grid.seeds = vec![g.seed];
    }
    let rows = run_ablation(&grid, &r.spec, &tr, &te, &budget, &mut |row| {
        println!(
            "{:<56} acc {:.4}  {:.2} MMAC  {:.3} M params{}",
            row.config(),
            row.acc,
            row.macs as f64 / 1e6,
            row.params as f64 / 1e6,
            row.median_ms.map(|t| format!("  {t:.3} ms")).unwrap_or_default()
        );
    })?;
    let mut m = Manifest::new("ablate", g, entries);
    let mut w = create(&dir, "ablation.csv", &mut m)?;
    write_ablation_csv(&rows, &mut w)?;
    w.flush()?;
    m.details = json!({ "spec": r.spec, "budget": budget, "data": data_args.data, "points": rows.len() });
    m.write(&dir)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gradcheck_cmd(
    g: &Global,
    block: &str,
    channels: usize,
    c: usize,
    hw: usize,
    batch: usize,
    tolerance: f64,
    jitter: f64,
) -> Result<()> {
    let kind = match block {
        "mod-basic" | "basic" => BlockKind::Basic,
        "mod-bottleneck" | "bottleneck" => BlockKind::Bottleneck,
        other => {
            return Err(modcnn::Error::Config(format!(
                "unknown block '{other}' (valid: mod-basic, mod-bottleneck)"
            ))
            .into())
        }
    };
    let rec = BlockRecord::standalone("blk", kind, channels, Some(c), 1);
    let mut spec = ArchSpec::resnet("blk", kind, &[1]);
    spec.c = c;
    let mut m = standalone_block::<f64>(&rec, &spec, g.seed)?;
    if jitter > 0.0 {
        jitter_params(m.as_mut(), jitter, g.seed.wrapping_add(1))?;
    }
    let opts = GradcheckOptions {
        tolerance,
        seed: g.seed,
        ..GradcheckOptions::default()
    };
    let rep = gradcheck(m.as_mut(), &[batch, channels, hw, hw], &opts)?;
    for t in &rep.tensors {
        println!(
            "  {:<28} checked {:>4}/{:<5} max rel err {:.3e}  max |grad| {:.3e}",
            t.name, t.checked, t.numel, t.max_rel_error, t.max_abs_grad
        );
    }
    let selector_flat = rep
        .tensors
        .iter()
        .filter(|t| t.name.contains("selector.fc"))
        .any(|t| t.name.ends_with("weight") && t.max_abs_grad == 0.0);
    let verdict = if rep.passed && !selector_flat { "PASS" } else { "FAIL" };
    println!(
        "{verdict} {block} C={channels} c={c}: max relative error {:.3e} (tolerance {:.0e}), k={}",
        rep.max_rel_error,
        tolerance,
        rec.k.unwrap_or(channels)
    );
    if verdict == "FAIL" {
        let why = if selector_flat { "selector weights received no gradient" } else { "tolerance exceeded" };
        return Err(CheckFailed(format!("gradcheck failed: {why}")).into());
    }
    Ok(())
}
