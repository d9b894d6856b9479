//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! `MODCNN_ACCEPTANCE=1,3` restricts the run to the listed criteria.
//! `MODCNN_DATA` points criteria 5 and 6 at real CIFAR-10; without it they
//! use the generated stand-in and say so.
//! The exit status is non-zero on a failure only under
//! `MODCNN_ACCEPTANCE_STRICT=1`, so a failing criterion is reported here
//! without failing the workspace test run.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use modcnn::arch::{build_model, catalog, plan_architecture, ArchSpec, BlockKind, Network, Placement, StemKind};
use modcnn::bench::{
    bench, median, run_ablation, selection_frequencies, selection_frequencies_by_class, uniform_band_summary,
    write_histograms_csv, AblationBudget, AblationGrid, AblationRow,
};
use modcnn::cost::{conventions, count_costs, DEFAULT_CONVENTION};
use modcnn::data::{self, cifar, cifar_like, Dataset, Split};
use modcnn::mechanism::{k_for, select_topk};
use modcnn::nn::{Module, Param, Visitor};
use modcnn::train::{gradcheck, jitter_params, train, GradcheckOptions, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

const COST_ROWS: &[&str] = &[
    "resnet50",
    "resnet50-mod",
    "resnet75-mod",
    "resnet86-mod",
    "resnet101",
    "resnet101-mod",
    "resnet152-mod",
    "mobilenetv2",
    "mobilenetv2-mod-l",
    "resnet18-cifar",
    "resnet18-mod-cifar",
    "resnet34-cifar",
    "resnet34-mod-cifar",
    "resnet50-cifar",
    "resnet50-mod-cifar",
    "vgg16-bn",
    "vgg16-bn-mod",
    "vgg19-bn",
    "vgg19-bn-mod",
];

fn cost_tables() -> Outcome {
    let conv = conventions().get(DEFAULT_CONVENTION).map_err(err)?;
    let mut bad = Vec::new();
    let mut worst = (0.0f64, 0.0f64);
    for &name in COST_ROWS {
        let spec = catalog::get(name).map_err(err)?;
        let want = catalog::reference(name, spec.input_size).ok_or(format!("no reference for {name}"))?;
        let plan = plan_architecture(&spec).map_err(err)?;
        let got = count_costs(&plan, spec.input_size, conv.as_ref()).map_err(err)?;
        let dm = (got.mmac() / want.mmac - 1.0).abs();
        let dp = (got.params_m() / want.params_m - 1.0).abs();
        worst = (worst.0.max(dm), worst.1.max(dp));
        if dm > 0.02 || dp > 0.01 {
            bad.push(format!(
                "{name} {:.2}/{:.3}M vs {}/{}M",
                got.mmac(),
                got.params_m(),
                want.mmac,
                want.params_m
            ));
        }
    }
    Ok((
        bad.is_empty(),
        format!(
            "{}/{} rows within 2% MACs and 1% params (worst {:.2}% / {:.2}%){}",
            COST_ROWS.len() - bad.len(),
            COST_ROWS.len(),
            100.0 * worst.0,
            100.0 * worst.1,
            if bad.is_empty() { String::new() } else { format!("; off: {}", bad.join(", ")) }
        ),
    ))
}

// ---------------------------------------------------------------- 2

fn gradients() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (kind, label, ch, c, hw) in [
        (BlockKind::Basic, "basic", 16, 4, 6),
        (BlockKind::Bottleneck, "bottleneck", 64, 16, 4),
    ] {
        let opts = GradcheckOptions {
            max_per_tensor: 100,
            ..GradcheckOptions::default()
        };
        // At C=16 the selector has one hidden ReLU; a point where it is dead
        // for the whole batch has exactly zero selector weight gradients, so
        // move on to the next jittered point. Every point checked must pass.
        let mut worst = 0.0f64;
        let mut live = false;
        let mut points = 0;
        for jitter_seed in 4..12 {
            points += 1;
            let mut m = common::block(kind, ch, c, "first-k", 3);
            jitter_params(&mut *m, 0.1, jitter_seed).map_err(err)?;
            let rep = gradcheck(&mut *m, &[4, ch, hw, hw], &opts).map_err(err)?;
            ok &= rep.passed;
            worst = worst.max(rep.max_rel_error);
            live = ["blk.selector.fc1.weight", "blk.selector.fc2.weight"]
                .iter()
                .all(|n| rep.tensor(n).is_some_and(|t| t.max_abs_grad > 0.0));
            if live {
                break;
            }
        }
        ok &= live;
        parts.push(format!(
            "{label} C={ch} c={c} max rel err {worst:.2e} over {points} point(s){}",
            if live { "" } else { " (selector gradient zero)" }
        ));
    }
    Ok((ok, format!("{}; tolerance 1e-4, selector FC gradients nonzero", parts.join(", "))))
}

// ---------------------------------------------------------------- 3

fn set_named(m: &mut dyn Module<f64>, suffix: &str, value: f64) {
    struct S<'a>(&'a str, f64);
    impl Visitor<f64> for S<'_> {
        fn param(&mut self, p: &mut Param<f64>) {
            if p.name().ends_with(self.0) {
                p.set_data(vec![self.1; p.numel()]).expect("same length");
            }
        }
    }
    m.visit(&mut S(suffix, value));
}

fn mechanism_grid() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut cases = 0;
    let mut worst = 0.0f64;
    for ch in [4usize, 16, 64] {
        for c in [1usize, 2, 4, 16, 64] {
            for hw in [4usize, 8] {
                for seed in 0..3u64 {
                    cases += 1;
                    let tag = format!("C={ch} c={c} H={hw} seed={seed}");
                    let k = k_for(ch, c);
                    let plane = hw * hw;
                    let mut m = common::block(BlockKind::Basic, ch, c, "first-k", seed);
                    let params = common::randomize(&mut *m, seed);
                    let x = common::normal(&[2, ch, hw, hw], seed ^ 7);
                    let (y, trace) = common::run(&mut *m, &x, true);
                    if y.shape() != x.shape() {
                        failures.push(format!("{tag}: shape {:?}", y.shape()));
                    }
                    for n in 0..2 {
                        let r = n * ch * plane + k * plane..(n + 1) * ch * plane;
                        if y.data()[r.clone()].iter().zip(&x.data()[r]).any(|(a, b)| a.to_bits() != b.to_bits()) {
                            failures.push(format!("{tag}: pass-through not bitwise"));
                        }
                    }
                    let want = common::oracle(&x, &params, ch, k, hw);
                    let e = y.data().iter().zip(&want).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
                    worst = worst.max(e);
                    if e > 1e-5 {
                        failures.push(format!("{tag}: oracle error {e:.2e}"));
                    }
                    let expect = vec![
                        ("blk".to_string(), "input", vec![2, ch, hw, hw]),
                        ("blk".to_string(), "scores", vec![2, ch]),
                        ("blk".to_string(), "gathered", vec![2, k, hw, hw]),
                        ("blk".to_string(), "processed", vec![2, k, hw, hw]),
                        ("blk".to_string(), "output", vec![2, ch, hw, hw]),
                    ];
                    let (_, other) = common::run(&mut *m, &common::normal(&[2, ch, hw, hw], seed ^ 99), true);
                    if trace.0 != expect || other.0 != expect {
                        failures.push(format!("{tag}: shape trace {:?}", trace.0));
                    }
                    for kind in [BlockKind::Basic, BlockKind::Bottleneck] {
                        for fusion in ["first-k", "last-k", "original-position"] {
                            let mut z = common::block(kind, ch, c, fusion, seed);
                            common::randomize(&mut *z, seed + 1);
                            common::zero_inner(&mut *z);
                            let (yz, _) = common::run(&mut *z, &x, true);
                            if yz.data() != x.data() {
                                failures.push(format!("{tag}: {kind:?}/{fusion} not identity at zero inner weights"));
                            }
                        }
                    }
                    // Equal scores everywhere: the lowest indices must win, every time.
                    set_named(&mut *m, "selector.fc2.weight", 0.0);
                    set_named(&mut *m, "selector.fc2.bias", 0.0);
                    let mut picks = Vec::new();
                    for _ in 0..2 {
                        let mut obs = Picks::default();
                        let mut ctx = modcnn::nn::ForwardCtx::new(true, ChaCha8Rng::seed_from_u64(0)).with_observer(&mut obs);
                        m.forward(&x, &mut ctx).map_err(err)?;
                        picks.push(obs.0);
                    }
                    let lowest: Vec<usize> = (0..2).flat_map(|_| 0..k).collect();
                    if picks[0] != lowest || picks[1] != lowest {
                        failures.push(format!("{tag}: tied selection {:?}", picks[0]));
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let ch = rng.random_range(2..64);
        let scores: Vec<f64> = (0..ch).map(|_| rng.random_range(0..3) as f64).collect();
        let k = rng.random_range(1..=ch);
        let a = select_topk(&scores, 1, ch, k).map_err(err)?;
        let mut order: Vec<usize> = (0..ch).collect();
        order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
        let mut want = order[..k].to_vec();
        want.sort_unstable();
        if a.indices != want {
            failures.push(format!("top-k ties {scores:?} k={k}"));
        }
    }
    failures.truncate(5);
    Ok((
        failures.is_empty(),
        format!(
            "{cases} grid cases plus 500 tie draws, max oracle error {worst:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join("; ")) }
        ),
    ))
}

#[derive(Default)]
struct Picks(Vec<usize>);

impl modcnn::nn::ForwardObserver for Picks {
    fn selection(&mut self, _: &str, sel: &modcnn::mechanism::SelectionResult) {
        self.0.extend(&sel.indices);
    }
}

// ---------------------------------------------------------------- 4

fn latency() -> Outcome {
    let names = ["resnet50", "resnet75-mod", "resnet50-mod"];
    let conv = conventions().get(DEFAULT_CONVENTION).map_err(err)?;
    let mut nets: Vec<Network<f32>> = Vec::new();
    let mut macs = Vec::new();
    for n in names {
        let plan = plan_architecture(&catalog::get(n).map_err(err)?).map_err(err)?;
        macs.push(count_costs(&plan, 224, conv.as_ref()).map_err(err)?.total_macs);
        nets.push(build_model(&plan, 0).map_err(err)?);
    }
    // Interleaved rounds so drift in machine load hits every model alike.
    let mut samples = vec![Vec::new(); names.len()];
    for _ in 0..4 {
        for (i, net) in nets.iter_mut().enumerate() {
            let r = bench(net, &[1, 3, 224, 224], 1, 4, 1).map_err(err)?;
            samples[i].extend(r.latencies_ms);
        }
    }
    let med: Vec<f64> = samples.iter().map(|s| median(s)).collect();
    let by = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        idx
    };
    let mac_f: Vec<f64> = macs.iter().map(|&m| m as f64).collect();
    let order_ok = by(&med) == by(&mac_f);
    let ok = med[2] < med[0] && med[1] < med[0] && order_ok;
    Ok((
        ok,
        format!(
            "batch 1, 1 thread, 224px medians: R50 {:.1} ms, R75-MoD {:.1} ms, R50-MoD {:.1} ms; speedups {:.2}x / {:.2}x; latency order {} MAC order",
            med[0],
            med[1],
            med[2],
            med[0] / med[2],
            med[0] / med[1],
            if order_ok { "matches" } else { "differs from" }
        ),
    ))
}

// ---------------------------------------------------------------- 5, 6

struct DeskData {
    train: Dataset,
    test: Dataset,
    source: &'static str,
    _dir: Option<tempfile::TempDir>,
}

fn desk_data(train: usize, test: usize, seed: u64) -> Result<DeskData, String> {
    if let Some(root) = cifar::resolve_root(None) {
        let tr = data::load_cifar10(&root, Split::Train).map_err(err)?;
        let te = data::load_cifar10(&root, Split::Test).map_err(err)?;
        return Ok(DeskData {
            train: tr.split(tr.len(), seed).0.balanced(train / 10),
            test: te.split(te.len(), seed).0.balanced(test / 10),
            source: "CIFAR-10",
            _dir: None,
        });
    }
    let dir = tempfile::tempdir().map_err(err)?;
    let (tr, te) = cifar_like(dir.path(), train, test, seed).map_err(err)?;
    Ok(DeskData {
        train: tr,
        test: te,
        source: "generated stand-in (CIFAR-10 absent)",
        _dir: Some(dir),
    })
}

fn desk_recipe(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        lr: 0.01,
        momentum: 0.9,
        weight_decay: 1e-4,
        lr_step: 30,
        lr_factor: 0.1,
        seed,
        augment: true,
        eval_batch: 100,
    }
}

fn learnability() -> Outcome {
    let d = desk_data(2000, 1000, 7)?;
    let mut accs = Vec::new();
    for selector in ["learned", "randomized"] {
        let mut spec = catalog::get("resnet18-mod-cifar").map_err(err)?;
        spec.selector = selector.into();
        let mut net = build_model::<f32>(&plan_architecture(&spec).map_err(err)?, 0).map_err(err)?;
        let out = train(&mut net, 10, &d.train, Some(&d.test), &desk_recipe(10, 0))
            .map_err(|e| format!("{selector}: {e}"))?;
        accs.push(out.log.final_eval().ok_or("no evaluation")?);
    }
    let ok = accs[0] >= 0.45 && accs[1] < accs[0];
    Ok((
        ok,
        format!(
            "ResNet18-MoD CIFAR stem, {} ({} train / {} test), 10 epochs: learned {:.1}%, randomized {:.1}% (no divergence)",
            d.source,
            d.train.len(),
            d.test.len(),
            100.0 * accs[0],
            100.0 * accs[1]
        ),
    ))
}

/// ResNet18-MoD with a CIFAR stem at a quarter of the usual widths.
fn narrow_resnet18() -> Result<ArchSpec, String> {
    let mut s = catalog::get("resnet18-mod-cifar").map_err(err)?;
    s.name = "resnet18-mod-cifar-narrow".into();
    s.widths = vec![16, 32, 64, 128];
    s.stem_width = 16;
    s.stem = StemKind::Cifar;
    s.placement = Placement::Alternating;
    Ok(s)
}

fn mean_acc(rows: &[AblationRow], keep: impl Fn(&AblationRow) -> bool) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| keep(r)).map(|r| r.acc).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ablation() -> Outcome {
    let d = desk_data(2000, 1000, 11)?;
    let base = narrow_resnet18()?;
    let budget = AblationBudget {
        train: desk_recipe(8, 0),
        bench_iters: 0,
        threads: 1,
    };
    let grid = AblationGrid::parse(&["c=2,4,8,16,32,64", "fusion=first-k,original-position"]).map_err(err)?;
    let rows = run_ablation(&grid, &base, &d.train, &d.test, &budget, &mut |_| {}).map_err(err)?;
    let s = mean_acc(&rows, |r| r.point.fusion == "first-k");
    let op = mean_acc(&rows, |r| r.point.fusion == "original-position");
    let per_c: Vec<String> = [2, 4, 8, 16, 32, 64]
        .iter()
        .map(|&c| {
            let a = |f: &str| rows.iter().find(|r| r.point.c == c && r.point.fusion == f).map_or(f64::NAN, |r| r.acc);
            format!("c={c} {:.1}/{:.1}", 100.0 * a("first-k"), 100.0 * a("original-position"))
        })
        .collect();
    let lk = AblationGrid::parse(&["c=16", "fusion=first-k,last-k", "seed=0,1,2"]).map_err(err)?;
    let lk_rows = run_ablation(&lk, &base, &d.train, &d.test, &budget, &mut |_| {}).map_err(err)?;
    let fk = mean_acc(&lk_rows, |r| r.point.fusion == "first-k");
    let lkm = mean_acc(&lk_rows, |r| r.point.fusion == "last-k");
    let gap = 100.0 * (fk - lkm).abs();
    let ok = rows.len() == 12 && s >= op && gap < 1.5;
    Ok((
        ok,
        format!(
            "narrow ResNet18-MoD on {}, 8 epochs: mean S {:.2}% vs OP {:.2}% [{}]; first-k {:.2}% vs last-k {:.2}% over 3 seeds, gap {:.2} points",
            d.source,
            100.0 * s,
            100.0 * op,
            per_c.join(", "),
            100.0 * fk,
            100.0 * lkm,
            gap
        ),
    ))
}

// ---------------------------------------------------------------- 7

fn check_csv_exact(text: &str, hists: &[modcnn::bench::SelectionHistogram]) -> Result<(), String> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut by_layer: Vec<(String, u64, f64)> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(err)?;
        let count: u64 = rec[2].parse().map_err(err)?;
        let pct: f64 = rec[3].parse().map_err(err)?;
        match by_layer.iter_mut().find(|(l, _, _)| *l == rec[0]) {
            Some(e) => {
                e.1 += count;
                e.2 += pct;
            }
            None => by_layer.push((rec[0].to_string(), count, pct)),
        }
    }
    for h in hists {
        let (_, count, pct) = by_layer
            .iter()
            .find(|(l, _, _)| *l == h.layer)
            .ok_or(format!("{} missing from CSV", h.layer))?;
        if *count != h.k as u64 * h.samples {
            return Err(format!("{}: counts {} != k*samples {}", h.layer, count, h.k as u64 * h.samples));
        }
        // Each row is rounded to 1e-9 percent.
        if (pct - 100.0).abs() > 1e-9 * h.channels as f64 {
            return Err(format!("{}: percentages sum to {pct}", h.layer));
        }
    }
    Ok(())
}

fn selection_analysis() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut spec = catalog::get("resnet18-mod-cifar").map_err(err)?;
    spec.selector = "randomized".into();
    let mut net = build_model::<f32>(&plan_architecture(&spec).map_err(err)?, 0).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let (_, test) = cifar_like(dir.path(), 10, 1000, 3).map_err(err)?;
    let hists = selection_frequencies(&mut net, &test, None, 100, 1).map_err(err)?;
    let mut buf = Vec::new();
    write_histograms_csv(&hists, &mut buf).map_err(err)?;
    let text = String::from_utf8(buf).map_err(err)?;
    match check_csv_exact(&text, &hists).and_then(|_| {
        hists
            .iter()
            .try_for_each(|h| h.check_invariants().map_err(err))
    }) {
        Ok(()) => notes.push(format!("invariants exact on {} layers", hists.len())),
        Err(e) => {
            ok = false;
            notes.push(format!("invariant violated: {e}"));
        }
    }
    let band = uniform_band_summary(&hists, 3.0);
    ok &= band.passed;
    notes.push(format!(
        "randomized selector: {} of {} channels outside 3 sigma (chance expects {:.1}, allows {:.1}), max |z| {:.2}",
        band.outside, band.channels, band.expected_outside, band.allowed_outside, band.max_z
    ));

    let mut tiny = ArchSpec::resnet("two-class", BlockKind::Basic, &[2, 2]);
    tiny.widths = vec![16, 32];
    tiny.strides = vec![1, 2];
    tiny.stem = StemKind::Cifar;
    tiny.stem_width = 16;
    tiny.classes = 2;
    tiny.input_size = 8;
    tiny.c = 4;
    tiny.placement = Placement::Alternating;
    let mut net = build_model::<f32>(&plan_architecture(&tiny).map_err(err)?, 0).map_err(err)?;
    let train_set = data::channel_signal_task(256, 8, 0).map_err(err)?;
    let eval_set = data::channel_signal_task(200, 8, 1).map_err(err)?;
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        lr: 0.05,
        augment: false,
        ..TrainConfig::default()
    };
    let out = train(&mut net, 2, &train_set, Some(&eval_set), &cfg).map_err(err)?;
    let by_class = selection_frequencies_by_class(&mut net, &eval_set, None, 50, 0).map_err(err)?;
    let mut differing = Vec::new();
    for l in 0..by_class[0].1.len() {
        let top = |c: usize| -> BTreeSet<usize> {
            let h = &by_class[c].1[l];
            h.ranking()[..h.k].iter().copied().collect()
        };
        let (a, b) = (top(0), top(1));
        if a != b {
            differing.push(format!(
                "{} shares {}/{}",
                by_class[0].1[l].layer,
                a.intersection(&b).count(),
                a.len()
            ));
        }
    }
    ok &= !differing.is_empty();
    notes.push(format!(
        "two-class task ({:.0}% eval acc): class-dependent top channels in {}",
        100.0 * out.log.final_eval().unwrap_or(0.0),
        if differing.is_empty() { "no layer".to_string() } else { differing.join(", ") }
    ));
    Ok((ok, notes.join("; ")))
}

// ----------------------------------------------------------------

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, title: "cost tables", limit: Duration::from_secs(5), run: cost_tables },
        Criterion { id: 2, title: "gradient correctness", limit: Duration::from_secs(60), run: gradients },
        Criterion { id: 3, title: "mechanism invariants", limit: Duration::from_secs(120), run: mechanism_grid },
        Criterion { id: 4, title: "directional speedup", limit: Duration::from_secs(600), run: latency },
        Criterion { id: 5, title: "desk-scale learnability", limit: Duration::from_secs(3600), run: learnability },
        Criterion { id: 6, title: "ablation directionality", limit: Duration::from_secs(3600), run: ablation },
        Criterion { id: 7, title: "selection-frequency analysis", limit: Duration::from_secs(600), run: selection_analysis },
    ];
    let only: Option<Vec<u32>> = std::env::var("MODCNN_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            println!("criterion {} SKIP {}", c.id, c.title);
            continue;
        }
        let start = Instant::now();
        let result = (c.run)();
        let took = start.elapsed();
        let (pass, detail) = match result {
            Ok((_, detail)) if took > c.limit => (false, format!("{detail}; over the time limit")),
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} {} {}: {} [{:.1} s, limit {} s]",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.title,
            detail,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    let strict = std::env::var_os("MODCNN_ACCEPTANCE_STRICT").is_some_and(|v| v != "0");
    println!("acceptance: {failed} criterion(s) failed");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
