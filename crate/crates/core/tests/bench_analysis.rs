use std::collections::BTreeSet;

use modcnn::arch::{build_model, catalog, plan_architecture, ArchSpec, BlockKind, Placement, StemKind};
use modcnn::bench::{
    bench, run_ablation, selection_frequencies, selection_frequencies_by_class, uniform_band_summary,
    write_ablation_csv, write_histograms_csv, AblationBudget, AblationGrid,
};
use modcnn::data::{channel_signal_task, synth_classification_sized};
use modcnn::train::{evaluate, train, TrainConfig};

fn tiny(classes: usize, hw: usize) -> ArchSpec {
    let mut s = ArchSpec::resnet("tiny", BlockKind::Basic, &[2, 2]);
    s.widths = vec![16, 32];
    s.strides = vec![1, 2];
    s.stem = StemKind::Cifar;
    s.stem_width = 16;
    s.classes = classes;
    s.input_size = hw;
    s.c = 4;
    s.placement = Placement::Alternating;
    s
}

#[test]
fn histogram_csv_matches_counts() {
    let mut spec = catalog::get("resnet18-mod-cifar").unwrap();
    spec.input_size = 16;
    let mut net = build_model::<f32>(&plan_architecture(&spec).unwrap(), 0).unwrap();
    let data = synth_classification_sized(30, 10, 16, 1).unwrap();
    let hists = selection_frequencies(&mut net, &data, None, 8, 0).unwrap();
    assert_eq!(hists.len(), 4);
    let mut buf = Vec::new();
    write_histograms_csv(&hists, &mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), hists.iter().map(|h| h.channels).sum::<usize>());
    let mut i = 0;
    for h in &hists {
        h.check_invariants().unwrap();
        assert_eq!(h.samples, 30);
        assert_eq!(h.total(), 30 * h.k as u64);
        for ch in 0..h.channels {
            assert_eq!(rows[i][0], h.layer);
            assert_eq!(rows[i][2].parse::<u64>().unwrap(), h.counts[ch]);
            i += 1;
        }
    }
    let only = selection_frequencies(&mut net, &data, Some("layer3"), 8, 0).unwrap();
    assert_eq!(only.len(), 1);
    assert!(selection_frequencies(&mut net, &data, Some("nothing"), 8, 0).is_err());
}

#[test]
fn randomized_selector_is_near_uniform() {
    let mut spec = tiny(4, 8);
    spec.selector = "randomized".into();
    let mut net = build_model::<f32>(&plan_architecture(&spec).unwrap(), 0).unwrap();
    let data = synth_classification_sized(2000, 4, 8, 2).unwrap();
    let hists = selection_frequencies(&mut net, &data, None, 100, 3).unwrap();
    let s = uniform_band_summary(&hists, 3.0);
    assert!(s.passed, "{s:?}");
    assert!(s.max_z < 5.0, "{s:?}");

    spec.selector = "learned".into();
    let mut learned = build_model::<f32>(&plan_architecture(&spec).unwrap(), 0).unwrap();
    let s = uniform_band_summary(&selection_frequencies(&mut learned, &data, None, 100, 3).unwrap(), 3.0);
    assert!(!s.passed, "a learned selector on structured input should not look uniform: {s:?}");
}

#[test]
fn two_class_task_routes_by_class() {
    let spec = tiny(2, 8);
    let mut net = build_model::<f32>(&plan_architecture(&spec).unwrap(), 0).unwrap();
    let data = channel_signal_task(128, 8, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        lr: 0.05,
        augment: false,
        ..TrainConfig::default()
    };
    train(&mut net, 2, &data, None, &cfg).unwrap();
    assert!(evaluate(&mut net, &data, 64).unwrap() >= 0.95);
    let by_class = selection_frequencies_by_class(&mut net, &data, None, 64, 0).unwrap();
    let top = |c: usize, layer: usize| -> BTreeSet<usize> {
        let h = &by_class[c].1[layer];
        h.ranking()[..h.k].iter().copied().collect()
    };
    let layers = by_class[0].1.len();
    assert!((0..layers).any(|l| top(0, l) != top(1, l)));
}

#[test]
fn ablation_rows_and_bench() {
    let base = tiny(2, 8);
    let data = synth_classification_sized(32, 2, 8, 0).unwrap();
    let grid = AblationGrid::parse(&["c=2,4", "fusion=first-k,original-position"]).unwrap();
    let budget = AblationBudget {
        train: TrainConfig {
            epochs: 1,
            batch_size: 16,
            lr: 0.05,
            ..TrainConfig::default()
        },
        bench_iters: 3,
        threads: 1,
    };
    let mut seen = 0;
    let rows = run_ablation(&grid, &base, &data, &data, &budget, &mut |_| seen += 1).unwrap();
    assert_eq!((rows.len(), seen), (4, 4));
    assert!(rows[0].macs > rows[2].macs, "c=2 costs more than c=4");
    assert_eq!(rows[0].macs, rows[1].macs, "fusion does not change cost");
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.acc) && r.median_ms.unwrap() > 0.0));
    let mut buf = Vec::new();
    write_ablation_csv(&rows, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);

    let mut net = build_model::<f32>(&plan_architecture(&base).unwrap(), 0).unwrap();
    let r = bench(&mut net, &[1, 3, 8, 8], 1, 5, 1).unwrap();
    assert!(r.p95_ms >= r.median_ms);
}
