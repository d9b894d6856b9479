use modcnn::arch::{build_model, builtin_specs, catalog, plan_architecture, weights, StemKind};
use modcnn::cost::{compare_costs, conventions, count_costs, runtime_ops, CostReport, DEFAULT_CONVENTION};
use modcnn::nn::param_count;

fn report(name: &str, input: usize, convention: &str) -> CostReport {
    let plan = plan_architecture(&catalog::get(name).unwrap()).unwrap();
    count_costs(&plan, input, conventions().get(convention).unwrap().as_ref()).unwrap()
}

#[test]
fn every_model_runtime_matches_analytic() {
    for spec in builtin_specs() {
        let input = match spec.stem {
            StemKind::Cifar | StemKind::None => 32,
            _ => 64,
        };
        let plan = plan_architecture(spec).unwrap();
        let mut net = build_model::<f32>(&plan, 0).unwrap();
        let ops = runtime_ops(&mut net, input).unwrap();
        for name in ["profiler", "dense"] {
            let conv = conventions().get(name).unwrap();
            let analytic = count_costs(&plan, input, conv.as_ref()).unwrap();
            assert_eq!(conv.total(&ops), analytic.total_macs, "{} under {name}", spec.name);
        }
        let analytic = count_costs(&plan, input, conventions().get("dense").unwrap().as_ref()).unwrap();
        let stored = weights::collect(&mut net).param_elements() as u64;
        assert_eq!(param_count(&mut net) as u64, analytic.total_params, "{}", spec.name);
        assert_eq!(stored, analytic.total_params, "{}", spec.name);
    }
}

#[test]
fn known_parameter_counts() {
    for (name, params) in [
        ("resnet18", 11_689_512u64),
        ("resnet34", 21_797_672),
        ("resnet50", 25_557_032),
        ("resnet101", 44_549_160),
        ("resnet152", 60_192_808),
        ("mobilenetv2", 3_504_872),
    ] {
        assert_eq!(report(name, 224, "dense").total_params, params, "{name}");
    }
}

#[test]
fn resnet50_dense_macs_closed_form() {
    // Stem, then per stage: first-block projection plus blocks of 1x1/3x3/1x1.
    let mut macs: u64 = 112 * 112 * 3 * 64 * 49;
    let mut cin = 64;
    let mut hw = 56u64;
    for (stage, (&n, &w)) in [3u64, 4, 6, 3].iter().zip(&[64u64, 128, 256, 512]).enumerate() {
        for b in 0..n {
            let stride_here = stage > 0 && b == 0;
            let out_hw = if stride_here { hw / 2 } else { hw };
            macs += hw * hw * cin * w;
            macs += out_hw * out_hw * w * w * 9;
            macs += out_hw * out_hw * w * 4 * w;
            if b == 0 {
                macs += out_hw * out_hw * cin * 4 * w;
            }
            cin = 4 * w;
            hw = out_hw;
        }
    }
    macs += 2048 * 1000;
    assert_eq!(report("resnet50", 224, "dense").total_macs, macs);
}

#[test]
fn costs_shrink_as_c_grows() {
    let conv = conventions().get(DEFAULT_CONVENTION).unwrap();
    for base in ["resnet50-mod", "resnet18-mod-cifar", "mobilenetv2-mod"] {
        let mut prev: Option<CostReport> = None;
        for c in [1, 2, 4, 8, 16] {
            let mut spec = catalog::get(base).unwrap();
            spec.c = c;
            let r = count_costs(&plan_architecture(&spec).unwrap(), spec.input_size, conv.as_ref()).unwrap();
            if let Some(p) = &prev {
                assert!(r.total_macs <= p.total_macs, "{base} c={c}");
                assert!(r.total_params <= p.total_params, "{base} c={c}");
            }
            prev = Some(r);
        }
    }
}

#[test]
fn mod_variants_cheaper_than_baselines() {
    for (std, m) in [("resnet50", "resnet50-mod"), ("resnet18-cifar", "resnet18-mod-cifar"), ("vgg16-bn", "vgg16-bn-mod")] {
        let input = if std.contains("resnet50") { 224 } else { 32 };
        let c = compare_costs(&report(std, input, DEFAULT_CONVENTION), &report(m, input, DEFAULT_CONVENTION)).unwrap();
        assert!(c.mac_ratio > 1.0 && c.param_ratio > 1.0, "{std} vs {m}: {c:?}");
    }
}

#[test]
fn reference_rows_within_tolerance() {
    let rows = [
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
    ];
    for name in rows {
        let input = catalog::get(name).unwrap().input_size;
        let want = catalog::reference(name, input).unwrap();
        let got = report(name, input, DEFAULT_CONVENTION);
        let dm = (got.mmac() - want.mmac).abs() / want.mmac;
        let dp = (got.params_m() - want.params_m).abs() / want.params_m;
        assert!(dm <= 0.02, "{name} MACs {:.2} vs {}", got.mmac(), want.mmac);
        assert!(dp <= 0.01, "{name} params {:.3} vs {}", got.params_m(), want.params_m);
    }
}
