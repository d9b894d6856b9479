//! Analytic multiply-accumulate and parameter counting over a block plan.
//!
//! The walk emits the same [`OpCost`] events that executed ops report at
//! runtime, so a counting convention can be applied to either source and
//! the two totals compared exactly.

use std::io::Write;
use std::sync::{Arc, LazyLock};

use modcnn_tensor::ops::conv_out_dim;
use modcnn_tensor::profile::{self, OpCost};
use modcnn_tensor::{Element, Tensor};
use serde::Serialize;

use crate::arch::{shortcut, stack_convs, BlockPlan, HeadPlan, Network, Shortcut};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvSpec};
use crate::registry::Registry;

/// How executed work is turned into a MAC figure.
pub trait MacConvention: Send + Sync {
    fn name(&self) -> &'static str;
    fn macs(&self, op: &OpCost) -> u64;

    fn total(&self, ops: &[OpCost]) -> u64 {
        ops.iter().map(|o| self.macs(o)).sum()
    }
}

/// Multiply-accumulates of convolutions and linear layers only.
pub struct Dense;

/// Profiler-style counting: bias adds, two per normalized element, one per
/// activation output and one per pooled input are added to the dense count.
pub struct Profiler;

impl MacConvention for Dense {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn macs(&self, op: &OpCost) -> u64 {
        match *op {
            OpCost::Conv { macs, .. } | OpCost::Linear { macs, .. } => macs,
            _ => 0,
        }
    }
}

impl MacConvention for Profiler {
    fn name(&self) -> &'static str {
        "profiler"
    }

    fn macs(&self, op: &OpCost) -> u64 {
        match *op {
            OpCost::Conv { macs, out_elems, bias } => macs + if bias { out_elems } else { 0 },
            OpCost::Linear {
                macs,
                out_features,
                bias,
            } => macs + if bias { out_features } else { 0 },
            OpCost::BatchNorm { elems } => 2 * elems,
            OpCost::Activation { elems } => elems,
            OpCost::Pool { in_elems } => in_elems,
            OpCost::Elementwise { .. } => 0,
        }
    }
}

static CONVENTIONS: LazyLock<Registry<dyn MacConvention>> = LazyLock::new(|| {
    Registry::<dyn MacConvention>::new("MAC convention")
        .with_aliases("profiler", &["ptflops", "default"], || Arc::new(Profiler))
        .with_aliases("dense", &["conv-fc"], || Arc::new(Dense))
});

pub fn conventions() -> &'static Registry<dyn MacConvention> {
    &CONVENTIONS
}

pub const DEFAULT_CONVENTION: &str = "profiler";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
    pub params: u64,
    pub selector: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub convention: String,
    pub input_size: usize,
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
    /// Raw events in execution order, before the convention is applied.
    #[serde(skip)]
    pub ops: Vec<OpCost>,
}

impl CostReport {
    pub fn selector_macs(&self) -> u64 {
        self.layers.iter().filter(|l| l.selector).map(|l| l.macs).sum()
    }

    pub fn selector_params(&self) -> u64 {
        self.layers.iter().filter(|l| l.selector).map(|l| l.params).sum()
    }

    pub fn gmac(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn mmac(&self) -> f64 {
        self.total_macs as f64 / 1e6
    }

    pub fn params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// `(module, macs, params)` grouped by the first name component.
    pub fn module_totals(&self) -> Vec<(String, u64, u64)> {
        let mut out: Vec<(String, u64, u64)> = Vec::new();
        for l in &self.layers {
            let module = l.name.split('.').next().unwrap_or("").to_string();
            match out.iter_mut().find(|(m, _, _)| *m == module) {
                Some(e) => {
                    e.1 += l.macs;
                    e.2 += l.params;
                }
                None => out.push((module, l.macs, l.params)),
            }
        }
        out
    }

    /// `name,macs,params,selector` rows, then inclusive and
    /// selector-exclusive totals.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["name", "macs", "params", "selector"])?;
        for l in &self.layers {
            csv.write_record([l.name.as_str(), &l.macs.to_string(), &l.params.to_string(), &l.selector.to_string()])?;
        }
        csv.write_record(["total", &self.total_macs.to_string(), &self.total_params.to_string(), ""])?;
        csv.write_record([
            "total_excluding_selector",
            &(self.total_macs - self.selector_macs()).to_string(),
            &(self.total_params - self.selector_params()).to_string(),
            "",
        ])?;
        csv.flush()?;
        Ok(())
    }
}

struct Walker<'a> {
    conv: &'a dyn MacConvention,
    layers: Vec<LayerCost>,
    ops: Vec<OpCost>,
}

impl Walker<'_> {
    fn emit(&mut self, name: String, op: OpCost, params: u64) {
        let selector = name.contains(".selector");
        self.layers.push(LayerCost {
            macs: self.conv.macs(&op),
            name,
            params,
            selector,
        });
        self.ops.push(op);
    }

    fn act(&mut self, name: &str, act: Activation, elems: usize) {
        if act != Activation::None {
            self.emit(format!("{name}.act"), OpCost::Activation { elems: elems as u64 }, 0);
        }
    }

    /// Conv, BN and activation; returns the output side length.
    fn conv_bn(&mut self, s: &ConvSpec, hw: usize) -> Result<usize> {
        let out = conv_out_dim(hw, s.kernel, s.stride, s.padding())
            .ok_or_else(|| Error::config(format!("{}: input {hw} too small for kernel {}", s.name, s.kernel)))?;
        let plane = out * out;
        let w = s.weight_shape().iter().product::<usize>();
        self.emit(
            s.name.clone(),
            OpCost::Conv {
                macs: (w * plane) as u64,
                out_elems: (s.cout * plane) as u64,
                bias: s.bias,
            },
            (w + if s.bias { s.cout } else { 0 }) as u64,
        );
        self.emit(
            format!("{}.bn", s.name),
            OpCost::BatchNorm {
                elems: (s.cout * plane) as u64,
            },
            2 * s.cout as u64,
        );
        self.act(&s.name, s.act, s.cout * plane);
        Ok(out)
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) {
        self.emit(
            name.to_string(),
            OpCost::Linear {
                macs: (fin * fout) as u64,
                out_features: fout as u64,
                bias: true,
            },
            (fin * fout + fout) as u64,
        );
    }

    fn pool(&mut self, name: &str, elems: usize) {
        self.emit(name.to_string(), OpCost::Pool { in_elems: elems as u64 }, 0);
    }
}

/// Per-layer MACs and parameters of `plan` at `input` resolution (batch 1).
pub fn count_costs(plan: &BlockPlan, input: usize, convention: &dyn MacConvention) -> Result<CostReport> {
    let mut w = Walker {
        conv: convention,
        layers: Vec::new(),
        ops: Vec::new(),
    };
    let mut hw = input;
    for s in &plan.stem.convs {
        hw = w.conv_bn(s, hw)?;
    }
    let mut ch = plan.stem.out_channels;
    if plan.stem.max_pool {
        w.pool("stem.pool", ch * hw * hw);
        hw = conv_out_dim(hw, 3, 2, 1).ok_or_else(|| Error::config("input too small for stem pooling"))?;
    }
    for rec in &plan.blocks {
        if rec.is_mod {
            let c = rec.in_channels;
            let hid = plan.selector_hidden(rec);
            let sel = format!("{}.selector", rec.name);
            w.pool(&format!("{sel}.pool"), c * hw * hw);
            w.linear(&format!("{sel}.fc1"), c, hid);
            w.emit(format!("{sel}.act"), OpCost::Activation { elems: hid as u64 }, 0);
            w.linear(&format!("{sel}.fc2"), hid, c);
            for s in stack_convs(rec, &format!("{}.inner", rec.name)) {
                w.conv_bn(&s, hw)?;
            }
        } else {
            let mut out = hw;
            for s in stack_convs(rec, &rec.name) {
                out = w.conv_bn(&s, out)?;
            }
            let (sc, post) = shortcut(rec);
            if let Shortcut::Projection(p) = sc {
                w.conv_bn(&p, hw)?;
            }
            w.act(&rec.name, post, rec.out_channels * out * out);
            hw = out;
        }
        ch = rec.out_channels;
        if rec.pool_after {
            w.pool(&format!("{}.pool", rec.name), ch * hw * hw);
            hw = conv_out_dim(hw, 2, 2, 0).ok_or_else(|| Error::config("input too small for stage pooling"))?;
        }
    }
    let classes = plan.spec.classes;
    match plan.head {
        HeadPlan::Linear { in_channels } => {
            w.pool("avgpool", in_channels * hw * hw);
            w.linear("fc", in_channels, classes);
        }
        HeadPlan::ConvLinear { in_channels, hidden } => {
            w.conv_bn(&ConvSpec::new("head", in_channels, hidden, 1, 1).act(Activation::Relu6), hw)?;
            w.pool("avgpool", hidden * hw * hw);
            w.linear("fc", hidden, classes);
        }
        HeadPlan::Mlp { in_channels, hidden } => {
            w.pool("avgpool", in_channels * hw * hw);
            w.linear("fc1", in_channels, hidden);
            w.emit("fc1.act".into(), OpCost::Activation { elems: hidden as u64 }, 0);
            w.linear("fc2", hidden, hidden);
            w.emit("fc2.act".into(), OpCost::Activation { elems: hidden as u64 }, 0);
            w.linear("fc3", hidden, classes);
        }
    }
    let _ = ch;
    Ok(CostReport {
        model: plan.spec.name.clone(),
        convention: convention.name().to_string(),
        input_size: input,
        total_macs: w.layers.iter().map(|l| l.macs).sum(),
        total_params: w.layers.iter().map(|l| l.params).sum(),
        layers: w.layers,
        ops: w.ops,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModuleDelta {
    pub module: String,
    pub a_macs: u64,
    pub b_macs: u64,
    pub a_params: u64,
    pub b_params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostComparison {
    pub a: String,
    pub b: String,
    /// `a / b`.
    pub mac_ratio: f64,
    pub param_ratio: f64,
    pub modules: Vec<ModuleDelta>,
}

pub fn compare_costs(a: &CostReport, b: &CostReport) -> Result<CostComparison> {
    if a.input_size != b.input_size {
        return Err(Error::Analysis(format!(
            "cannot compare {} at {} with {} at {}: resolution mismatch",
            a.model, a.input_size, b.model, b.input_size
        )));
    }
    if a.convention != b.convention {
        return Err(Error::Analysis(format!(
            "cannot compare {} and {} conventions",
            a.convention, b.convention
        )));
    }
    let ratio = |x: u64, y: u64| if y == 0 { f64::NAN } else { x as f64 / y as f64 };
    let (ma, mb) = (a.module_totals(), b.module_totals());
    let mut modules: Vec<ModuleDelta> = ma
        .iter()
        .map(|(m, am, ap)| {
            let (bm, bp) = mb.iter().find(|x| &x.0 == m).map(|x| (x.1, x.2)).unwrap_or((0, 0));
            ModuleDelta {
                module: m.clone(),
                a_macs: *am,
                b_macs: bm,
                a_params: *ap,
                b_params: bp,
            }
        })
        .collect();
    for (m, bm, bp) in &mb {
        if !ma.iter().any(|x| &x.0 == m) {
            modules.push(ModuleDelta {
                module: m.clone(),
                a_macs: 0,
                b_macs: *bm,
                a_params: 0,
                b_params: *bp,
            });
        }
    }
    Ok(CostComparison {
        a: a.model.clone(),
        b: b.model.clone(),
        mac_ratio: ratio(a.total_macs, b.total_macs),
        param_ratio: ratio(a.total_params, b.total_params),
        modules,
    })
}

/// Executes one batch-1 forward pass at `input` and returns the op events
/// actually performed.
pub fn runtime_ops<E: Element>(net: &mut Network<E>, input: usize) -> Result<Vec<OpCost>> {
    let x = Tensor::zeros(&[1, 3, input, input]);
    let (out, ops) = profile::capture(|| net.predict(&x));
    out?;
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, catalog, plan_architecture};

    fn report(name: &str, input: usize) -> CostReport {
        let plan = plan_architecture(&catalog::get(name).unwrap()).unwrap();
        count_costs(&plan, input, &Profiler).unwrap()
    }

    #[test]
    fn single_pointwise_conv() {
        let mut w = Walker {
            conv: &Dense,
            layers: vec![],
            ops: vec![],
        };
        w.conv_bn(&ConvSpec::new("c", 8, 8, 1, 1).bias(true), 4).unwrap();
        assert_eq!(w.layers[0].macs, 8 * 8 * 16);
        assert_eq!(w.layers[0].params, 64 + 8);
    }

    #[test]
    fn totals_are_sums() {
        let r = report("resnet50-mod", 224);
        assert_eq!(r.total_macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        assert_eq!(r.total_params, r.layers.iter().map(|l| l.params).sum::<u64>());
        assert!(r.selector_macs() > 0 && r.selector_params() > 0);
    }

    #[test]
    fn resnet50_table_values() {
        let r = report("resnet50", 224);
        assert!((r.gmac() / 4.13 - 1.0).abs() <= 0.02, "{}", r.gmac());
        assert!((r.params_m() / 25.56 - 1.0).abs() <= 0.01, "{}", r.params_m());
    }

    #[test]
    fn identical_plans_ratio_one() {
        let a = report("resnet18-mod-cifar", 32);
        let c = compare_costs(&a, &a).unwrap();
        assert_eq!(c.mac_ratio, 1.0);
        assert_eq!(c.param_ratio, 1.0);
        assert!(c.modules.iter().all(|m| m.a_macs == m.b_macs));
    }

    #[test]
    fn resolution_mismatch() {
        assert!(compare_costs(&report("resnet18-cifar", 32), &report("resnet18-cifar", 64)).is_err());
    }

    #[test]
    fn runtime_matches_analytic_small() {
        let plan = plan_architecture(&catalog::get("resnet18-mod-cifar").unwrap()).unwrap();
        let mut net = build_model::<f32>(&plan, 0).unwrap();
        let ops = runtime_ops(&mut net, 16).unwrap();
        for conv in conventions().names() {
            let c = conventions().get(conv).unwrap();
            let analytic = count_costs(&plan, 16, c.as_ref()).unwrap();
            assert_eq!(c.total(&ops), analytic.total_macs, "{conv}");
        }
    }

    #[test]
    fn csv_has_both_totals() {
        let r = report("resnet18-mod-cifar", 32);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("name,macs,params,selector\n"));
        assert!(text.contains("\ntotal,") && text.contains("\ntotal_excluding_selector,"));
    }
}
