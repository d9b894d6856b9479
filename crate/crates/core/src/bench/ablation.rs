use std::io::Write;

use serde::Serialize;

use super::{bench, DEFAULT_WARMUP};
use crate::arch::{build_model, plan_architecture, ArchSpec};
use crate::cost::{conventions, count_costs, DEFAULT_CONVENTION};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::train::{evaluate, train, TrainConfig};

/// One configuration of a sweep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GridPoint {
    pub c: usize,
    pub fusion: String,
    pub selector: String,
    pub seed: u64,
}

impl GridPoint {
    pub fn label(&self) -> String {
        format!(
            "c={} fusion={} selector={} seed={}",
            self.c, self.fusion, self.selector, self.seed
        )
    }
}

/// Axes of a sweep; unset axes take the base spec's value (seed 0).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AblationGrid {
    pub cs: Vec<usize>,
    pub fusions: Vec<String>,
    pub selectors: Vec<String>,
    pub seeds: Vec<u64>,
}

impl AblationGrid {
    /// Parses `axis=v1,v2,...` items with axes `c`, `fusion`, `selector`
    /// and `seed`.
    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        let mut g = AblationGrid::default();
        for item in items {
            let item = item.as_ref();
            let (axis, values) = item
                .split_once('=')
                .ok_or_else(|| Error::config(format!("grid item '{item}' is not axis=v1,v2")))?;
            let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::config(format!("grid axis {axis}: '{v}' is not an integer")))
            };
            match axis.trim() {
                "c" => g.cs = values.iter().map(|v| num(v).map(|x| x as usize)).collect::<Result<_>>()?,
                "fusion" => g.fusions = values.iter().map(|v| v.to_string()).collect(),
                "selector" => g.selectors = values.iter().map(|v| v.to_string()).collect(),
                "seed" => g.seeds = values.iter().map(|v| num(v)).collect::<Result<_>>()?,
                other => {
                    return Err(Error::config(format!(
                        "unknown grid axis '{other}' (valid: c, fusion, selector, seed)"
                    )))
                }
            }
        }
        Ok(g)
    }

    /// Cartesian product in `c`, fusion, selector, seed order.
    pub fn points(&self, base: &ArchSpec) -> Result<Vec<GridPoint>> {
        if self.cs.is_empty() && self.fusions.is_empty() && self.selectors.is_empty() && self.seeds.is_empty() {
            return Err(Error::config("ablation grid is empty"));
        }
        let or = |v: &Vec<String>, d: &str| if v.is_empty() { vec![d.to_string()] } else { v.clone() };
        let cs = if self.cs.is_empty() { vec![base.c] } else { self.cs.clone() };
        let seeds = if self.seeds.is_empty() { vec![0] } else { self.seeds.clone() };
        let mut out = Vec::new();
        for &c in &cs {
            for fusion in or(&self.fusions, &base.fusion) {
                for selector in or(&self.selectors, &base.selector) {
                    for &seed in &seeds {
                        out.push(GridPoint {
                            c,
                            fusion: fusion.clone(),
                            selector: selector.clone(),
                            seed,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationBudget {
    /// Training recipe; its seed is replaced by each point's seed.
    pub train: TrainConfig,
    /// Measured latency iterations per row; 0 skips timing.
    pub bench_iters: usize,
    pub threads: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub point: GridPoint,
    pub acc: f64,
    pub macs: u64,
    pub params: u64,
    pub median_ms: Option<f64>,
}

impl AblationRow {
    pub fn config(&self) -> String {
        self.point.label()
    }
}

/// Trains and scores one model per grid point. `on_row` sees rows as they
/// complete.
pub fn run_ablation(
    grid: &AblationGrid,
    base: &ArchSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    budget: &AblationBudget,
    on_row: &mut dyn FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let points = grid.points(base)?;
    let convention = conventions().get(DEFAULT_CONVENTION)?;
    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        let mut spec = base.clone();
        spec.c = p.c;
        spec.fusion = p.fusion.clone();
        spec.selector = p.selector.clone();
        spec.name = format!("{}[{}]", base.name, p.label());
        let plan = plan_architecture(&spec)?;
        let cost = count_costs(&plan, spec.input_size, convention.as_ref())?;
        let mut net = build_model::<f32>(&plan, p.seed)?;
        let cfg = TrainConfig {
            seed: p.seed,
            ..budget.train.clone()
        };
        train(&mut net, spec.classes, train_set, None, &cfg)?;
        let acc = evaluate(&mut net, test_set, cfg.eval_batch)?;
        let median_ms = if budget.bench_iters > 0 {
            let shape = net.input_shape(1);
            Some(bench(&mut net, &shape, DEFAULT_WARMUP.min(budget.bench_iters), budget.bench_iters, budget.threads)?.median_ms)
        } else {
            None
        };
        let row = AblationRow {
            point: p,
            acc,
            macs: cost.total_macs,
            params: cost.total_params,
            median_ms,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// `config,acc,macs,params,median_ms` rows.
pub fn write_ablation_csv(rows: &[AblationRow], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["config", "acc", "macs", "params", "median_ms"])?;
    for r in rows {
        csv.write_record([
            r.config(),
            format!("{:.6}", r.acc),
            r.macs.to_string(),
            r.params.to_string(),
            r.median_ms.map(|m| format!("{m:.4}")).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
