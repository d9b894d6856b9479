//! Latency benchmarks, selection-frequency analysis and ablation sweeps.

mod ablation;
mod selection;

use std::io::Write;
use std::time::Instant;

use modcnn_tensor::{Element, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::arch::Network;
use crate::error::{Error, Result};

pub use ablation::{run_ablation, write_ablation_csv, AblationBudget, AblationGrid, AblationRow, GridPoint};
pub use selection::{
    selection_frequencies, selection_frequencies_by_class, uniform_band_summary, write_histograms_csv,
    SelectionHistogram, UniformBandSummary,
};

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_ITERS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub input_shape: Vec<usize>,
    pub warmup: usize,
    pub iters: usize,
    pub threads: usize,
    pub latencies_ms: Vec<f64>,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub baseline: Option<String>,
    /// Baseline median over this model's median.
    pub speedup: Option<f64>,
}

impl BenchReport {
    /// Records `baseline` as the reference for this report's speedup.
    pub fn against(mut self, baseline: &BenchReport) -> Self {
        self.speedup = Some(baseline.median_ms / self.median_ms);
        self.baseline = Some(baseline.model.clone());
        self
    }
}

/// Median of an unsorted sample; mean of the middle pair for even sizes.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Nearest-rank percentile.
pub fn percentile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// A rayon pool with exactly `threads` workers.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot build a {threads}-thread pool: {e}")))
}

/// Times `iters` eval-mode forward passes after `warmup` untimed ones.
/// The input is generated before timing starts and reused.
pub fn bench<E: Element>(
    model: &mut Network<E>,
    input_shape: &[usize],
    warmup: usize,
    iters: usize,
    threads: usize,
) -> Result<BenchReport> {
    if iters < 3 {
        return Err(Error::config(format!("bench needs at least 3 measured iterations, got {iters}")));
    }
    let n = input_shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_vec(
        (0..n).map(|_| E::of(StandardNormal.sample(&mut rng))).collect(),
        input_shape,
    )?;
    let pool = thread_pool(threads)?;
    let latencies_ms = pool.install(|| -> Result<Vec<f64>> {
        for _ in 0..warmup {
            model.predict(&x)?;
        }
        let mut lat = Vec::with_capacity(iters);
        for _ in 0..iters {
            let t = Instant::now();
            let y = model.predict(&x)?;
            lat.push(t.elapsed().as_secs_f64() * 1e3);
            drop(y);
        }
        Ok(lat)
    })?;
    Ok(BenchReport {
        model: model.name().to_string(),
        input_shape: input_shape.to_vec(),
        warmup,
        iters,
        threads,
        median_ms: median(&latencies_ms),
        mean_ms: latencies_ms.iter().sum::<f64>() / iters as f64,
        p95_ms: percentile(&latencies_ms, 95.0),
        latencies_ms,
        baseline: None,
        speedup: None,
    })
}

/// `model,input,median_ms,mean_ms,p95_ms,speedup` rows.
pub fn write_bench_csv(reports: &[BenchReport], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["model", "input", "median_ms", "mean_ms", "p95_ms", "speedup"])?;
    for r in reports {
        let input = r.input_shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        csv.write_record([
            r.model.clone(),
            input,
            format!("{:.4}", r.median_ms),
            format!("{:.4}", r.mean_ms),
            format!("{:.4}", r.p95_ms),
            r.speedup.map(|s| format!("{s:.4}")).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, catalog, plan_architecture};

    #[test]
    fn order_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&[5.0, 1.0, 3.0], 95.0), 5.0);
    }

    #[test]
    fn bench_contract() {
        let plan = plan_architecture(&catalog::get("resnet18-mod-cifar").unwrap()).unwrap();
        let mut net = build_model::<f32>(&plan, 0).unwrap();
        assert!(bench(&mut net, &[1, 3, 16, 16], 1, 2, 1).is_err());
        let r = bench(&mut net, &[1, 3, 16, 16], 2, 5, 1).unwrap();
        assert_eq!(r.latencies_ms.len(), 5);
        assert!(r.latencies_ms.iter().all(|&l| l > 0.0));
        assert!(r.speedup.is_none());
        let s = r.clone().against(&r);
        assert_eq!(s.speedup, Some(1.0));
        let mut buf = Vec::new();
        write_bench_csv(&[r, s], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(','));
    }
}
