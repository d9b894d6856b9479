use std::io::Write;

use modcnn_tensor::Element;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::Network;
use crate::data::{Dataset, LabeledBatch};
use crate::error::{Error, Result};
use crate::mechanism::SelectionResult;
use crate::nn::{ForwardCtx, ForwardObserver, Module};

/// How often each channel of one MoD block was selected.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionHistogram {
    pub layer: String,
    pub channels: usize,
    pub k: usize,
    pub samples: u64,
    pub counts: Vec<u64>,
}

impl SelectionHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of all selections per channel, in percent.
    pub fn percentages(&self) -> Vec<f64> {
        let t = self.total() as f64;
        self.counts.iter().map(|&c| 100.0 * c as f64 / t).collect()
    }

    /// Channels by descending count, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.channels).collect();
        idx.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        idx
    }

    /// Standard deviation of one channel's percentage when every sample
    /// picks a uniformly random `k`-subset: each count is binomial with
    /// `samples` trials and probability `k / C`.
    pub fn uniform_sigma_percent(&self) -> f64 {
        let p = self.k as f64 / self.channels as f64;
        let s = self.samples as f64;
        100.0 * (s * p * (1.0 - p)).sqrt() / (s * self.k as f64)
    }

    /// Whether every channel lies within `sigmas` standard deviations of
    /// the uniform share `100 / C`.
    pub fn within_uniform_band(&self, sigmas: f64) -> bool {
        self.outside_band(sigmas) == 0
    }

    /// Channels whose percentage lies more than `sigmas` standard deviations
    /// from the uniform share.
    pub fn outside_band(&self, sigmas: f64) -> usize {
        let expect = 100.0 / self.channels as f64;
        let band = sigmas * self.uniform_sigma_percent();
        self.percentages().iter().filter(|p| (*p - expect).abs() > band + 1e-9).count()
    }

    /// Largest absolute z-score of a channel under uniform selection.
    pub fn max_uniform_z(&self) -> f64 {
        let expect = 100.0 / self.channels as f64;
        let sigma = self.uniform_sigma_percent();
        self.percentages().iter().fold(0.0, |a, p| a.max((p - expect).abs() / sigma))
    }

    /// Counts sum to `k * samples` and percentages to 100.
    pub fn check_invariants(&self) -> Result<()> {
        let want = self.k as u64 * self.samples;
        if self.total() != want {
            return Err(Error::Analysis(format!(
                "{}: counts sum to {} but k * samples = {want}",
                self.layer,
                self.total()
            )));
        }
        let p: f64 = self.percentages().iter().sum();
        if (p - 100.0).abs() > 1e-6 {
            return Err(Error::Analysis(format!("{}: percentages sum to {p}", self.layer)));
        }
        Ok(())
    }
}

/// How a set of histograms compares with uniform random selection at a
/// given band width.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformBandSummary {
    pub sigmas: f64,
    pub channels: usize,
    pub outside: usize,
    /// Channels expected outside the band by chance alone.
    pub expected_outside: f64,
    /// Expected count plus three Poisson standard deviations.
    pub allowed_outside: f64,
    pub max_z: f64,
    pub passed: bool,
}

/// Pools every channel of `hists`. Under uniform selection each channel
/// falls outside a `sigmas` band with the two-sided normal tail
/// probability, so with many channels a few excursions are expected; the
/// check passes while the excursion count stays within chance.
pub fn uniform_band_summary(hists: &[SelectionHistogram], sigmas: f64) -> UniformBandSummary {
    let channels: usize = hists.iter().map(|h| h.channels).sum();
    let outside = hists.iter().map(|h| h.outside_band(sigmas)).sum();
    let expected_outside = channels as f64 * libm::erfc(sigmas / std::f64::consts::SQRT_2);
    let allowed_outside = expected_outside + 3.0 * expected_outside.sqrt();
    UniformBandSummary {
        sigmas,
        channels,
        outside,
        expected_outside,
        allowed_outside,
        max_z: hists.iter().fold(0.0, |a, h| a.max(h.max_uniform_z())),
        passed: outside as f64 <= allowed_outside,
    }
}

struct Collector<'a> {
    filter: Option<&'a str>,
    hists: Vec<SelectionHistogram>,
}

impl ForwardObserver for Collector<'_> {
    fn selection(&mut self, block: &str, sel: &SelectionResult) {
        if self.filter.is_some_and(|f| !block.contains(f)) {
            return;
        }
        let h = match self.hists.iter_mut().position(|h| h.layer == block) {
            Some(i) => &mut self.hists[i],
            None => {
                self.hists.push(SelectionHistogram {
                    layer: block.to_string(),
                    channels: sel.c,
                    k: sel.k,
                    samples: 0,
                    counts: vec![0; sel.c],
                });
                self.hists.last_mut().expect("just pushed")
            }
        };
        h.samples += sel.n as u64;
        for &i in &sel.indices {
            h.counts[i] += 1;
        }
    }
}

/// Per-MoD-block selection counts over `data` in eval mode. `filter`
/// keeps blocks whose name contains it.
pub fn selection_frequencies<E: Element>(
    model: &mut Network<E>,
    data: &Dataset,
    filter: Option<&str>,
    batch: usize,
    seed: u64,
) -> Result<Vec<SelectionHistogram>> {
    if model.plan.mod_blocks().next().is_none() {
        return Err(Error::Analysis(format!("{} has no MoD blocks", model.name())));
    }
    if data.is_empty() {
        return Err(Error::Dataset(format!("{} is empty", data.name)));
    }
    let mut col = Collector {
        filter,
        hists: Vec::new(),
    };
    let _guard = modcnn_tensor::NoGradGuard::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in data.epoch_batches(batch, false, 0, 0) {
        let b: LabeledBatch<E> = data.batch(&idx)?;
        let ctx_rng = ChaCha8Rng::from_rng(&mut rng);
        let mut ctx = ForwardCtx::new(false, ctx_rng).with_observer(&mut col);
        model.forward(&b.images, &mut ctx)?;
    }
    if col.hists.is_empty() {
        return Err(Error::Analysis(format!(
            "no MoD block of {} matches '{}'",
            model.name(),
            filter.unwrap_or("")
        )));
    }
    Ok(col.hists)
}

/// Histograms computed separately on the samples of each class.
pub fn selection_frequencies_by_class<E: Element>(
    model: &mut Network<E>,
    data: &Dataset,
    filter: Option<&str>,
    batch: usize,
    seed: u64,
) -> Result<Vec<(usize, Vec<SelectionHistogram>)>> {
    (0..data.classes)
        .map(|c| {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == c).collect();
            Ok((c, selection_frequencies(model, &data.select(&idx), filter, batch, seed)?))
        })
        .collect()
}

/// `layer,channel,count,percent` rows.
pub fn write_histograms_csv(hists: &[SelectionHistogram], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["layer", "channel", "count", "percent"])?;
    for h in hists {
        for (i, (c, p)) in h.counts.iter().zip(h.percentages()).enumerate() {
            csv.write_record([h.layer.clone(), i.to_string(), c.to_string(), format!("{p:.9}")])?;
        }
    }
    csv.flush()?;
    Ok(())
}
