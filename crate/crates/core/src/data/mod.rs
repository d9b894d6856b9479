//! In-memory image datasets, batching and augmentation.

mod augment;
pub mod cifar;
mod synth;

use modcnn_tensor::{Element, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use augment::{augment, crop_padded, flip_horizontal, CROP_PAD};
pub use cifar::{load_cifar10, Split};
pub use synth::{
    channel_signal_task, cifar_like, cifar_like_records, synth_classification, synth_classification_sized, SYNTH_MARGIN,
};

/// Per-channel CIFAR-10 mean.
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
/// Per-channel CIFAR-10 standard deviation.
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

/// Maps a raw byte of channel `ch` to its normalized value.
pub fn normalize_byte(b: u8, ch: usize) -> f32 {
    (b as f32 / 255.0 - CIFAR_MEAN[ch]) / CIFAR_STD[ch]
}

/// Images `[N, C, H, W]` with integer labels.
#[derive(Clone, Debug)]
pub struct LabeledBatch<E: Element> {
    pub images: Tensor<E>,
    pub labels: Vec<usize>,
}

/// A labelled image set held in memory as normalized `f32` CHW planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `[C, H, W]` of one sample.
    pub sample_shape: [usize; 3],
    pub classes: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
    /// Value a black pixel normalizes to, per channel; used as crop padding.
    pub pad_value: Vec<f32>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        sample_shape: [usize; 3],
        classes: usize,
        images: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        let per = sample_shape.iter().product::<usize>();
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::Dataset(format!(
                "{name}: {} values do not form {} samples of {sample_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Dataset(format!("{name}: label {bad} >= class count {classes}")));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("{name}: non-finite pixel value")));
        }
        Ok(Dataset {
            name,
            sample_shape,
            classes,
            images,
            labels,
            pad_value: vec![0.0; sample_shape[0]],
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            name: self.name.clone(),
            sample_shape: self.sample_shape,
            classes: self.classes,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            pad_value: self.pad_value.clone(),
        }
    }

    /// Up to `per_class` samples of each class, in dataset order.
    pub fn balanced(&self, per_class: usize) -> Dataset {
        let mut seen = vec![0usize; self.classes];
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let l = self.labels[i];
                seen[l] += 1;
                seen[l] <= per_class
            })
            .collect();
        self.select(&idx)
    }

    /// Deterministic split into `(first, rest)` after shuffling with `seed`.
    pub fn split(&self, first: usize, seed: u64) -> (Dataset, Dataset) {
        let order = shuffled(self.len(), seed);
        let first = first.min(self.len());
        (self.select(&order[..first]), self.select(&order[first..]))
    }

    /// Samples at `indices` as one batch.
    pub fn batch<E: Element>(&self, indices: &[usize]) -> Result<LabeledBatch<E>> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| E::of(v as f64)));
        }
        let [c, h, w] = self.sample_shape;
        Ok(LabeledBatch {
            images: Tensor::from_vec(data, &[indices.len(), c, h, w])?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Index batches for one epoch, shuffled by `(seed, epoch)` when
    /// `shuffle` is set. The last batch may be short.
    pub fn epoch_batches(&self, batch: usize, shuffle: bool, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        let order = if shuffle {
            shuffled(self.len(), seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        } else {
            (0..self.len()).collect()
        };
        order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// A seeded permutation of `0..n`.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
