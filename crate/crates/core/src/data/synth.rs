//! Seeded synthetic image sets.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cifar::{self, IMAGE_BYTES};
use super::Dataset;
use crate::error::{Error, Result};

/// Gap between the mean pixel values of consecutive classes.
pub const SYNTH_MARGIN: f32 = 0.5;
const SYNTH_NOISE: f32 = 0.5;
const SYNTH_TILT: f32 = 0.5;

/// `n` images of `[3, hw, hw]`, label `i % classes`. Every pixel of class
/// `y` is drawn around a per-channel level whose channel average is
/// `SYNTH_MARGIN * y` minus a common centre, so the classes separate on
/// channel statistics alone.
pub fn synth_classification_sized(n: usize, classes: usize, hw: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || classes == 0 || hw == 0 {
        return Err(Error::Dataset("synthetic set needs n, classes and size >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, SYNTH_NOISE).expect("valid std");
    let centre = SYNTH_MARGIN * (classes - 1) as f32 / 2.0;
    let plane = hw * hw;
    let mut images = Vec::with_capacity(n * 3 * plane);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &y in &labels {
        for ch in 0..3 {
            let tilt = if ch == y % 3 {
                SYNTH_TILT
            } else if ch == (y + 1) % 3 {
                -SYNTH_TILT
            } else {
                0.0
            };
            let level = SYNTH_MARGIN * y as f32 - centre + tilt;
            images.extend((0..plane).map(|_| level + noise.sample(&mut rng)));
        }
    }
    Dataset::new(format!("synth-{classes}c"), [3, hw, hw], classes, images, labels)
}

pub fn synth_classification(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    synth_classification_sized(n, classes, 32, seed)
}

/// Raw CIFAR-format records of a ten-class texture task used when the
/// real dataset is absent. Each class is an oriented sinusoidal grating
/// with its own orientation and frequency band and a weak colour tint,
/// drawn inside a randomly placed square patch. The rest of the image holds
/// a distractor grating of random orientation and frequency at comparable
/// contrast, and pixel noise is added throughout, so the class has to be
/// read from the patch.
pub fn cifar_like_records(n: usize, seed: u64) -> (Vec<usize>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 40.0).expect("valid std");
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    for _ in 0..n {
        let y = rng.random_range(0..cifar::CLASSES);
        let grating = |rng: &mut ChaCha8Rng, class: usize, jitter: f32| {
            let theta = (class % 5) as f32 * PI / 5.0 + rng.random_range(-jitter..jitter);
            let freq = if class < 5 { 2.5 } else { 5.0 } * rng.random_range(0.8..1.2);
            let phase = rng.random_range(0.0..2.0 * PI);
            let (s, c) = theta.sin_cos();
            move |i: usize, j: usize| (2.0 * PI * freq * (j as f32 * c + i as f32 * s) / 32.0 + phase).sin()
        };
        let object = grating(&mut rng, y, 0.3);
        let distractor = rng.random_range(0..cifar::CLASSES);
        let background = grating(&mut rng, distractor, PI);
        let side = rng.random_range(14..=26);
        let (top, left) = (rng.random_range(0..=32 - side), rng.random_range(0..=32 - side));
        let contrast = rng.random_range(35.0..70.0);
        let clutter = contrast * rng.random_range(0.5..0.9);
        let bright = rng.random_range(90.0..165.0);
        let tint = [
            1.0 + 0.25 * ((y * 3 % 5) as f32 / 4.0 - 0.5),
            1.0 + 0.25 * ((y * 7 % 5) as f32 / 4.0 - 0.5),
            1.0 + 0.25 * ((y % 5) as f32 / 4.0 - 0.5),
        ];
        for t in tint {
            for i in 0..32 {
                for j in 0..32 {
                    let inside = (top..top + side).contains(&i) && (left..left + side).contains(&j);
                    let signal = if inside {
                        t * contrast * object(i, j)
                    } else {
                        clutter * background(i, j)
                    };
                    let v = bright + signal + noise.sample(&mut rng);
                    pixels.push(v.clamp(0.0, 255.0) as u8);
                }
            }
        }
        labels.push(y);
    }
    (labels, pixels)
}

/// Stand-in train and test sets, written to `dir` in the batch-file format
/// and read back through the CIFAR loader.
pub fn cifar_like(dir: &std::path::Path, train: usize, test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (l, p) = cifar_like_records(train, seed);
    cifar::write_records(&dir.join(cifar::TRAIN_FILES[0]), &l, &p)?;
    let (l, p) = cifar_like_records(test, seed.wrapping_add(1));
    cifar::write_records(&dir.join(cifar::TEST_FILES[0]), &l, &p)?;
    let mut tr = cifar::load_files(dir, &cifar::TRAIN_FILES[..1], "cifar-like-train")?;
    let mut te = cifar::load_files(dir, &cifar::TEST_FILES, "cifar-like-test")?;
    tr.name = "cifar-like-train".into();
    te.name = "cifar-like-test".into();
    Ok((tr, te))
}

/// Two classes on `[3, hw, hw]`: class 0 carries a high-contrast
/// checkerboard in the red plane, class 1 in the blue plane; all other
/// planes are noise.
pub fn channel_signal_task(n: usize, hw: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.3).expect("valid std");
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut images = Vec::with_capacity(n * 3 * hw * hw);
    for &y in &labels {
        let signal_plane = if y == 0 { 0 } else { 2 };
        for ch in 0..3 {
            for i in 0..hw {
                for j in 0..hw {
                    let s = if ch == signal_plane {
                        if (i / 2 + j / 2) % 2 == 0 {
                            2.0
                        } else {
                            -2.0
                        }
                    } else {
                        0.0
                    };
                    images.push(s + noise.sample(&mut rng));
                }
            }
        }
    }
    Dataset::new("channel-signal", [3, hw, hw], 2, images, labels)
}
