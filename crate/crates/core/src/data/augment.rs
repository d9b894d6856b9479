use modcnn_tensor::{Element, Tensor};
use rand::Rng;

use super::LabeledBatch;
use crate::error::Result;

pub const CROP_PAD: usize = 4;

/// Mirrors every row of each `[h, w]` plane of `img`.
pub fn flip_horizontal<T: Copy>(img: &mut [T], w: usize) {
    for row in img.chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Crops `[c, h, w]` from `img` zero-padded by `pad` on every side, with
/// the crop's top-left corner at `(dy, dx)` in padded coordinates.
/// Padding takes `pad_value[ch]`.
pub fn crop_padded<T: Copy>(
    img: &[T],
    [c, h, w]: [usize; 3],
    pad: usize,
    dy: usize,
    dx: usize,
    pad_value: &[T],
) -> Vec<T> {
    let mut out = Vec::with_capacity(img.len());
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            let si = (i + dy).checked_sub(pad).filter(|&s| s < h);
            for j in 0..w {
                let sj = (j + dx).checked_sub(pad).filter(|&s| s < w);
                out.push(match (si, sj) {
                    (Some(si), Some(sj)) => plane[si * w + sj],
                    _ => pad_value[ch],
                });
            }
        }
    }
    out
}

/// Training path: random pad-4 crop then horizontal flip with probability
/// one half, per sample. Evaluation path returns the batch unchanged.
pub fn augment<E: Element>(
    batch: LabeledBatch<E>,
    train: bool,
    pad_value: &[f32],
    rng: &mut impl Rng,
) -> Result<LabeledBatch<E>> {
    if !train {
        return Ok(batch);
    }
    let shape = batch.images.shape().to_vec();
    let dims = [shape[1], shape[2], shape[3]];
    let per = dims.iter().product::<usize>();
    let pad: Vec<E> = pad_value.iter().map(|&v| E::of(v as f64)).collect();
    let mut data = Vec::with_capacity(batch.images.numel());
    for img in batch.images.data().chunks_exact(per) {
        let dy = rng.random_range(0..=2 * CROP_PAD);
        let dx = rng.random_range(0..=2 * CROP_PAD);
        let mut out = crop_padded(img, dims, CROP_PAD, dy, dx, &pad);
        if rng.random_bool(0.5) {
            flip_horizontal(&mut out, dims[2]);
        }
        data.extend(out);
    }
    Ok(LabeledBatch {
        images: Tensor::from_vec(data, &shape)?,
        labels: batch.labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flip_mirrors_columns() {
        let orig: Vec<u32> = (0..2 * 3 * 5).collect();
        let mut f = orig.clone();
        flip_horizontal(&mut f, 5);
        for r in 0..6 {
            for c in 0..5 {
                assert_eq!(f[r * 5 + c], orig[r * 5 + 4 - c]);
            }
        }
    }

    #[test]
    fn centered_crop_is_identity() {
        let img: Vec<u32> = (0..3 * 8 * 8).collect();
        assert_eq!(crop_padded(&img, [3, 8, 8], 4, 4, 4, &[0, 0, 0]), img);
    }

    #[test]
    fn corner_crop_shifts_in_padding() {
        let img = vec![1u32; 4 * 4];
        let out = crop_padded(&img, [1, 4, 4], 4, 0, 0, &[9]);
        assert!(out.iter().all(|&v| v == 9));
        let out = crop_padded(&img, [1, 4, 4], 4, 3, 4, &[9]);
        assert_eq!(&out[..4], &[9, 9, 9, 9]);
        assert_eq!(&out[4..8], &[1, 1, 1, 1]);
    }

    #[test]
    fn eval_identity_and_train_shape() {
        let x = Tensor::from_vec((0..2 * 3 * 32 * 32).map(|v| v as f32).collect(), &[2, 3, 32, 32]).unwrap();
        let b = LabeledBatch {
            images: x.clone(),
            labels: vec![0, 1],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = augment(b.clone(), false, &[0.0; 3], &mut rng).unwrap();
        assert_eq!(e.images.data(), x.data());
        for _ in 0..5 {
            let t = augment(b.clone(), true, &[0.0; 3], &mut rng).unwrap();
            assert_eq!(t.images.shape(), &[2, 3, 32, 32]);
            assert_eq!(t.labels, vec![0, 1]);
        }
    }
}
