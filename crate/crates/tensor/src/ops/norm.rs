use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::profile::{self, OpCost};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Mutable running statistics owned by a batch-norm layer.
pub struct RunningStats<'a, E> {
    pub mean: &'a mut [E],
    pub var: &'a mut [E],
}

/// Batch normalization over `(N, H, W)` per channel.
///
/// In training mode the batch statistics normalize the input and the running
/// statistics move toward them with `momentum` (the unbiased variance is
/// tracked). Evaluation mode uses the running statistics only.
pub fn batch_norm2d<E: Element>(
    input: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    stats: RunningStats<'_, E>,
    train: bool,
    momentum: E,
    eps: E,
) -> Result<Tensor<E>> {
    const OP: &str = "batch_norm2d";
    let (n, c, h, w) = input.dims4(OP)?;
    for (dim, len) in [
        ("gamma", gamma.numel()),
        ("beta", beta.numel()),
        ("running_mean", stats.mean.len()),
        ("running_var", stats.var.len()),
    ] {
        if len != c {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim,
                expected: c,
                got: len,
            });
        }
    }
    let plane = h * w;
    let count = n * plane;
    if count == 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: "empty batch".into(),
        });
    }
    let x = input.data();
    let cnt = E::from_usize(count).expect("count");

    let mut mean = vec![E::zero(); c];
    let mut inv_std = vec![E::zero(); c];
    if train {
        for ch in 0..c {
            let mut s = E::zero();
            for ni in 0..n {
                let base = (ni * c + ch) * plane;
                s += x[base..base + plane].iter().copied().sum::<E>();
            }
            let m = s / cnt;
            let mut v = E::zero();
            for ni in 0..n {
                let base = (ni * c + ch) * plane;
                v += x[base..base + plane].iter().map(|&a| (a - m) * (a - m)).sum::<E>();
            }
            let var = v / cnt;
            mean[ch] = m;
            inv_std[ch] = E::one() / (var + eps).sqrt();
            let unbiased = if count > 1 {
                v / E::from_usize(count - 1).expect("count")
            } else {
                var
            };
            stats.mean[ch] = (E::one() - momentum) * stats.mean[ch] + momentum * m;
            stats.var[ch] = (E::one() - momentum) * stats.var[ch] + momentum * unbiased;
        }
    } else {
        for ch in 0..c {
            mean[ch] = stats.mean[ch];
            inv_std[ch] = E::one() / (stats.var[ch] + eps).sqrt();
        }
    }

    let g = gamma.data();
    let b = beta.data();
    let mut xhat = vec![E::zero(); x.len()];
    let mut out = vec![E::zero(); x.len()];
    for ni in 0..n {
        for ch in 0..c {
            let base = (ni * c + ch) * plane;
            let (m, is, gg, bb) = (mean[ch], inv_std[ch], g[ch], b[ch]);
            for i in base..base + plane {
                let xh = (x[i] - m) * is;
                xhat[i] = xh;
                out[i] = gg * xh + bb;
            }
        }
    }
    profile::record(|| OpCost::BatchNorm {
        elems: x.len() as u64,
    });

    let gamma_saved = gamma.clone();
    Ok(Tensor::from_op(
        OP,
        out,
        vec![n, c, h, w],
        vec![input.clone(), gamma.clone(), beta.clone()],
        move |dy, needs| {
            let g = gamma_saved.data();
            let mut sum_dy = vec![E::zero(); c];
            let mut sum_dy_xhat = vec![E::zero(); c];
            for ni in 0..n {
                for ch in 0..c {
                    let base = (ni * c + ch) * plane;
                    for i in base..base + plane {
                        sum_dy[ch] += dy[i];
                        sum_dy_xhat[ch] += dy[i] * xhat[i];
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![E::zero(); dy.len()];
                for ni in 0..n {
                    for ch in 0..c {
                        let base = (ni * c + ch) * plane;
                        if train {
                            let k = g[ch] * inv_std[ch] / cnt;
                            for i in base..base + plane {
                                dx[i] = k * (cnt * dy[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]);
                            }
                        } else {
                            let k = g[ch] * inv_std[ch];
                            for i in base..base + plane {
                                dx[i] = k * dy[i];
                            }
                        }
                    }
                }
                dx
            });
            vec![
                dx,
                needs[1].then_some(sum_dy_xhat),
                needs[2].then_some(sum_dy),
            ]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_identity_with_unit_stats() {
        let x = Tensor::<f64>::from_vec(vec![0.5, -1.0, 2.0, 3.0], &[1, 2, 1, 2]).unwrap();
        let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
        let y = batch_norm2d(
            &x,
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            RunningStats { mean: &mut m, var: &mut v },
            false,
            BN_MOMENTUM,
            BN_EPS,
        )
        .unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn train_normalizes_and_updates_running_stats() {
        let vals: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f64 * 1.3).sin() * 4.0 + 2.0).collect();
        let x = Tensor::from_vec(vals, &[2, 3, 2, 2]).unwrap();
        let (mut m, mut v) = (vec![0.0; 3], vec![1.0; 3]);
        let y = batch_norm2d(
            &x,
            &Tensor::ones(&[3]),
            &Tensor::zeros(&[3]),
            RunningStats { mean: &mut m, var: &mut v },
            true,
            BN_MOMENTUM,
            BN_EPS,
        )
        .unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| y.data()[(n * 3 + ch) * 4..(n * 3 + ch) * 4 + 4].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 8.0;
            let var = vals.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
        }
        assert!(m.iter().any(|&a| a != 0.0));
    }

    #[test]
    fn zero_variance_is_finite() {
        let x = Tensor::<f32>::full(&[4, 1, 1, 1], 3.0);
        let (mut m, mut v) = (vec![0.0f32], vec![1.0f32]);
        let y = batch_norm2d(
            &x,
            &Tensor::ones(&[1]),
            &Tensor::zeros(&[1]),
            RunningStats { mean: &mut m, var: &mut v },
            true,
            0.1,
            1e-5,
        )
        .unwrap();
        assert!(y.all_finite());
        assert!(y.data().iter().all(|&a| a == 0.0));
    }
}
