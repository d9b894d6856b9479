use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::conv::conv_out_dim;
use crate::profile::{self, OpCost};
use crate::tensor::Tensor;

/// Mean over each `H x W` plane: `[N,C,H,W] -> [N,C,1,1]`.
pub fn adaptive_avg_pool_1x1<E: Element>(input: &Tensor<E>) -> Result<Tensor<E>> {
    const OP: &str = "adaptive_avg_pool_1x1";
    let (n, c, h, w) = input.dims4(OP)?;
    if h == 0 || w == 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: "spatial extent must be >= 1".into(),
        });
    }
    let plane = h * w;
    let inv = E::one() / E::from_usize(plane).expect("plane size");
    let out: Vec<E> = input
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<E>() * inv)
        .collect();
    profile::record(|| OpCost::Pool {
        in_elems: input.numel() as u64,
    });
    Ok(Tensor::from_op(
        OP,
        out,
        vec![n, c, 1, 1],
        vec![input.clone()],
        move |g, _| {
            let mut dx = Vec::with_capacity(n * c * plane);
            for &gv in g {
                dx.extend(std::iter::repeat_n(gv * inv, plane));
            }
            vec![Some(dx)]
        },
    ))
}

/// Max pooling with implicit `-inf` padding. Ties go to the first maximum in
/// scan order.
pub fn max_pool2d<E: Element>(
    input: &Tensor<E>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    const OP: &str = "max_pool2d";
    let (n, c, h, w) = input.dims4(OP)?;
    if kernel == 0 || stride == 0 || padding * 2 > kernel {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: format!("kernel={kernel} stride={stride} padding={padding}"),
        });
    }
    let ho = conv_out_dim(h, kernel, stride, padding).ok_or(TensorError::InvalidArgument {
        op: OP,
        msg: "kernel larger than padded input".into(),
    })?;
    let wo = conv_out_dim(w, kernel, stride, padding).ok_or(TensorError::InvalidArgument {
        op: OP,
        msg: "kernel larger than padded input".into(),
    })?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = E::neg_infinity();
                let mut best_i = usize::MAX;
                for ki in 0..kernel {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..kernel {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_i == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    profile::record(|| OpCost::Pool {
        in_elems: input.numel() as u64,
    });
    let len = input.numel();
    Ok(Tensor::from_op(
        OP,
        out,
        vec![n, c, ho, wo],
        vec![input.clone()],
        move |g, _| {
            let mut dx = vec![E::zero(); len];
            for (&gv, &i) in g.iter().zip(&argmax) {
                dx[i] += gv;
            }
            vec![Some(dx)]
        },
    ))
}
