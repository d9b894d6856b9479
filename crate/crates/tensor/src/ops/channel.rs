//! Per-sample channel indexing: gather, scale and scatter-add along dim 1.
//!
//! Index buffers are flat `N * k` arrays, sample-major.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::profile::{self, OpCost};
use crate::tensor::Tensor;

fn split_dim1<E: Element>(op: &'static str, x: &Tensor<E>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [n, c, rest @ ..] => Ok((*n, *c, rest.iter().product())),
        s => Err(TensorError::Rank {
            op,
            expected: 2,
            shape: s.to_vec(),
        }),
    }
}

fn check_indices(op: &'static str, idx: &[usize], n: usize, k: usize, c: usize) -> Result<()> {
    if idx.len() != n * k {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "indices",
            expected: n * k,
            got: idx.len(),
        });
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
        return Err(TensorError::InvalidArgument {
            op,
            msg: format!("channel index {bad} out of range for {c} channels"),
        });
    }
    Ok(())
}

/// `out[n, j] = x[n, idx[n*k + j]]`.
pub fn gather_channels<E: Element>(x: &Tensor<E>, idx: &[usize], k: usize) -> Result<Tensor<E>> {
    const OP: &str = "gather_channels";
    let (n, c, inner) = split_dim1(OP, x)?;
    check_indices(OP, idx, n, k, c)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * k * inner);
    for ni in 0..n {
        for &ch in &idx[ni * k..(ni + 1) * k] {
            let base = (ni * c + ch) * inner;
            out.extend_from_slice(&xd[base..base + inner]);
        }
    }
    profile::record(|| OpCost::Elementwise {
        elems: out.len() as u64,
    });
    let mut shape = x.shape().to_vec();
    shape[1] = k;
    let idx = idx.to_vec();
    Ok(Tensor::from_op(OP, out, shape, vec![x.clone()], move |g, _| {
        let mut dx = vec![E::zero(); n * c * inner];
        for ni in 0..n {
            for (j, &ch) in idx[ni * k..(ni + 1) * k].iter().enumerate() {
                let src = &g[(ni * k + j) * inner..(ni * k + j + 1) * inner];
                let dst = &mut dx[(ni * c + ch) * inner..(ni * c + ch + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        vec![Some(dx)]
    }))
}

/// `out[n, j, ...] = x[n, j, ...] * s[n, j]` for `x [N,k,...]`, `s [N,k]`.
pub fn scale_channels<E: Element>(x: &Tensor<E>, s: &Tensor<E>) -> Result<Tensor<E>> {
    const OP: &str = "scale_channels";
    let (n, k, inner) = split_dim1(OP, x)?;
    let (sn, sk) = s.dims2(OP)?;
    if sn != n {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "N",
            expected: n,
            got: sn,
        });
    }
    if sk != k {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "channels",
            expected: k,
            got: sk,
        });
    }
    let mut out = x.to_vec();
    for (plane, &sv) in out.chunks_mut(inner.max(1)).zip(s.data()) {
        plane.iter_mut().for_each(|v| *v *= sv);
    }
    profile::record(|| OpCost::Elementwise {
        elems: out.len() as u64,
    });
    let (xs, ss) = (x.clone(), s.clone());
    Ok(Tensor::from_op(
        OP,
        out,
        x.shape().to_vec(),
        vec![x.clone(), s.clone()],
        move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = g.to_vec();
                for (plane, &sv) in dx.chunks_mut(inner.max(1)).zip(ss.data()) {
                    plane.iter_mut().for_each(|v| *v *= sv);
                }
                dx
            });
            let ds = needs[1].then(|| {
                g.chunks(inner.max(1))
                    .zip(xs.data().chunks(inner.max(1)))
                    .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<E>())
                    .collect()
            });
            vec![dx, ds]
        },
    ))
}

/// `out = base; out[n, pos[n*k + j]] += src[n, j]`. Positions within one
/// sample must be distinct.
pub fn scatter_add_channels<E: Element>(
    base: &Tensor<E>,
    src: &Tensor<E>,
    positions: &[usize],
) -> Result<Tensor<E>> {
    const OP: &str = "scatter_add_channels";
    let (n, c, inner) = split_dim1(OP, base)?;
    let (sn, k, sinner) = split_dim1(OP, src)?;
    if sn != n {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "N",
            expected: n,
            got: sn,
        });
    }
    if sinner != inner || base.rank() != src.rank() {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "spatial",
            expected: inner,
            got: sinner,
        });
    }
    if k > c {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "channels",
            expected: c,
            got: k,
        });
    }
    check_indices(OP, positions, n, k, c)?;
    for ni in 0..n {
        let p = &positions[ni * k..(ni + 1) * k];
        let mut seen = vec![false; c];
        for &ch in p {
            if std::mem::replace(&mut seen[ch], true) {
                return Err(TensorError::InvalidArgument {
                    op: OP,
                    msg: format!("duplicate position {ch} in sample {ni}"),
                });
            }
        }
    }
    let mut out = base.to_vec();
    let sd = src.data();
    for ni in 0..n {
        for (j, &ch) in positions[ni * k..(ni + 1) * k].iter().enumerate() {
            let s = &sd[(ni * k + j) * inner..(ni * k + j + 1) * inner];
            let d = &mut out[(ni * c + ch) * inner..(ni * c + ch + 1) * inner];
            d.iter_mut().zip(s).for_each(|(o, &v)| *o += v);
        }
    }
    profile::record(|| OpCost::Elementwise {
        elems: (n * k * inner) as u64,
    });
    let positions = positions.to_vec();
    Ok(Tensor::from_op(
        OP,
        out,
        base.shape().to_vec(),
        vec![base.clone(), src.clone()],
        move |g, needs| {
            let dbase = needs[0].then(|| g.to_vec());
            let dsrc = needs[1].then(|| {
                let mut d = Vec::with_capacity(n * k * inner);
                for ni in 0..n {
                    for &ch in &positions[ni * k..(ni + 1) * k] {
                        d.extend_from_slice(&g[(ni * c + ch) * inner..(ni * c + ch + 1) * inner]);
                    }
                }
                d
            });
            vec![dbase, dsrc]
        },
    ))
}
