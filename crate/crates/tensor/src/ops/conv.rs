//! 2-D convolution via patch gathering (im2col) into a matrix product.

use rayon::prelude::*;

use crate::element::{matmul, Element};
use crate::error::{Result, TensorError};
use crate::profile::{self, OpCost};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dParams {
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + kj - pad` is in range.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > kj {
            (self.pad - kj).div_ceil(s)
        } else {
            0
        };
        let hi_in = self.w + self.pad; // ix < w  <=>  ox*s + kj < w + pad
        let hi = if hi_in > kj {
            ((hi_in - kj - 1) / s + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

fn im2col<E: Element>(x: &[E], g: &Geometry, out: &mut [E]) {
    let plane = g.ho * g.wo;
    let zero = E::zero();
    for ci in 0..g.c {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut out[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(zero);
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    seg[..lo].fill(zero);
                    seg[hi..].fill(zero);
                    if lo == hi {
                        continue;
                    }
                    let ix0 = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        seg[lo..hi].copy_from_slice(&srow[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (j, v) in seg[lo..hi].iter_mut().enumerate() {
                            *v = srow[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<E: Element>(cols: &[E], g: &Geometry, dx: &mut [E]) {
    let plane = g.ho * g.wo;
    for ci in 0..g.c {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let seg = &src[oy * g.wo..(oy + 1) * g.wo];
                    if lo == hi {
                        continue;
                    }
                    let ix0 = lo * g.stride + kj - g.pad;
                    for (j, &v) in seg[lo..hi].iter().enumerate() {
                        drow[ix0 + j * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// `input [N,Cin,H,W]`, `weight [Cout,Cin/groups,Kh,Kw]`, optional `bias [Cout]`.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    params: Conv2dParams,
) -> Result<Tensor<E>> {
    const OP: &str = "conv2d";
    let (n, cin, h, w) = input.dims4(OP)?;
    let (cout, cin_g, kh, kw) = weight.dims4(OP)?;
    let Conv2dParams {
        stride,
        padding,
        groups,
    } = params;
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: "stride must be >= 1".into(),
        });
    }
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: format!("groups={groups} must divide Cin={cin} and Cout={cout}"),
        });
    }
    if cin_g * groups != cin {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "Cin",
            expected: cin,
            got: cin_g * groups,
        });
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "bias",
                expected: cout,
                got: b.numel(),
            });
        }
    }
    let ho = conv_out_dim(h, kh, stride, padding).ok_or(TensorError::InvalidArgument {
        op: OP,
        msg: format!("kernel height {kh} exceeds padded input height {}", h + 2 * padding),
    })?;
    let wo = conv_out_dim(w, kw, stride, padding).ok_or(TensorError::InvalidArgument {
        op: OP,
        msg: format!("kernel width {kw} exceeds padded input width {}", w + 2 * padding),
    })?;

    let geo = Geometry {
        c: cin_g,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        ho,
        wo,
    };
    let cout_g = cout / groups;
    let ckk = cin_g * kh * kw;
    let plane = ho * wo;
    let in_sample = cin * h * w;
    let out_sample = cout * plane;

    let xd = input.data();
    let wd = weight.data();
    let mut out = vec![E::zero(); n * out_sample];
    out.par_chunks_mut(out_sample.max(1))
        .enumerate()
        .for_each(|(ni, o)| {
            let xs = &xd[ni * in_sample..(ni + 1) * in_sample];
            let mut cols = if geo.is_pointwise() {
                Vec::new()
            } else {
                vec![E::zero(); ckk * plane]
            };
            for g in 0..groups {
                let xg = &xs[g * cin_g * h * w..(g + 1) * cin_g * h * w];
                let b: &[E] = if geo.is_pointwise() {
                    xg
                } else {
                    im2col(xg, &geo, &mut cols);
                    &cols
                };
                let wg = &wd[g * cout_g * ckk..(g + 1) * cout_g * ckk];
                let og = &mut o[g * cout_g * plane..(g + 1) * cout_g * plane];
                matmul(cout_g, ckk, plane, wg, false, b, false, og, false);
            }
            if let Some(bias) = bias {
                for (co, &bv) in bias.data().iter().enumerate() {
                    o[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
                }
            }
        });

    profile::record(|| OpCost::Conv {
        macs: (n * cout * ckk * plane) as u64,
        out_elems: (n * out_sample) as u64,
        bias: bias.is_some(),
    });

    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let (x_saved, w_saved) = (input.clone(), weight.clone());
    Ok(Tensor::from_op(
        OP,
        out,
        vec![n, cout, ho, wo],
        inputs,
        move |gy, needs| {
            let xd = x_saved.data();
            let wd = w_saved.data();
            let mut dx = needs[0].then(|| vec![E::zero(); n * in_sample]);
            let mut dw = needs[1].then(|| vec![E::zero(); cout * ckk]);
            let db = needs.get(2).copied().unwrap_or(false).then(|| {
                let mut db = vec![E::zero(); cout];
                for ni in 0..n {
                    for (co, d) in db.iter_mut().enumerate() {
                        let s = &gy[ni * out_sample + co * plane..ni * out_sample + (co + 1) * plane];
                        *d += s.iter().copied().sum::<E>();
                    }
                }
                db
            });
            let mut cols = vec![E::zero(); if geo.is_pointwise() { 0 } else { ckk * plane }];
            for ni in 0..n {
                let xs = &xd[ni * in_sample..(ni + 1) * in_sample];
                for g in 0..groups {
                    let gyg = &gy[ni * out_sample + g * cout_g * plane
                        ..ni * out_sample + (g + 1) * cout_g * plane];
                    let wg = &wd[g * cout_g * ckk..(g + 1) * cout_g * ckk];
                    let xg = &xs[g * cin_g * h * w..(g + 1) * cin_g * h * w];
                    if let Some(dw) = dw.as_mut() {
                        let b: &[E] = if geo.is_pointwise() {
                            xg
                        } else {
                            im2col(xg, &geo, &mut cols);
                            &cols
                        };
                        let dwg = &mut dw[g * cout_g * ckk..(g + 1) * cout_g * ckk];
                        matmul(cout_g, plane, ckk, gyg, false, b, true, dwg, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxg = &mut dx[ni * in_sample + g * cin_g * h * w
                            ..ni * in_sample + (g + 1) * cin_g * h * w];
                        if geo.is_pointwise() {
                            matmul(ckk, cout_g, plane, wg, true, gyg, false, dxg, true);
                        } else {
                            matmul(ckk, cout_g, plane, wg, true, gyg, false, &mut cols, false);
                            col2im_add(&cols, &geo, dxg);
                        }
                    }
                }
            }
            let mut grads = vec![dx, dw];
            if needs.len() > 2 {
                grads.push(db);
            }
            grads
        },
    ))
}
