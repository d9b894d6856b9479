use crate::element::{matmul, Element};
use crate::error::{Result, TensorError};
use crate::profile::{self, OpCost};
use crate::tensor::Tensor;

/// `input [N,Fin] · weightᵀ [Fin,Fout] + bias [Fout]`.
pub fn linear<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    const OP: &str = "linear";
    let (n, fin) = input.dims2(OP)?;
    let (fout, wfin) = weight.dims2(OP)?;
    if wfin != fin {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "Fin",
            expected: fin,
            got: wfin,
        });
    }
    if let Some(b) = bias {
        if b.numel() != fout {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "bias",
                expected: fout,
                got: b.numel(),
            });
        }
    }
    let mut out = vec![E::zero(); n * fout];
    matmul(n, fin, fout, input.data(), false, weight.data(), true, &mut out, false);
    if let Some(b) = bias {
        for row in out.chunks_mut(fout) {
            row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o += bv);
        }
    }
    profile::record(|| OpCost::Linear {
        macs: (n * fin * fout) as u64,
        out_features: fout as u64,
        bias: bias.is_some(),
    });

    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    let (x, w) = (input.clone(), weight.clone());
    Ok(Tensor::from_op(OP, out, vec![n, fout], inputs, move |g, needs| {
        let dx = needs[0].then(|| {
            let mut dx = vec![E::zero(); n * fin];
            matmul(n, fout, fin, g, false, w.data(), false, &mut dx, false);
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![E::zero(); fout * fin];
            matmul(fout, n, fin, g, true, x.data(), false, &mut dw, false);
            dw
        });
        let mut grads = vec![dx, dw];
        if needs.len() > 2 {
            grads.push(needs[2].then(|| {
                let mut db = vec![E::zero(); fout];
                for row in g.chunks(fout) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
                db
            }));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_gives_bias() {
        let x = Tensor::<f64>::from_vec(vec![1., 2., 3., 4., 5., 6.], &[2, 3]).unwrap();
        let w = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::from_vec(vec![0.5, -1.5], &[2]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn identity_weight() {
        let x = Tensor::<f64>::from_vec(vec![1., -2., 3., 4.], &[2, 2]).unwrap();
        let w = Tensor::<f64>::from_vec(vec![1., 0., 0., 1.], &[2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(&[2]);
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), x.data());
    }

    #[test]
    fn matches_dot_product_loop() {
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.91).cos()).collect();
        let b = vec![0.1, -0.2, 0.3];
        let y = linear(
            &Tensor::from_vec(x.clone(), &[2, 4]).unwrap(),
            &Tensor::from_vec(w.clone(), &[3, 4]).unwrap(),
            Some(&Tensor::from_vec(b.clone(), &[3]).unwrap()),
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let want: f64 = (0..4).map(|p| x[i * 4 + p] * w[j * 4 + p]).sum::<f64>() + b[j];
                assert!((y.data()[i * 3 + j] - want).abs() <= 1e-6 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn fin_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 4]);
        let w = Tensor::<f32>::zeros(&[3, 5]);
        assert!(matches!(
            linear(&x, &w, None),
            Err(TensorError::ShapeMismatch { dim: "Fin", .. })
        ));
    }
}
