use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy of `logits [N,K]` against integer labels.
pub fn softmax_cross_entropy<E: Element>(logits: &Tensor<E>, labels: &[usize]) -> Result<Tensor<E>> {
    const OP: &str = "softmax_cross_entropy";
    let (n, k) = logits.dims2(OP)?;
    if k == 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: "empty class dimension".into(),
        });
    }
    if labels.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            dim: "batch",
            expected: n,
            got: labels.len(),
        });
    }
    if n == 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: "empty batch".into(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: format!("label {bad} out of range for {k} classes"),
        });
    }
    let probs = softmax_rows(logits.data(), k);
    let inv_n = E::one() / E::from_usize(n).expect("batch");
    let mut loss = E::zero();
    for (row, &l) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<E>().ln();
        loss += lse - row[l];
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        OP,
        vec![loss * inv_n],
        vec![],
        vec![logits.clone()],
        move |g, _| {
            let scale = g[0] * inv_n;
            let mut d = probs;
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] -= E::one();
            }
            d.iter_mut().for_each(|v| *v *= scale);
            vec![Some(d)]
        },
    ))
}

/// Numerically stable row-wise softmax of a `[rows, k]` buffer.
pub fn softmax_rows<E: Element>(data: &[E], k: usize) -> Vec<E> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(k) {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let z: E = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let x = Tensor::<f64>::zeros(&[3, 10]);
        let l = softmax_cross_entropy(&x, &[0, 4, 9]).unwrap();
        assert!((l.item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_class_dim_errors() {
        let x = Tensor::<f32>::zeros(&[2, 0]);
        assert!(softmax_cross_entropy(&x, &[0, 0]).is_err());
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0, 0.5], &[1, 3]).unwrap();
        softmax_cross_entropy(&x, &[1]).unwrap().backward().unwrap();
        let p = softmax_rows(x.data(), 3);
        let g = x.grad().unwrap();
        assert!((g[0] - p[0]).abs() < 1e-12);
        assert!((g[1] - (p[1] - 1.0)).abs() < 1e-12);
    }
}
