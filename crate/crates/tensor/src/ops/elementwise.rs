use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::profile::{self, OpCost};
use crate::tensor::Tensor;

fn same_shape<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        if a.rank() != b.rank() {
            return Err(TensorError::Rank {
                op,
                expected: a.rank(),
                shape: b.shape().to_vec(),
            });
        }
        let (i, (&x, &y)) = a
            .shape()
            .iter()
            .zip(b.shape())
            .enumerate()
            .find(|(_, (x, y))| x != y)
            .expect("shapes differ");
        const DIMS: [&str; 4] = ["dim0", "dim1", "dim2", "dim3"];
        return Err(TensorError::ShapeMismatch {
            op,
            dim: DIMS.get(i).copied().unwrap_or("trailing dim"),
            expected: x,
            got: y,
        });
    }
    Ok(())
}

pub fn add<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    same_shape("add", a, b)?;
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    profile::record(|| OpCost::Elementwise {
        elems: data.len() as u64,
    });
    Ok(Tensor::from_op(
        "add",
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone()],
        |g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.to_vec()),
            ]
        },
    ))
}

pub fn mul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    same_shape("mul", a, b)?;
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    profile::record(|| OpCost::Elementwise {
        elems: data.len() as u64,
    });
    let (sa, sb) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        "mul",
        data,
        a.shape().to_vec(),
        vec![a.clone(), b.clone()],
        move |g, needs| {
            let ga = needs[0].then(|| g.iter().zip(sb.data()).map(|(&g, &y)| g * y).collect());
            let gb = needs[1].then(|| g.iter().zip(sa.data()).map(|(&g, &x)| g * x).collect());
            vec![ga, gb]
        },
    ))
}

pub fn scale<E: Element>(a: &Tensor<E>, s: E) -> Tensor<E> {
    let data: Vec<E> = a.data().iter().map(|&x| x * s).collect();
    profile::record(|| OpCost::Elementwise {
        elems: data.len() as u64,
    });
    Tensor::from_op("scale", data, a.shape().to_vec(), vec![a.clone()], move |g, _| {
        vec![Some(g.iter().map(|&v| v * s).collect())]
    })
}

/// Rectifier; the subgradient at exactly zero is zero.
pub fn relu<E: Element>(a: &Tensor<E>) -> Tensor<E> {
    let zero = E::zero();
    let data: Vec<E> = a.data().iter().map(|&x| if x > zero { x } else { zero }).collect();
    profile::record(|| OpCost::Activation {
        elems: data.len() as u64,
    });
    let src = a.clone();
    Tensor::from_op("relu", data, a.shape().to_vec(), vec![a.clone()], move |g, _| {
        let gi = g
            .iter()
            .zip(src.data())
            .map(|(&g, &x)| if x > zero { g } else { zero })
            .collect();
        vec![Some(gi)]
    })
}

/// `min(max(x, 0), 6)`; gradient passes on the open interval (0, 6).
pub fn relu6<E: Element>(a: &Tensor<E>) -> Tensor<E> {
    let zero = E::zero();
    let six = E::of(6.0);
    let data: Vec<E> = a.data().iter().map(|&x| x.max(zero).min(six)).collect();
    profile::record(|| OpCost::Activation {
        elems: data.len() as u64,
    });
    let src = a.clone();
    Tensor::from_op("relu6", data, a.shape().to_vec(), vec![a.clone()], move |g, _| {
        let gi = g
            .iter()
            .zip(src.data())
            .map(|(&g, &x)| if x > zero && x < six { g } else { zero })
            .collect();
        vec![Some(gi)]
    })
}

pub fn sigmoid<E: Element>(a: &Tensor<E>) -> Tensor<E> {
    let one = E::one();
    let data: Vec<E> = a.data().iter().map(|&x| one / (one + (-x).exp())).collect();
    profile::record(|| OpCost::Elementwise {
        elems: data.len() as u64,
    });
    let out = data.clone();
    Tensor::from_op("sigmoid", data, a.shape().to_vec(), vec![a.clone()], move |g, _| {
        let gi = g.iter().zip(&out).map(|(&g, &y)| g * y * (one - y)).collect();
        vec![Some(gi)]
    })
}

pub fn sum<E: Element>(a: &Tensor<E>) -> Tensor<E> {
    let total: E = a.data().iter().copied().sum();
    let n = a.numel();
    Tensor::from_op("sum", vec![total], vec![], vec![a.clone()], move |g, _| {
        vec![Some(vec![g[0]; n])]
    })
}

pub fn mean<E: Element>(a: &Tensor<E>) -> Result<Tensor<E>> {
    let n = a.numel();
    if n == 0 {
        return Err(TensorError::InvalidArgument {
            op: "mean",
            msg: "empty tensor".into(),
        });
    }
    let inv = E::one() / E::from_usize(n).expect("count");
    let total: E = a.data().iter().copied().sum();
    Ok(Tensor::from_op("mean", vec![total * inv], vec![], vec![a.clone()], move |g, _| {
        vec![Some(vec![g[0] * inv; n])]
    }))
}

/// Same data, new shape (copying; tensors are immutable).
pub fn reshape<E: Element>(a: &Tensor<E>, shape: &[usize]) -> Result<Tensor<E>> {
    if shape.iter().product::<usize>() != a.numel() {
        return Err(TensorError::DataLength {
            len: a.numel(),
            shape: shape.to_vec(),
        });
    }
    Ok(Tensor::from_op(
        "reshape",
        a.to_vec(),
        shape.to_vec(),
        vec![a.clone()],
        |g, _| vec![Some(g.to_vec())],
    ))
}

/// `[N, ...] -> [N, prod(...)]`.
pub fn flatten<E: Element>(a: &Tensor<E>) -> Result<Tensor<E>> {
    let n = *a.shape().first().ok_or(TensorError::Rank {
        op: "flatten",
        expected: 2,
        shape: vec![],
    })?;
    let rest = if n == 0 { 0 } else { a.numel() / n };
    reshape(a, &[n, rest])
}
