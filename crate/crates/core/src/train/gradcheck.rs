//! Central-difference gradient checks in 64-bit precision.

use modcnn_tensor::{ops, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanism::SelectionResult;
use crate::nn::{zero_grads, ForwardCtx, ForwardObserver, Module, Param, Visitor};

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Entries sampled per parameter tensor.
    pub max_per_tensor: usize,
    /// Fresh inputs drawn when a selection is tied or flips under
    /// perturbation before giving up.
    pub max_resamples: usize,
    /// Batch statistics in normalization layers.
    pub train: bool,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            eps: 1e-5,
            tolerance: 1e-4,
            max_per_tensor: 200,
            max_resamples: 8,
            train: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude over the whole tensor.
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub resamples: usize,
}

impl GradcheckReport {
    pub fn tensor(&self, name: &str) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Gradients smaller than this are compared on absolute error instead.
/// Some are structurally zero, e.g. the scale of a layer followed by batch
/// normalization, and the difference quotient there is pure rounding noise.
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

#[derive(Default)]
struct Selections(Vec<Vec<usize>>, bool);

impl ForwardObserver for Selections {
    fn selection(&mut self, _block: &str, sel: &SelectionResult) {
        for i in 0..sel.n {
            let mut s: Vec<f64> = sel.scores[i * sel.c..(i + 1) * sel.c].to_vec();
            s.sort_by(|a, b| b.total_cmp(a));
            if sel.k < sel.c && s[sel.k - 1] == s[sel.k] {
                self.1 = true;
            }
        }
        self.0.push(sel.indices.clone());
    }
}

fn objective(
    m: &mut dyn Module<f64>,
    x: &Tensor<f64>,
    r: Option<&Tensor<f64>>,
    opts: &GradcheckOptions,
) -> Result<(Tensor<f64>, Tensor<f64>, Selections)> {
    let mut sel = Selections::default();
    let mut ctx = ForwardCtx::new(opts.train, ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed)).with_observer(&mut sel);
    let y = m.forward(x, &mut ctx)?;
    drop(ctx);
    let l = match r {
        Some(r) => ops::sum(&ops::mul(&y, r)?),
        None => ops::sum(&y),
    };
    Ok((y, l, sel))
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Ok(Tensor::from_vec(
        (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        shape,
    )?)
}

/// Runs `f` on the `ordinal`-th parameter in visit order.
fn with_param(m: &mut dyn Module<f64>, ordinal: usize, f: &mut dyn FnMut(&mut Param<f64>)) {
    struct V<'a> {
        target: usize,
        i: usize,
        f: &'a mut dyn FnMut(&mut Param<f64>),
    }
    impl Visitor<f64> for V<'_> {
        fn param(&mut self, p: &mut Param<f64>) {
            if self.i == self.target {
                (self.f)(p);
            }
            self.i += 1;
        }
    }
    m.visit(&mut V { target: ordinal, i: 0, f });
}

fn grads(m: &mut dyn Module<f64>) -> Vec<(String, Vec<f64>, Vec<f64>)> {
    struct G(Vec<(String, Vec<f64>, Vec<f64>)>);
    impl Visitor<f64> for G {
        fn param(&mut self, p: &mut Param<f64>) {
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            self.0.push((p.name().to_string(), p.data().to_vec(), g));
        }
    }
    let mut g = G(Vec::new());
    m.visit(&mut g);
    g.0
}

enum Attempt {
    Done(Vec<TensorCheck>),
    Resample,
}

fn attempt(m: &mut dyn Module<f64>, input_shape: &[usize], opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<Attempt> {
    let x = normal(input_shape, rng)?;
    let (y, _, _) = {
        let _g = modcnn_tensor::NoGradGuard::new();
        objective(m, &x, None, opts)?
    };
    let r = normal(y.shape(), rng)?;
    zero_grads(m);
    let (_, loss, base) = objective(m, &x, Some(&r), opts)?;
    if base.1 {
        return Ok(Attempt::Resample);
    }
    loss.backward()?;
    let params = grads(m);
    zero_grads(m);
    let _g = modcnn_tensor::NoGradGuard::new();
    let mut checks = Vec::with_capacity(params.len());
    for (ordinal, (name, data, grad)) in params.iter().enumerate() {
        let n = data.len();
        let picks: Vec<usize> = if n <= opts.max_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, opts.max_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst = 0.0f64;
        for &i in &picks {
            let mut eval = |delta: f64| -> Result<(f64, bool)> {
                let mut perturbed = data.clone();
                perturbed[i] += delta;
                let mut err = None;
                with_param(m, ordinal, &mut |p| {
                    if let Err(e) = p.set_data(perturbed.clone()) {
                        err = Some(e);
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                let (_, l, sel) = objective(m, &x, Some(&r), opts)?;
                Ok((l.item(), sel.0 != base.0 || sel.1))
            };
            let (lp, flip_p) = eval(opts.eps)?;
            let (lm, flip_m) = eval(-opts.eps)?;
            let mut restore_err = None;
            with_param(m, ordinal, &mut |p| {
                if let Err(e) = p.set_data(data.clone()) {
                    restore_err = Some(e);
                }
            });
            if let Some(e) = restore_err {
                return Err(e);
            }
            if flip_p || flip_m {
                return Ok(Attempt::Resample);
            }
            let numeric = (lp - lm) / (2.0 * opts.eps);
            worst = worst.max(relative_error(grad[i], numeric));
        }
        checks.push(TensorCheck {
            name: name.clone(),
            numel: n,
            checked: picks.len(),
            max_rel_error: worst,
            max_abs_grad: grad.iter().fold(0.0, |a, g| a.max(g.abs())),
        });
    }
    Ok(Attempt::Done(checks))
}

/// Adds `N(0, scale^2)` noise to every parameter so a check runs at a
/// generic point rather than at an initialization with exact symmetries,
/// such as zero normalization shifts making the preceding scale inert.
pub fn jitter_params(m: &mut dyn Module<f64>, scale: f64, seed: u64) -> Result<()> {
    struct J<'a> {
        rng: &'a mut ChaCha8Rng,
        scale: f64,
        err: Option<Error>,
    }
    impl Visitor<f64> for J<'_> {
        fn param(&mut self, p: &mut Param<f64>) {
            let data = p
                .data()
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut *self.rng);
                    v + self.scale * z
                })
                .collect();
            if let Err(e) = p.set_data(data) {
                self.err.get_or_insert(e);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut j = J {
        rng: &mut rng,
        scale,
        err: None,
    };
    m.visit(&mut j);
    j.err.map_or(Ok(()), Err)
}

/// Compares analytic parameter gradients of `sum(m(x) * r)` against central
/// differences for random `x` of `input_shape` and random `r`. Inputs whose
/// channel scores tie at the top-k boundary, or whose selection changes
/// under perturbation, are redrawn.
pub fn gradcheck(m: &mut dyn Module<f64>, input_shape: &[usize], opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for resamples in 0..=opts.max_resamples {
        if let Attempt::Done(tensors) = attempt(m, input_shape, opts, &mut rng)? {
            let max_rel_error = tensors.iter().fold(0.0f64, |a, t| a.max(t.max_rel_error));
            return Ok(GradcheckReport {
                passed: max_rel_error <= opts.tolerance,
                tensors,
                max_rel_error,
                tolerance: opts.tolerance,
                resamples,
            });
        }
    }
    Err(Error::Mechanism(format!(
        "gradcheck: selection tied or flipped on {} consecutive inputs",
        opts.max_resamples + 1
    )))
}
