//! Parameterized layers and the module plumbing shared by every network.

use modcnn_tensor::ops::{self, Conv2dParams, RunningStats};
use modcnn_tensor::{Element, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::Serialize;

use crate::error::{LayerContext, Result};
use crate::mechanism::SelectionResult;

/// A named trainable tensor. The tensor is replaced wholesale after each
/// optimizer step so that autograd graphs never alias updated storage.
#[derive(Clone, Debug)]
pub struct Param<E: Element> {
    name: String,
    value: Tensor<E>,
}

impl<E: Element> Param<E> {
    pub fn new(name: impl Into<String>, data: Vec<E>, shape: &[usize]) -> Result<Self> {
        Ok(Param {
            name: name.into(),
            value: Tensor::param(data, shape)?,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn data(&self) -> &[E] {
        self.value.data()
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.value.grad()
    }

    pub fn set_data(&mut self, data: Vec<E>) -> Result<()> {
        self.value = Tensor::param(data, self.value.shape())?;
        Ok(())
    }
}

/// Receives every parameter and persistent buffer of a module tree in a
/// fixed order.
pub trait Visitor<E: Element> {
    fn param(&mut self, p: &mut Param<E>);
    fn buffer(&mut self, _name: &str, _data: &mut Vec<E>) {}
}

/// Per-block hooks fired during a forward pass.
pub trait ForwardObserver {
    fn selection(&mut self, _block: &str, _sel: &SelectionResult) {}
    fn shape(&mut self, _block: &str, _stage: &'static str, _shape: &[usize]) {}
}

pub struct ForwardCtx<'a> {
    pub train: bool,
    pub rng: ChaCha8Rng,
    pub observer: Option<&'a mut dyn ForwardObserver>,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(train: bool, rng: ChaCha8Rng) -> Self {
        ForwardCtx {
            train,
            rng,
            observer: None,
        }
    }

    pub fn eval() -> Self {
        use rand::SeedableRng;
        Self::new(false, ChaCha8Rng::seed_from_u64(0))
    }

    pub fn with_observer(mut self, observer: &'a mut dyn ForwardObserver) -> Self {
        self.observer = Some(observer);
        self
    }

    pub(crate) fn observe_shape(&mut self, block: &str, stage: &'static str, shape: &[usize]) {
        if let Some(o) = self.observer.as_deref_mut() {
            o.shape(block, stage, shape);
        }
    }

    pub(crate) fn observe_selection(&mut self, block: &str, sel: &SelectionResult) {
        if let Some(o) = self.observer.as_deref_mut() {
            o.selection(block, sel);
        }
    }
}

pub trait Module<E: Element>: Send {
    fn forward(&mut self, x: &Tensor<E>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<E>>;
    fn visit(&mut self, v: &mut dyn Visitor<E>);
}

/// Total number of parameter elements.
pub fn param_count<E: Element>(m: &mut dyn Module<E>) -> usize {
    struct Count(usize);
    impl<E: Element> Visitor<E> for Count {
        fn param(&mut self, p: &mut Param<E>) {
            self.0 += p.numel();
        }
    }
    let mut c = Count(0);
    m.visit(&mut c);
    c.0
}

pub fn zero_grads<E: Element>(m: &mut dyn Module<E>) {
    struct Z;
    impl<E: Element> Visitor<E> for Z {
        fn param(&mut self, p: &mut Param<E>) {
            p.tensor().zero_grad();
        }
    }
    m.visit(&mut Z);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Relu6,
}

impl Activation {
    pub fn apply<E: Element>(self, x: Tensor<E>) -> Tensor<E> {
        match self {
            Activation::None => x,
            Activation::Relu => ops::relu(&x),
            Activation::Relu6 => ops::relu6(&x),
        }
    }
}

fn normal_vec<E: Element>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<E> {
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| E::of(d.sample(rng))).collect()
}

fn uniform_vec<E: Element>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<E> {
    if bound == 0.0 {
        return vec![E::zero(); n];
    }
    let d = Uniform::new(-bound, bound).expect("bound > 0");
    (0..n).map(|_| E::of(rng.sample(d))).collect()
}

/// Geometry of one convolution, shared by the model builder and the cost model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
    pub act: Activation,
}

impl ConvSpec {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride,
            groups: 1,
            bias: false,
            act: Activation::None,
        }
    }

    pub fn act(mut self, act: Activation) -> Self {
        self.act = act;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin / self.groups, self.kernel, self.kernel]
    }
}

pub struct Conv2d<E: Element> {
    pub weight: Param<E>,
    pub bias: Option<Param<E>>,
    params: Conv2dParams,
    name: String,
}

impl<E: Element> Conv2d<E> {
    /// Kaiming normal initialization in fan-out mode.
    pub fn new(spec: &ConvSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let shape = spec.weight_shape();
        let fan_out = spec.cout * spec.kernel * spec.kernel / spec.groups.max(1);
        let std = (2.0 / fan_out as f64).sqrt();
        let weight = Param::new(
            format!("{}.weight", spec.name),
            normal_vec(rng, shape.iter().product(), std),
            &shape,
        )?;
        let bias = spec
            .bias
            .then(|| Param::new(format!("{}.bias", spec.name), vec![E::zero(); spec.cout], &[spec.cout]))
            .transpose()?;
        Ok(Conv2d {
            weight,
            bias,
            params: Conv2dParams::new(spec.stride, spec.padding()).with_groups(spec.groups),
            name: spec.name.clone(),
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::conv2d(x, self.weight.tensor(), self.bias.as_ref().map(|b| b.tensor()), self.params)
            .in_layer(&self.name)
    }

    pub fn visit(&mut self, v: &mut dyn Visitor<E>) {
        v.param(&mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param(b);
        }
    }
}

pub struct BatchNorm2d<E: Element> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
    name: String,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Param::new(format!("{name}.weight"), vec![E::one(); channels], &[channels])?,
            beta: Param::new(format!("{name}.bias"), vec![E::zero(); channels], &[channels])?,
            running_mean: vec![E::zero(); channels],
            running_var: vec![E::one(); channels],
            name: name.to_string(),
        })
    }

    pub fn forward(&mut self, x: &Tensor<E>, train: bool) -> Result<Tensor<E>> {
        ops::batch_norm2d(
            x,
            self.gamma.tensor(),
            self.beta.tensor(),
            RunningStats {
                mean: &mut self.running_mean,
                var: &mut self.running_var,
            },
            train,
            E::of(ops::BN_MOMENTUM),
            E::of(ops::BN_EPS),
        )
        .in_layer(&self.name)
    }

    pub fn visit(&mut self, v: &mut dyn Visitor<E>) {
        v.param(&mut self.gamma);
        v.param(&mut self.beta);
        v.buffer(&format!("{}.running_mean", self.name), &mut self.running_mean);
        v.buffer(&format!("{}.running_var", self.name), &mut self.running_var);
    }
}

pub struct Linear<E: Element> {
    pub weight: Param<E>,
    pub bias: Param<E>,
    name: String,
}

impl<E: Element> Linear<E> {
    /// Uniform fan-in initialization for weight and bias.
    pub fn new(name: &str, fin: usize, fout: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = 1.0 / (fin as f64).sqrt();
        Ok(Linear {
            weight: Param::new(format!("{name}.weight"), uniform_vec(rng, fout * fin, bound), &[fout, fin])?,
            bias: Param::new(format!("{name}.bias"), uniform_vec(rng, fout, bound), &[fout])?,
            name: name.to_string(),
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::linear(x, self.weight.tensor(), Some(self.bias.tensor())).in_layer(&self.name)
    }

    pub fn visit(&mut self, v: &mut dyn Visitor<E>) {
        v.param(&mut self.weight);
        v.param(&mut self.bias);
    }
}

/// Convolution, batch norm, then an optional activation.
pub struct ConvBn<E: Element> {
    pub conv: Conv2d<E>,
    pub bn: BatchNorm2d<E>,
    pub act: Activation,
}

impl<E: Element> ConvBn<E> {
    /// The norm layer is named `<conv name>.bn`.
    pub fn new(spec: &ConvSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ConvBn {
            conv: Conv2d::new(spec, rng)?,
            bn: BatchNorm2d::new(&format!("{}.bn", spec.name), spec.cout)?,
            act: spec.act,
        })
    }

    pub fn forward(&mut self, x: &Tensor<E>, train: bool) -> Result<Tensor<E>> {
        let y = self.conv.forward(x)?;
        let y = self.bn.forward(&y, train)?;
        Ok(self.act.apply(y))
    }

    pub fn visit(&mut self, v: &mut dyn Visitor<E>) {
        self.conv.visit(v);
        self.bn.visit(v);
    }
}
