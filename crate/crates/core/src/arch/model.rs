use modcnn_tensor::{ops, Element, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::ArchSpec;
use super::plan::{shortcut, stack_convs, BlockPlan, BlockRecord, HeadPlan, Shortcut};
use crate::error::{Error, LayerContext, Result};
use crate::mechanism::{ChannelSelector, ModBlock, ModBlockConfig};
use crate::nn::{Activation, ConvBn, ConvSpec, ForwardCtx, Linear, Module, Visitor};

enum Residual<E: Element> {
    None,
    Identity,
    Projection(ConvBn<E>),
}

/// A chain of conv-BN-activation units with an optional residual sum.
pub struct ConvStack<E: Element> {
    name: String,
    layers: Vec<ConvBn<E>>,
    residual: Residual<E>,
    post: Activation,
}

impl<E: Element> ConvStack<E> {
    /// The full standard block for `rec`.
    pub fn standard(rec: &BlockRecord, rng: &mut ChaCha8Rng) -> Result<Self> {
        let layers = build_units(&stack_convs(rec, &rec.name), rng)?;
        let (sc, post) = shortcut(rec);
        let residual = match sc {
            Shortcut::None => Residual::None,
            Shortcut::Identity => Residual::Identity,
            Shortcut::Projection(spec) => Residual::Projection(ConvBn::new(&spec, rng)?),
        };
        Ok(ConvStack {
            name: rec.name.clone(),
            layers,
            residual,
            post,
        })
    }

    /// The reduced `k`-channel block run inside a MoD block. It has no
    /// residual of its own; fusion provides it.
    pub fn inner(rec: &BlockRecord, rng: &mut ChaCha8Rng) -> Result<Self> {
        let name = format!("{}.inner", rec.name);
        Ok(ConvStack {
            layers: build_units(&stack_convs(rec, &name), rng)?,
            name,
            residual: Residual::None,
            post: Activation::None,
        })
    }

    pub fn last_mut(&mut self) -> &mut ConvBn<E> {
        self.layers.last_mut().expect("non-empty stack")
    }
}

fn build_units<E: Element>(specs: &[ConvSpec], rng: &mut ChaCha8Rng) -> Result<Vec<ConvBn<E>>> {
    specs.iter().map(|s| ConvBn::new(s, rng)).collect()
}

impl<E: Element> Module<E> for ConvStack<E> {
    fn forward(&mut self, x: &Tensor<E>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<E>> {
        let mut y = x.clone();
        for l in &mut self.layers {
            y = l.forward(&y, ctx.train)?;
        }
        let y = match &mut self.residual {
            Residual::None => y,
            Residual::Identity => ops::add(&y, x).in_layer(&self.name)?,
            Residual::Projection(p) => ops::add(&y, &p.forward(x, ctx.train)?).in_layer(&self.name)?,
        };
        Ok(self.post.apply(y))
    }

    fn visit(&mut self, v: &mut dyn Visitor<E>) {
        for l in &mut self.layers {
            l.visit(v);
        }
        if let Residual::Projection(p) = &mut self.residual {
            p.visit(v);
        }
    }
}

/// Selector plus reduced inner block for a MoD record; `spec` supplies
/// `c`, the reduction ratio, fusion and selector mode.
pub fn build_mod_block<E: Element>(rec: &BlockRecord, spec: &ArchSpec, rng: &mut ChaCha8Rng) -> Result<ModBlock<E>> {
    let cfg = ModBlockConfig::new(rec.in_channels, spec.c, rec.kind, &spec.fusion, &spec.selector)?;
    if rec.k != Some(cfg.k) {
        return Err(Error::config(format!(
            "{}: planned k {:?} disagrees with c = {} (k = {})",
            rec.name, rec.k, spec.c, cfg.k
        )));
    }
    let selector = ChannelSelector::new(&format!("{}.selector", rec.name), rec.in_channels, spec.ratio, rng)?;
    let inner = ConvStack::inner(rec, rng)?;
    Ok(ModBlock {
        name: rec.name.clone(),
        cfg,
        selector,
        inner: Box::new(inner),
    })
}

/// One block outside a network, standard or MoD per `rec.is_mod`.
pub fn standalone_block<E: Element>(rec: &BlockRecord, spec: &ArchSpec, seed: u64) -> Result<Box<dyn Module<E>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(if rec.is_mod {
        Box::new(build_mod_block::<E>(rec, spec, &mut rng)?)
    } else {
        Box::new(ConvStack::<E>::standard(rec, &mut rng)?)
    })
}

enum Head<E: Element> {
    Linear(Linear<E>),
    ConvLinear(ConvBn<E>, Linear<E>),
    Mlp([Linear<E>; 3]),
}

struct Stage<E: Element> {
    block: Box<dyn Module<E>>,
    pool_after: bool,
}

/// A planned network with initialized weights.
pub struct Network<E: Element> {
    pub plan: BlockPlan,
    stem: Vec<ConvBn<E>>,
    stages: Vec<Stage<E>>,
    head: Head<E>,
}

/// Builds the network for `plan`, drawing initial weights from `seed`.
pub fn build_model<E: Element>(plan: &BlockPlan, seed: u64) -> Result<Network<E>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = build_units(&plan.stem.convs, &mut rng)?;
    let mut stages = Vec::with_capacity(plan.blocks.len());
    for rec in &plan.blocks {
        let block: Box<dyn Module<E>> = if rec.is_mod {
            Box::new(build_mod_block(rec, &plan.spec, &mut rng)?)
        } else {
            Box::new(ConvStack::standard(rec, &mut rng)?)
        };
        stages.push(Stage {
            block,
            pool_after: rec.pool_after,
        });
    }
    let classes = plan.spec.classes;
    let head = match plan.head {
        HeadPlan::Linear { in_channels } => Head::Linear(Linear::new("fc", in_channels, classes, &mut rng)?),
        HeadPlan::ConvLinear { in_channels, hidden } => Head::ConvLinear(
            ConvBn::new(
                &ConvSpec::new("head", in_channels, hidden, 1, 1).act(Activation::Relu6),
                &mut rng,
            )?,
            Linear::new("fc", hidden, classes, &mut rng)?,
        ),
        HeadPlan::Mlp { in_channels, hidden } => Head::Mlp([
            Linear::new("fc1", in_channels, hidden, &mut rng)?,
            Linear::new("fc2", hidden, hidden, &mut rng)?,
            Linear::new("fc3", hidden, classes, &mut rng)?,
        ]),
    };
    Ok(Network {
        plan: plan.clone(),
        stem,
        stages,
        head,
    })
}

fn pooled<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let p = ops::adaptive_avg_pool_1x1(x).in_layer("avgpool")?;
    ops::flatten(&p).in_layer("avgpool")
}

impl<E: Element> Network<E> {
    pub fn name(&self) -> &str {
        &self.plan.spec.name
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        let s = self.plan.spec.input_size;
        [batch, 3, s, s]
    }

    /// Logits `[N, classes]` without recording a graph.
    pub fn predict(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let _guard = modcnn_tensor::NoGradGuard::new();
        self.forward(x, &mut ForwardCtx::eval())
    }
}

impl<E: Element> Module<E> for Network<E> {
    fn forward(&mut self, x: &Tensor<E>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor<E>> {
        let mut y = x.clone();
        for l in &mut self.stem {
            y = l.forward(&y, ctx.train)?;
        }
        if self.plan.stem.max_pool {
            y = ops::max_pool2d(&y, 3, 2, 1).in_layer("stem.pool")?;
        }
        for s in &mut self.stages {
            y = s.block.forward(&y, ctx)?;
            if s.pool_after {
                y = ops::max_pool2d(&y, 2, 2, 0).in_layer("pool")?;
            }
        }
        match &mut self.head {
            Head::Linear(fc) => fc.forward(&pooled(&y)?),
            Head::ConvLinear(conv, fc) => {
                let h = conv.forward(&y, ctx.train)?;
                fc.forward(&pooled(&h)?)
            }
            Head::Mlp([a, b, c]) => {
                let h = ops::relu(&a.forward(&pooled(&y)?)?);
                let h = ops::relu(&b.forward(&h)?);
                c.forward(&h)
            }
        }
    }

    fn visit(&mut self, v: &mut dyn Visitor<E>) {
        for l in &mut self.stem {
            l.visit(v);
        }
        for s in &mut self.stages {
            s.block.visit(v);
        }
        match &mut self.head {
            Head::Linear(fc) => fc.visit(v),
            Head::ConvLinear(conv, fc) => {
                conv.visit(v);
                fc.visit(v);
            }
            Head::Mlp(ls) => ls.iter_mut().for_each(|l| l.visit(v)),
        }
    }
}
