use modcnn_tensor::{ops, Element, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, LayerContext, Result};
use crate::nn::{Linear, Visitor};

pub const DEFAULT_RATIO: usize = 16;

/// Bottleneck width of the selector MLP.
pub fn hidden_width(channels: usize, ratio: usize) -> usize {
    (channels / ratio.max(1)).max(1)
}

/// Pooled two-layer MLP producing one importance score per channel.
pub struct ChannelSelector<E: Element> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
    channels: usize,
    name: String,
}

impl<E: Element> ChannelSelector<E> {
    pub fn new(name: &str, channels: usize, ratio: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if channels == 0 || ratio == 0 {
            return Err(Error::config(format!(
                "{name}: selector needs channels >= 1 and r >= 1 (got C={channels}, r={ratio})"
            )));
        }
        let hidden = hidden_width(channels, ratio);
        Ok(ChannelSelector {
            fc1: Linear::new(&format!("{name}.fc1"), channels, hidden, rng)?,
            fc2: Linear::new(&format!("{name}.fc2"), hidden, channels, rng)?,
            channels,
            name: name.to_string(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.fc1.weight.shape()[0]
    }

    /// `sigmoid(fc2(relu(fc1(avgpool(x)))))` as an `[N, C]` tensor.
    pub fn scores(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, c, _, _) = x.dims4("channel_selector").in_layer(&self.name)?;
        if c != self.channels {
            return Err(Error::Layer {
                layer: self.name.clone(),
                source: modcnn_tensor::TensorError::ShapeMismatch {
                    op: "channel_selector",
                    dim: "channels",
                    expected: self.channels,
                    got: c,
                },
            });
        }
        let pooled = ops::adaptive_avg_pool_1x1(x).in_layer(&self.name)?;
        let flat = ops::reshape(&pooled, &[n, c]).in_layer(&self.name)?;
        let h = ops::relu(&self.fc1.forward(&flat)?);
        Ok(ops::sigmoid(&self.fc2.forward(&h)?))
    }

    pub fn visit(&mut self, v: &mut dyn Visitor<E>) {
        self.fc1.visit(v);
        self.fc2.visit(v);
    }
}

/// Free-function form of [`ChannelSelector::scores`].
pub fn compute_scores<E: Element>(selector: &ChannelSelector<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    selector.scores(x)
}
